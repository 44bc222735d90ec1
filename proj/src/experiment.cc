/*
 * Copyright 2026 The Rangeplace Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "rangeplace/experiment.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace rangeplace {
namespace {

std::string scan_name(std::size_t id, const char* extension) {
  char name[32];
  std::snprintf(name, sizeof(name), "%06zu%s", id, extension);
  return name;
}

void write_meta(const std::filesystem::path& path, const std::vector<TrajectoryPose>& trajectory) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "# scan visit place\n";
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    out << i << ' ' << trajectory[i].visit << ' ' << trajectory[i].place << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<TrajectoryPose> read_meta(const std::filesystem::path& path,
                                      const std::vector<Pose>& poses) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<TrajectoryPose> trajectory;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::size_t scan = 0;
    TrajectoryPose t;
    std::string extra;
    if (!(fields >> scan >> t.visit >> t.place) || (fields >> extra) ||
        scan != trajectory.size() || scan >= poses.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected `scan visit place` in scan order");
    }
    t.pose = poses[scan];
    trajectory.push_back(t);
  }
  if (trajectory.size() != poses.size()) {
    throw std::runtime_error(path.string() + ": " + std::to_string(trajectory.size()) +
                             " entries for " + std::to_string(poses.size()) + " poses");
  }
  return trajectory;
}

}  // namespace

Sequence build_sequence(const Profile& profile) {
  Sequence s;
  const SyntheticWorld world = generate_world(profile.world);
  s.trajectory = world.trajectory;
  for (const auto& t : world.trajectory) {
    auto scan = synth_scan(world, t.pose, profile.projection, t.visit);
    s.clouds.push_back(std::move(scan.cloud));
    s.images.push_back(std::move(scan.image));
    s.poses.push_back(t.pose);
  }
  s.labels = label_sequence(s.clouds, s.poses, profile.projection, profile.overlap_delta,
                            profile.gate_radius);
  return s;
}

void write_sequence(const std::filesystem::path& dir, const Sequence& sequence) {
  std::filesystem::create_directories(dir / "velodyne");
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < sequence.clouds.size(); ++i) {
    write_scan_bin(dir / "velodyne" / scan_name(i, ".bin"), sequence.clouds[i]);
  }
  for (std::size_t i = 0; i < sequence.images.size(); ++i) {
    write_range_image(dir / "images" / scan_name(i, ".rim"), sequence.images[i]);
  }
  write_poses(dir / "poses.txt", sequence.poses);
  write_labels(dir / "labels.txt", sequence.labels);
  if (!sequence.trajectory.empty()) write_meta(dir / "meta.txt", sequence.trajectory);
}

Sequence read_sequence(const std::filesystem::path& dir, const Profile& profile,
                       bool recompute_labels) {
  if (!std::filesystem::is_directory(dir / "velodyne")) {
    throw std::runtime_error("no velodyne/ directory in " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "velodyne")) {
    if (entry.path().extension() == ".bin") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Sequence s;
  s.poses = read_poses(dir / "poses.txt");
  if (s.poses.size() != files.size()) {
    throw std::runtime_error(dir.string() + ": " + std::to_string(files.size()) + " scans but " +
                             std::to_string(s.poses.size()) + " poses");
  }
  for (const auto& file : files) {
    s.clouds.push_back(read_scan_bin(file));
    const auto cached = dir / "images" / (file.stem().string() + ".rim");
    RangeImage image;
    if (std::filesystem::exists(cached)) image = read_range_image(cached);
    if (image.params != profile.projection) image = project_cloud(s.clouds.back(), profile.projection);
    s.images.push_back(std::move(image));
  }
  s.labels = !recompute_labels && std::filesystem::exists(dir / "labels.txt")
                 ? read_labels(dir / "labels.txt")
                 : label_sequence(s.clouds, s.poses, profile.projection, profile.overlap_delta,
                                  profile.gate_radius);
  if (std::filesystem::exists(dir / "meta.txt")) s.trajectory = read_meta(dir / "meta.txt", s.poses);
  return s;
}

RevisitSplit revisit_split(const Sequence& sequence) {
  RevisitSplit split;
  if (sequence.trajectory.empty()) {
    for (std::size_t i = 0; i < sequence.images.size(); ++i) {
      split.database.push_back(i);
      split.train_queries.push_back(i);
      split.heldout_queries.push_back(i);
      split.train_ids.push_back(i);
    }
    return split;
  }
  for (std::size_t i = 0; i < sequence.trajectory.size(); ++i) {
    const auto& t = sequence.trajectory[i];
    if (t.visit == 0) {
      split.database.push_back(i);
      split.train_ids.push_back(i);
    } else if ((t.place / 2) % 2 == 0) {
      split.train_queries.push_back(i);
      split.train_ids.push_back(i);
    } else {
      split.heldout_queries.push_back(i);
    }
  }
  return split;
}

Dataset training_set(const Sequence& sequence, const RevisitSplit& split) {
  Dataset data;
  data.images = sequence.images;
  data.train_ids = split.train_ids;
  const std::unordered_set<std::uint64_t> allowed(split.train_ids.begin(), split.train_ids.end());
  for (const auto& label : sequence.labels) {
    if (allowed.count(label.query_id) && allowed.count(label.reference_id)) {
      data.labels.insert(label);
    }
  }
  return data;
}

GroundTruth ground_truth(const Sequence& sequence) {
  GroundTruth truth;
  truth.overlaps = LabelTable(sequence.labels);
  for (std::size_t i = 0; i < sequence.poses.size(); ++i) {
    truth.positions.emplace(i, sequence.poses[i].translation);
  }
  return truth;
}

}  // namespace rangeplace
