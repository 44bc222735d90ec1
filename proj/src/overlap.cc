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

#include "rangeplace/overlap.h"

#include "rangeplace/config.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace rangeplace {

RangeImage reproject(const PointCloud& reference_cloud, const Pose& query_pose,
                     const Pose& reference_pose, const ProjectionParams& params) {
  query_pose.validate();
  reference_pose.validate();
  // Identical poses skip the transform so a scan reprojects onto itself exactly.
  if (query_pose == reference_pose) return project_cloud(reference_cloud, params);

  const Pose query_from_reference = query_pose.inverse() * reference_pose;
  PointCloud moved;
  moved.points.reserve(reference_cloud.size());
  for (const auto& p : reference_cloud.points) moved.points.push_back(query_from_reference * p);
  return project_cloud(moved, params);
}

double overlap(const RangeImage& query, const RangeImage& reprojected, double delta) {
  if (query.height() != reprojected.height() || query.width() != reprojected.width()) {
    throw std::invalid_argument("overlap needs images of equal size");
  }
  const auto q = query.ranges.array().cast<double>();
  const auto r = reprojected.ranges.array().cast<double>();
  const auto both_valid = (q > 0.0) && (r > 0.0);
  const auto agree = ((q - r).abs() <= delta);
  const auto numerator = static_cast<double>((both_valid && agree).count());
  const std::size_t valid_q = query.valid_count();
  const std::size_t valid_r = reprojected.valid_count();
  if (valid_q == 0 && valid_r == 0) {
    throw std::invalid_argument("overlap undefined: both images are fully invalid");
  }
  const std::size_t denominator = std::min(valid_q, valid_r);
  if (denominator == 0) return 0.0;
  return numerator / static_cast<double>(denominator);
}

std::vector<OverlapLabel> label_sequence(const std::vector<PointCloud>& scans,
                                         const std::vector<Pose>& poses,
                                         const ProjectionParams& params, double delta,
                                         double gate_radius) {
  if (scans.size() != poses.size()) {
    throw std::invalid_argument("label_sequence: " + std::to_string(scans.size()) +
                                " scans but " + std::to_string(poses.size()) + " poses");
  }
  std::vector<RangeImage> images;
  images.reserve(scans.size());
  for (const auto& scan : scans) images.push_back(project_cloud(scan, params));

  std::vector<OverlapLabel> labels;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    for (std::size_t j = 0; j < scans.size(); ++j) {
      if ((poses[i].translation - poses[j].translation).norm() > gate_radius) continue;
      double value = 0.0;
      if (i == j) {
        value = 1.0;
      } else {
        const RangeImage moved = reproject(scans[j], poses[i], poses[j], params);
        if (images[i].valid_count() > 0 || moved.valid_count() > 0) {
          value = overlap(images[i], moved, delta);
        }
      }
      labels.push_back({i, j, value});
    }
  }
  return labels;
}

LabelTable::LabelTable(const std::vector<OverlapLabel>& labels) {
  for (const auto& label : labels) insert(label);
}

void LabelTable::insert(const OverlapLabel& label) {
  if (!(label.overlap >= 0.0 && label.overlap <= 1.0)) {
    throw std::invalid_argument("overlap label outside [0,1]");
  }
  table_[{label.query_id, label.reference_id}] = label.overlap;
}

double LabelTable::lookup(std::uint64_t query_id, std::uint64_t reference_id) const {
  const auto it = table_.find({query_id, reference_id});
  return it == table_.end() ? 0.0 : it->second;
}

bool LabelTable::contains(std::uint64_t query_id, std::uint64_t reference_id) const {
  return table_.count({query_id, reference_id}) > 0;
}

std::vector<std::uint64_t> LabelTable::neighbors(std::uint64_t query_id) const {
  std::vector<std::uint64_t> out;
  for (auto it = table_.lower_bound({query_id, 0});
       it != table_.end() && it->first.first == query_id; ++it) {
    out.push_back(it->first.second);
  }
  return out;
}

std::vector<std::uint64_t> LabelTable::query_ids() const {
  std::vector<std::uint64_t> out;
  for (const auto& [key, value] : table_) {
    if (out.empty() || out.back() != key.first) out.push_back(key.first);
  }
  return out;
}

std::vector<OverlapLabel> LabelTable::labels() const {
  std::vector<OverlapLabel> out;
  out.reserve(table_.size());
  for (const auto& [key, value] : table_) out.push_back({key.first, key.second, value});
  return out;
}

void write_labels(const std::filesystem::path& path, const std::vector<OverlapLabel>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "# query_id reference_id overlap\n";
  for (const auto& label : labels) {
    out << label.query_id << ' ' << label.reference_id << ' ' << format_double(label.overlap)
        << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<OverlapLabel> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<OverlapLabel> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    OverlapLabel label;
    std::string extra;
    if (!(fields >> label.query_id >> label.reference_id >> label.overlap) || (fields >> extra)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected `query_id reference_id overlap`");
    }
    if (!(label.overlap >= 0.0 && label.overlap <= 1.0)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": overlap outside [0,1]");
    }
    labels.push_back(label);
  }
  return labels;
}

}  // namespace rangeplace
