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

#include "rangeplace/dataio.h"

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "rangeplace/overlap.h"
#include "test_util.h"

namespace rangeplace {
namespace {

ProjectionParams desk_params() {
  ProjectionParams p = hdl64_params();
  p.height = 16;
  p.width = 90;
  return p;
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TEST(ScanFile, SingleRecord) {
  const auto dir = testing::scratch_dir("scan");
  const float record[4] = {1.0f, 0.0f, 0.0f, 0.5f};
  write_bytes(dir / "a.bin", std::string(reinterpret_cast<const char*>(record), 16));
  const auto cloud = read_scan_bin(dir / "a.bin");
  ASSERT_EQ(cloud.size(), 1u);
  EXPECT_EQ(cloud.points[0], Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(cloud.intensity[0], 0.5f);
}

TEST(ScanFile, EmptyAndTruncated) {
  const auto dir = testing::scratch_dir("scan_edge");
  write_bytes(dir / "empty.bin", "");
  EXPECT_TRUE(read_scan_bin(dir / "empty.bin").empty());
  write_bytes(dir / "odd.bin", std::string(17, '\0'));
  try {
    read_scan_bin(dir / "odd.bin");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("offset 16"), std::string::npos) << e.what();
  }
}

TEST(ScanFile, RoundTrip) {
  const auto dir = testing::scratch_dir("scan_rt");
  PointCloud cloud;
  cloud.points = {{1.5, -2.25, 0.125}, {10, 20, -1}};
  cloud.intensity = {0.25f, 0.75f};
  write_scan_bin(dir / "a.bin", cloud);
  const auto back = read_scan_bin(dir / "a.bin");
  EXPECT_EQ(back.points, cloud.points);
  EXPECT_EQ(back.intensity, cloud.intensity);
}

TEST(PoseFile, IdentityLine) {
  const auto dir = testing::scratch_dir("poses");
  write_bytes(dir / "p.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n");
  const auto poses = read_poses(dir / "p.txt");
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0], Pose{});
}

TEST(PoseFile, ShortLineNamesItsNumber) {
  const auto dir = testing::scratch_dir("poses_bad");
  write_bytes(dir / "p.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n");
  try {
    read_poses(dir / "p.txt");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("p.txt:2:"), std::string::npos) << e.what();
  }
  write_bytes(dir / "q.txt", "2 0 0 0 0 1 0 0 0 0 1 0\n");
  EXPECT_THROW(read_poses(dir / "q.txt"), std::runtime_error);
}

TEST(PoseFile, SnapsNearlyOrthonormalRotations) {
  const auto dir = testing::scratch_dir("poses_snap");
  write_bytes(dir / "p.txt", "1.00002 0 0 0 0 1 0 0 0 0 1 0\n");
  const auto poses = read_poses(dir / "p.txt");
  EXPECT_NO_THROW(poses[0].validate(1e-12));
}

TEST(PoseFile, RoundTrip) {
  const auto dir = testing::scratch_dir("poses_rt");
  const auto world = generate_world(WorldSpec{});
  std::vector<Pose> poses;
  for (const auto& t : world.trajectory) poses.push_back(t.pose);
  write_poses(dir / "p.txt", poses);
  EXPECT_EQ(read_poses(dir / "p.txt"), poses);
}

TEST(Primitive, SphereAheadOfTheSensor) {
  SyntheticWorld world;
  world.ground = false;
  Primitive sphere;
  sphere.kind = Primitive::Kind::kSphere;
  sphere.center = {5, 0, 0};
  sphere.half_size = {1, 1, 1};
  world.statics.push_back(sphere);
  const auto params = hdl64_params();
  const auto scan = synth_scan(world, Pose{}, params, 0);
  // Ray through the pixel centre nearest the +x axis, intersected analytically.
  const double az = std::numbers::pi * (1.0 - 2.0 * 450.5 / 900.0);
  const double el = (1.0 - 57.5 / 64.0) * params.fov() - params.fov_up;
  const Eigen::Vector3d d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  const double b = d.dot(sphere.center);
  const double t = b - std::sqrt(b * b - (sphere.center.squaredNorm() - 1.0));
  EXPECT_EQ(scan.image.ranges(57, 450), static_cast<float>(t));
  EXPECT_NEAR(scan.image.ranges(57, 450), 4.0, 1e-3);
}

TEST(Primitive, RaysFromInsideDoNotHit) {
  Primitive box;
  box.half_size = {1, 1, 1};
  EXPECT_FALSE(box.intersect({0, 0, 0}, {1, 0, 0}));
  EXPECT_NEAR(*box.intersect({-5, 0, 0}, {1, 0, 0}), 4.0, 1e-12);
  Primitive cyl;
  cyl.kind = Primitive::Kind::kCylinder;
  cyl.center = {0, 0, 2};
  cyl.half_size = {1, 1, 2};
  EXPECT_NEAR(*cyl.intersect({0, 0, 10}, {0, 0, -1}), 6.0, 1e-12);
  EXPECT_NEAR(*cyl.intersect({-3, 0, 1}, {1, 0, 0}), 2.0, 1e-12);
  EXPECT_FALSE(cyl.intersect({-3, 0, 5}, {1, 0, 0}));
}

TEST(SynthScan, EmptyWorldIsAllInvalid) {
  SyntheticWorld world;
  world.ground = false;
  EXPECT_EQ(synth_scan(world, Pose{}, desk_params(), 0).image.valid_count(), 0u);
}

TEST(SynthScan, GroundOnlyMatchesPlaneDistance) {
  auto spec = WorldSpec{};
  spec.static_count = 0;
  spec.movable_count = 0;
  const auto world = generate_world(spec);
  EXPECT_TRUE(world.statics.empty());
  EXPECT_TRUE(world.movables.empty());
  const auto params = desk_params();
  const auto scan = synth_scan(world, world.trajectory[0].pose, params, 0);
  for (std::size_t r = 0; r < params.height; ++r) {
    const double el = (1.0 - (r + 0.5) / params.height) * params.fov() - params.fov_up;
    const double expected = el < 0.0 ? spec.sensor_height / std::sin(-el) : 0.0;
    for (std::size_t c = 0; c < params.width; ++c) {
      const float got = scan.image.ranges(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (expected == 0.0 || expected > spec.max_range) {
        EXPECT_EQ(got, 0.0f);
      } else {
        EXPECT_NEAR(got, expected, 1e-9 * expected + 1e-6);
      }
    }
  }
}

TEST(SynthScan, CloudReprojectsToTheImage) {
  const auto world = generate_world(WorldSpec{});
  const auto params = desk_params();
  for (std::size_t i = 0; i < world.trajectory.size(); i += 13) {
    const auto& t = world.trajectory[i];
    const auto scan = synth_scan(world, t.pose, params, t.visit);
    EXPECT_EQ(project_cloud(scan.cloud, params), scan.image);
    EXPECT_EQ(scan.cloud.size(), scan.image.valid_count());
  }
}

// Independent slab test against a yawed box.
bool ray_hits_box(const Primitive& box, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Eigen::Vector3d rel = origin - box.center;
  const Eigen::Vector3d o(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
  const Eigen::Vector3d d(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (std::abs(o[a]) > box.half_size[a]) return false;
      continue;
    }
    double t0 = (-box.half_size[a] - o[a]) / d[a], t1 = (box.half_size[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  return lo <= hi;
}

TEST(SynthScan, MovableChangesStayInsideTheirFootprint) {
  WorldSpec spec;
  spec.movable_count = 4;
  spec.seed = 5;
  auto world = generate_world(spec);
  ASSERT_FALSE(world.movables.empty());
  const auto params = desk_params();
  std::size_t changed_total = 0;
  for (std::size_t m = 0; m < world.movables.size(); ++m) {
    SyntheticWorld off = world, on = world;
    for (auto& mv : off.movables) mv.present = {false};
    for (auto& mv : on.movables) mv.present = {false};
    on.movables[m].present = {true};
    const Primitive& car = world.movables[m].shape;
    // The pose nearest the car sees it.
    const TrajectoryPose* nearest = &world.trajectory[0];
    for (const auto& t : world.trajectory) {
      if ((t.pose.translation - car.center).norm() <
          (nearest->pose.translation - car.center).norm()) {
        nearest = &t;
      }
    }
    const auto a = synth_scan(off, nearest->pose, params, 0).image;
    const auto b = synth_scan(on, nearest->pose, params, 0).image;
    for (std::size_t r = 0; r < params.height; ++r) {
      for (std::size_t c = 0; c < params.width; ++c) {
        const auto rr = static_cast<Eigen::Index>(r), cc = static_cast<Eigen::Index>(c);
        if (a.ranges(rr, cc) == b.ranges(rr, cc)) continue;
        ++changed_total;
        const Eigen::Vector3d dir = nearest->pose.rotation * pixel_ray(r, c, params);
        EXPECT_TRUE(ray_hits_box(car, nearest->pose.translation, dir)) << "pixel " << r << "," << c;
      }
    }
  }
  EXPECT_GT(changed_total, 0u);
}

TEST(World, SeedDeterminesEverything) {
  WorldSpec spec;
  spec.seed = 11;
  EXPECT_EQ(generate_world(spec), generate_world(spec));
  auto other = spec;
  other.seed = 12;
  EXPECT_FALSE(generate_world(spec) == generate_world(other));
}

TEST(World, TrajectoryHasAnnotatedRevisits) {
  const WorldSpec spec;
  const auto world = generate_world(spec);
  ASSERT_EQ(world.trajectory.size(), spec.loop_poses * (1 + spec.revisit_passes));
  for (std::size_t i = 0; i < spec.loop_poses; ++i) {
    const auto& first = world.trajectory[i];
    const auto& again = world.trajectory[spec.loop_poses + i];
    EXPECT_EQ(first.visit, 0u);
    EXPECT_EQ(again.visit, 1u);
    EXPECT_EQ(again.place, i);
    EXPECT_EQ((first.pose.translation - again.pose.translation).norm(), 0.0);
  }
  for (const auto& m : world.movables) EXPECT_NE(m.present[0], m.present[1]);
}

TEST(World, StaticRevisitsOverlapAlmostFully) {
  WorldSpec spec;
  spec.movable_count = 0;
  const auto world = generate_world(spec);
  // Full angular resolution, so the revisit yaw jitter only disturbs depth edges.
  const auto params = hdl64_params();
  for (std::size_t i = 0; i < spec.loop_poses; i += 7) {
    const auto& a = world.trajectory[i];
    const auto& b = world.trajectory[spec.loop_poses + i];
    const auto qa = synth_scan(world, a.pose, params, a.visit);
    const auto qb = synth_scan(world, b.pose, params, b.visit);
    const double value = overlap(qa.image, reproject(qb.cloud, a.pose, b.pose, params), 1.0);
    EXPECT_GT(value, 0.9) << "place " << i;
  }
}

TEST(WorldSpec, ConfigRoundTrip) {
  WorldSpec spec;
  spec.static_count = 3;
  spec.revisit_offset = 0.75;
  spec.reverse_revisits = false;
  spec.seed = 99;
  const auto back = WorldSpec::from_config(KeyValueConfig::parse(spec.to_config().to_string()));
  EXPECT_EQ(back.to_config().to_string(), spec.to_config().to_string());
}

}  // namespace
}  // namespace rangeplace
