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

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "rangeplace/config.h"
#include "rangeplace/pose.h"
#include "rangeplace/range_image.h"

namespace rangeplace {

// ---------------------------------------------------------------------------
// KITTI conventions

/// Velodyne .bin: consecutive little-endian f32 (x, y, z, intensity).
PointCloud read_scan_bin(const std::filesystem::path& path);
void write_scan_bin(const std::filesystem::path& path, const PointCloud& cloud);

/// One row-major 3x4 [R|t] per line. Rotations within 1e-4 of orthonormal
/// are snapped to the nearest rotation; anything worse is an error.
std::vector<Pose> read_poses(const std::filesystem::path& path);
void write_poses(const std::filesystem::path& path, const std::vector<Pose>& poses);

/// Nearest rotation (SVD projection). Throws when the input deviates from
/// orthonormal by more than `tolerance`.
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m, double tolerance);

// ---------------------------------------------------------------------------
// Synthetic worlds

struct Primitive {
  enum class Kind { kBox, kCylinder, kSphere };
  Kind kind = Kind::kBox;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  // Box: half extents along its own axes. Cylinder: (radius, radius,
  // half height). Sphere: (radius, radius, radius).
  Eigen::Vector3d half_size = Eigen::Vector3d::Ones();
  double yaw = 0.0;  // boxes only

  /// Distance along the unit ray to the first hit in front of the origin.
  std::optional<double> intersect(const Eigen::Vector3d& origin,
                                  const Eigen::Vector3d& direction) const;

  bool operator==(const Primitive&) const = default;
};

struct MovablePrimitive {
  Primitive shape;
  std::vector<bool> present;  // indexed by visit

  bool present_in(std::size_t visit) const {
    return visit < present.size() && present[visit];
  }

  bool operator==(const MovablePrimitive&) const = default;
};

struct TrajectoryPose {
  Pose pose;
  std::size_t visit = 0;
  std::size_t place = 0;  // index of the first-pass pose this one revisits

  bool operator==(const TrajectoryPose&) const = default;
};

struct SyntheticWorld {
  bool ground = true;  // plane z = 0
  std::vector<Primitive> statics;
  std::vector<MovablePrimitive> movables;
  std::vector<TrajectoryPose> trajectory;
  double max_range = 60.0;
  std::uint64_t seed = 0;

  bool operator==(const SyntheticWorld&) const = default;
};

struct WorldSpec {
  std::size_t static_count = 12;
  std::size_t movable_count = 4;
  std::size_t loop_poses = 60;     // first-pass poses around a closed loop
  std::size_t revisit_passes = 1;  // each pass re-drives every place
  double loop_radius = 20.0;
  double loop_aspect = 1.5;        // loop is an ellipse with this x:y ratio
  double clearance = 3.0;          // free corridor around the path
  double scatter = 18.0;           // how far beyond the corridor statics may sit
  double sensor_height = 1.73;
  double max_range = 60.0;
  double revisit_offset = 0.0;     // lateral displacement of revisits (meters)
  bool reverse_revisits = true;    // alternate revisits drive the opposite way
  std::uint64_t seed = 0;

  KeyValueConfig to_config() const;
  static WorldSpec from_config(const KeyValueConfig& config, WorldSpec defaults);
  static WorldSpec from_config(const KeyValueConfig& config);
};

inline WorldSpec WorldSpec::from_config(const KeyValueConfig& config) {
  return from_config(config, WorldSpec{});
}

SyntheticWorld generate_world(const WorldSpec& spec);

struct SynthScan {
  PointCloud cloud;
  RangeImage image;
};

/// One ray per pixel centre; each ray keeps its nearest hit within range.
SynthScan synth_scan(const SyntheticWorld& world, const Pose& pose,
                     const ProjectionParams& params, std::size_t visit);

/// Unit ray (sensor frame) through the centre of pixel (row, col).
Eigen::Vector3d pixel_ray(std::size_t row, std::size_t col, const ProjectionParams& params);

}  // namespace rangeplace
