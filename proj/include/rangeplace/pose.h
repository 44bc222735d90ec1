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
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace rangeplace {

/// Rigid transform taking sensor-frame points into the world frame.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose from_yaw(double yaw, const Eigen::Vector3d& translation) {
    Pose pose;
    pose.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    pose.translation = translation;
    return pose;
  }

  /// Throws std::invalid_argument unless the rotation is orthonormal with
  /// determinant +1 to within `tolerance`.
  void validate(double tolerance = 1e-6) const {
    if (!rotation.allFinite() || !translation.allFinite()) {
      throw std::invalid_argument("pose has non-finite entries");
    }
    const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity())
                             .cwiseAbs()
                             .maxCoeff();
    if (ortho > tolerance || std::abs(rotation.determinant() - 1.0) > tolerance) {
      throw std::invalid_argument("pose rotation is not orthonormal (error " +
                                  std::to_string(ortho) + ")");
    }
  }

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  Pose operator*(const Pose& rhs) const {
    Pose out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  bool operator==(const Pose& other) const {
    return rotation == other.rotation && translation == other.translation;
  }
};

}  // namespace rangeplace
