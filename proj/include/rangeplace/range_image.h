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

namespace rangeplace {

/// Spherical projection geometry. Angles are in radians.
struct ProjectionParams {
  std::size_t width = 900;
  std::size_t height = 64;
  double fov_up = 0.0;    // maximum elevation above the horizon
  double fov_down = 0.0;  // maximum depression below the horizon
  double min_range = 1e-3;

  double fov() const { return fov_up + fov_down; }

  /// Throws std::invalid_argument on an unusable geometry.
  void validate() const;

  bool operator==(const ProjectionParams&) const = default;
};

/// 64-beam defaults: +3 deg / -25 deg, 64 x 900.
ProjectionParams hdl64_params();

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<float> intensity;  // optional; same length as points when present

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

using RangeGrid = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// h x w grid of ranges in meters; 0 marks an invalid pixel.
struct RangeImage {
  ProjectionParams params;
  RangeGrid ranges;

  RangeImage() = default;
  explicit RangeImage(const ProjectionParams& p)
      : params(p),
        ranges(RangeGrid::Zero(static_cast<Eigen::Index>(p.height),
                               static_cast<Eigen::Index>(p.width))) {}

  std::size_t height() const { return static_cast<std::size_t>(ranges.rows()); }
  std::size_t width() const { return static_cast<std::size_t>(ranges.cols()); }
  std::size_t valid_count() const {
    return static_cast<std::size_t>((ranges.array() > 0.0f).count());
  }

  bool operator==(const RangeImage& other) const {
    return params == other.params && ranges.rows() == other.ranges.rows() &&
           ranges.cols() == other.ranges.cols() && ranges == other.ranges;
  }
};

struct PixelHit {
  std::size_t col = 0;
  std::size_t row = 0;
  double range = 0.0;
};

/// Maps a point to its pixel. Empty when the elevation falls outside the
/// vertical field of view or the point is closer than params.min_range.
/// Throws std::invalid_argument for the origin or a non-finite point.
std::optional<PixelHit> project_point(const Eigen::Vector3d& p, const ProjectionParams& params);

struct ProjectionStats {
  std::size_t total = 0;
  std::size_t projected = 0;      // landed on a pixel
  std::size_t outside_fov = 0;
  std::size_t too_close = 0;      // includes points at the origin
  std::size_t occluded = 0;       // landed on a pixel already holding a nearer range
};

/// Each pixel keeps the minimum range among the points landing on it.
RangeImage project_cloud(const PointCloud& cloud, const ProjectionParams& params,
                         ProjectionStats* stats = nullptr);

struct HorizontalPad {
  std::size_t total = 0;
  std::size_t left = 0;
  std::size_t right = 0;
};

/// Column padding needed so a kernel of width `kernel_width` sweeping with
/// `stride` covers the whole ring of `width` columns.
HorizontalPad circular_padding(std::size_t width, std::size_t kernel_width, std::size_t stride);

/// The ring-extended grid: last `left` columns, the image, first `right` columns.
RangeGrid circular_extend(const RangeImage& image, std::size_t kernel_width, std::size_t stride);

/// Column j of the result is column (j - k) mod w of the input.
template <typename Derived>
typename Derived::PlainObject shift_columns(const Eigen::DenseBase<Derived>& grid,
                                            std::ptrdiff_t k) {
  const Eigen::Index w = grid.cols();
  typename Derived::PlainObject out(grid.rows(), w);
  if (w == 0) return out;
  const Eigen::Index s = ((k % w) + w) % w;
  for (Eigen::Index j = 0; j < w; ++j) out.col((j + s) % w) = grid.col(j);
  return out;
}

RangeImage shift_columns(const RangeImage& image, std::ptrdiff_t k);

/// "RIM1" file: h, w (u32), fov_up, fov_down (f64), then h*w f32 ranges.
void write_range_image(const std::filesystem::path& path, const RangeImage& image);
RangeImage read_range_image(const std::filesystem::path& path);

}  // namespace rangeplace
