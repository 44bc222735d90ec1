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

#include "rangeplace/range_image.h"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "rangeplace/binary_io.h"

namespace rangeplace {

void ProjectionParams::validate() const {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("projection needs width >= 1 and height >= 1");
  }
  if (!(fov_up >= 0.0) || !(fov_down >= 0.0) || !(fov() > 0.0)) {
    throw std::invalid_argument("projection needs fov_up, fov_down >= 0 and fov > 0");
  }
  if (!(min_range >= 0.0)) throw std::invalid_argument("min_range must be >= 0");
}

ProjectionParams hdl64_params() {
  constexpr double kDeg = std::numbers::pi / 180.0;
  return {900, 64, 3.0 * kDeg, 25.0 * kDeg, 1e-3};
}

std::optional<PixelHit> project_point(const Eigen::Vector3d& p, const ProjectionParams& params) {
  if (!p.allFinite()) throw std::invalid_argument("point has non-finite coordinates");
  const double range = p.norm();
  if (range == 0.0) throw std::invalid_argument("point at the origin has no elevation");
  if (range < params.min_range) return std::nullopt;

  const double w = static_cast<double>(params.width);
  const double h = static_cast<double>(params.height);
  const double u = std::floor(0.5 * w * (1.0 - std::atan2(p.y(), p.x()) / std::numbers::pi));
  const double v = std::floor(h * (1.0 - (std::asin(p.z() / range) + params.fov_up) / params.fov()));
  if (v < 0.0 || v > h - 1.0) return std::nullopt;

  // atan2 = -pi lands on u = w, which is column 0 on the ring.
  const auto col = static_cast<std::size_t>(std::fmod(u, w));
  return PixelHit{col, static_cast<std::size_t>(v), range};
}

RangeImage project_cloud(const PointCloud& cloud, const ProjectionParams& params,
                         ProjectionStats* stats) {
  params.validate();
  RangeImage image(params);
  ProjectionStats local;
  local.total = cloud.size();
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) throw std::invalid_argument("point cloud contains non-finite points");
    if (p.squaredNorm() == 0.0) {
      ++local.too_close;
      continue;
    }
    const auto hit = project_point(p, params);
    if (!hit) {
      if (p.norm() < params.min_range) {
        ++local.too_close;
      } else {
        ++local.outside_fov;
      }
      continue;
    }
    ++local.projected;
    float& pixel = image.ranges(static_cast<Eigen::Index>(hit->row),
                                static_cast<Eigen::Index>(hit->col));
    const auto r = static_cast<float>(hit->range);
    if (pixel == 0.0f || r < pixel) {
      if (pixel != 0.0f) ++local.occluded;
      pixel = r;
    } else {
      ++local.occluded;
    }
  }
  if (stats) *stats = local;
  return image;
}

HorizontalPad circular_padding(std::size_t width, std::size_t kernel_width, std::size_t stride) {
  if (kernel_width < 1 || stride < 1) {
    throw std::invalid_argument("kernel width and stride must be >= 1");
  }
  const auto kw = static_cast<std::ptrdiff_t>(kernel_width);
  const std::size_t rem = width % stride;
  const std::ptrdiff_t step = rem == 0 ? static_cast<std::ptrdiff_t>(stride)
                                       : static_cast<std::ptrdiff_t>(rem);
  HorizontalPad pad;
  pad.total = static_cast<std::size_t>(std::max<std::ptrdiff_t>(kw - step, 0));
  pad.left = pad.total / 2;
  pad.right = pad.total - pad.left;
  return pad;
}

RangeGrid circular_extend(const RangeImage& image, std::size_t kernel_width, std::size_t stride) {
  const HorizontalPad pad = circular_padding(image.width(), kernel_width, stride);
  const auto w = static_cast<Eigen::Index>(image.width());
  const auto left = static_cast<Eigen::Index>(pad.left);
  const auto right = static_cast<Eigen::Index>(pad.right);
  RangeGrid out(image.ranges.rows(), w + left + right);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const Eigen::Index src = (((j - left) % w) + w) % w;
    out.col(j) = image.ranges.col(src);
  }
  return out;
}

RangeImage shift_columns(const RangeImage& image, std::ptrdiff_t k) {
  RangeImage out;
  out.params = image.params;
  out.ranges = shift_columns(image.ranges, k);
  return out;
}

void write_range_image(const std::filesystem::path& path, const RangeImage& image) {
  BinaryWriter out(path);
  out.magic("RIM1");
  out.u32(static_cast<std::uint32_t>(image.height()));
  out.u32(static_cast<std::uint32_t>(image.width()));
  out.f64(image.params.fov_up);
  out.f64(image.params.fov_down);
  for (Eigen::Index i = 0; i < image.ranges.size(); ++i) out.f32(image.ranges.data()[i]);
  out.close();
}

RangeImage read_range_image(const std::filesystem::path& path) {
  BinaryReader in(path);
  in.expect_magic("RIM1");
  ProjectionParams params;
  params.height = in.u32();
  params.width = in.u32();
  params.fov_up = in.f64();
  params.fov_down = in.f64();
  params.validate();
  RangeImage image(params);
  for (Eigen::Index i = 0; i < image.ranges.size(); ++i) {
    const float r = in.f32();
    if (!std::isfinite(r) || r < 0.0f) {
      throw std::runtime_error(path.string() + ": invalid range value at pixel " +
                               std::to_string(i));
    }
    image.ranges.data()[i] = r;
  }
  if (!in.at_end()) throw std::runtime_error(path.string() + ": trailing bytes");
  return image;
}

}  // namespace rangeplace
