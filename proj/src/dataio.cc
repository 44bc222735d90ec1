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
#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "rangeplace/binary_io.h"

namespace rangeplace {

// ---------------------------------------------------------------------------
// KITTI files

PointCloud read_scan_bin(const std::filesystem::path& path) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) throw std::runtime_error("cannot stat scan: " + path.string());
  if (bytes % 16 != 0) {
    throw std::runtime_error(path.string() + ": length " + std::to_string(bytes) +
                             " is not a multiple of 16; truncated record at byte offset " +
                             std::to_string(bytes - bytes % 16));
  }
  BinaryReader in(path);
  PointCloud cloud;
  const std::size_t n = bytes / 16;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = in.f32();
    const double y = in.f32();
    const double z = in.f32();
    cloud.points.emplace_back(x, y, z);
    cloud.intensity.push_back(in.f32());
  }
  return cloud;
}

void write_scan_bin(const std::filesystem::path& path, const PointCloud& cloud) {
  BinaryWriter out(path);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out.f32(static_cast<float>(p.x()));
    out.f32(static_cast<float>(p.y()));
    out.f32(static_cast<float>(p.z()));
    out.f32(i < cloud.intensity.size() ? cloud.intensity[i] : 0.0f);
  }
  out.close();
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m, double tolerance) {
  const double error = (m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(error <= tolerance) || m.determinant() <= 0.0) {
    throw std::invalid_argument("rotation deviates from orthonormal by " +
                                std::to_string(error));
  }
  // Already orthonormal to rounding: keep the exact bits.
  if (error <= 1e-12) return m;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

std::vector<Pose> read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open poses: " + path.string());
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    double v[12];
    std::size_t n = 0;
    double extra = 0.0;
    while (n < 12 && fields >> v[n]) ++n;
    const bool too_many = n == 12 && static_cast<bool>(fields >> extra);
    if (n != 12 || too_many || !fields.eof()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 12 numbers per pose line");
    }
    Pose pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = v[r * 4 + c];
      pose.translation(r) = v[r * 4 + 3];
    }
    try {
      pose.rotation = nearest_rotation(pose.rotation, 1e-4);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    poses.push_back(pose);
  }
  return poses;
}

void write_poses(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& pose : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double v = c < 3 ? pose.rotation(r, c) : pose.translation(r);
        if (r || c) out << ' ';
        out << format_double(v);
      }
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Ray casting

namespace {

constexpr double kHitEpsilon = 1e-9;

// Entry distance of a ray against an [a, b] span. A span that starts behind
// the origin means the origin is inside (or past) the solid: no hit.
std::optional<double> nearest_positive(double a, double b) {
  const double lo = std::min(a, b);
  if (lo > kHitEpsilon) return lo;
  return std::nullopt;
}

}  // namespace

std::optional<double> Primitive::intersect(const Eigen::Vector3d& origin,
                                           const Eigen::Vector3d& direction) const {
  switch (kind) {
    case Kind::kSphere: {
      const double r = half_size.x();
      const Eigen::Vector3d oc = origin - center;
      const double b = oc.dot(direction);
      const double c = oc.squaredNorm() - r * r;
      const double disc = b * b - c;
      if (disc < 0.0) return std::nullopt;
      const double s = std::sqrt(disc);
      return nearest_positive(-b - s, -b + s);
    }
    case Kind::kBox: {
      const Eigen::Matrix3d to_local =
          Eigen::AngleAxisd(-yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
      const Eigen::Vector3d o = to_local * (origin - center);
      const Eigen::Vector3d d = to_local * direction;
      double t_enter = -std::numeric_limits<double>::infinity();
      double t_exit = std::numeric_limits<double>::infinity();
      for (int axis = 0; axis < 3; ++axis) {
        if (std::abs(d[axis]) < 1e-15) {
          if (std::abs(o[axis]) > half_size[axis]) return std::nullopt;
          continue;
        }
        double t0 = (-half_size[axis] - o[axis]) / d[axis];
        double t1 = (half_size[axis] - o[axis]) / d[axis];
        if (t0 > t1) std::swap(t0, t1);
        t_enter = std::max(t_enter, t0);
        t_exit = std::min(t_exit, t1);
        if (t_enter > t_exit) return std::nullopt;
      }
      return nearest_positive(t_enter, t_exit);
    }
    case Kind::kCylinder: {
      const double r = half_size.x();
      const double z_lo = center.z() - half_size.z();
      const double z_hi = center.z() + half_size.z();
      std::optional<double> best;
      const auto consider = [&best](double t) {
        if (t > kHitEpsilon && (!best || t < *best)) best = t;
      };
      const Eigen::Vector2d o(origin.x() - center.x(), origin.y() - center.y());
      const Eigen::Vector2d d(direction.x(), direction.y());
      if (o.squaredNorm() <= r * r && origin.z() >= z_lo && origin.z() <= z_hi) {
        return std::nullopt;  // origin inside
      }
      const double a = d.squaredNorm();
      if (a > 1e-18) {
        const double b = o.dot(d);
        const double c = o.squaredNorm() - r * r;
        const double disc = b * b - a * c;
        if (disc >= 0.0) {
          const double s = std::sqrt(disc);
          for (double t : {(-b - s) / a, (-b + s) / a}) {
            const double z = origin.z() + t * direction.z();
            if (z >= z_lo && z <= z_hi) consider(t);
          }
        }
      }
      if (std::abs(direction.z()) > 1e-15) {
        for (double zc : {z_lo, z_hi}) {
          const double t = (zc - origin.z()) / direction.z();
          const Eigen::Vector2d p = o + t * d;
          if (p.squaredNorm() <= r * r) consider(t);
        }
      }
      return best;
    }
  }
  return std::nullopt;
}

Eigen::Vector3d pixel_ray(std::size_t row, std::size_t col, const ProjectionParams& params) {
  const double azimuth =
      std::numbers::pi *
      (1.0 - 2.0 * (static_cast<double>(col) + 0.5) / static_cast<double>(params.width));
  const double elevation =
      (1.0 - (static_cast<double>(row) + 0.5) / static_cast<double>(params.height)) *
          params.fov() -
      params.fov_up;
  return {std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
          std::sin(elevation)};
}

SynthScan synth_scan(const SyntheticWorld& world, const Pose& pose,
                     const ProjectionParams& params, std::size_t visit) {
  params.validate();
  pose.validate(1e-6);
  SynthScan scan{PointCloud{}, RangeImage(params)};
  for (std::size_t row = 0; row < params.height; ++row) {
    for (std::size_t col = 0; col < params.width; ++col) {
      const Eigen::Vector3d ray = pixel_ray(row, col, params);
      const Eigen::Vector3d dir = pose.rotation * ray;
      const Eigen::Vector3d& origin = pose.translation;
      double best = world.max_range;
      bool hit = false;
      const auto consider = [&](std::optional<double> t) {
        if (t && *t <= best) {
          best = *t;
          hit = true;
        }
      };
      if (world.ground && dir.z() < 0.0 && origin.z() > 0.0) consider(-origin.z() / dir.z());
      for (const auto& p : world.statics) consider(p.intersect(origin, dir));
      for (const auto& m : world.movables) {
        if (m.present_in(visit)) consider(m.shape.intersect(origin, dir));
      }
      if (!hit || best < params.min_range) continue;
      const Eigen::Vector3d point = best * ray;
      scan.cloud.points.push_back(point);
      scan.image.ranges(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) =
          static_cast<float>(point.norm());
    }
  }
  scan.cloud.intensity.assign(scan.cloud.size(), 0.0f);
  return scan;
}

// ---------------------------------------------------------------------------
// World generation

KeyValueConfig WorldSpec::to_config() const {
  KeyValueConfig c;
  c.set("world.static_count", std::to_string(static_count));
  c.set("world.movable_count", std::to_string(movable_count));
  c.set("world.loop_poses", std::to_string(loop_poses));
  c.set("world.revisit_passes", std::to_string(revisit_passes));
  c.set("world.loop_radius", format_double(loop_radius));
  c.set("world.loop_aspect", format_double(loop_aspect));
  c.set("world.clearance", format_double(clearance));
  c.set("world.scatter", format_double(scatter));
  c.set("world.sensor_height", format_double(sensor_height));
  c.set("world.max_range", format_double(max_range));
  c.set("world.revisit_offset", format_double(revisit_offset));
  c.set("world.reverse_revisits", reverse_revisits ? "true" : "false");
  c.set("world.seed", std::to_string(seed));
  return c;
}

WorldSpec WorldSpec::from_config(const KeyValueConfig& c, WorldSpec s) {
  if (c.has("world.static_count")) s.static_count = c.get_uint("world.static_count");
  if (c.has("world.movable_count")) s.movable_count = c.get_uint("world.movable_count");
  if (c.has("world.loop_poses")) s.loop_poses = c.get_uint("world.loop_poses");
  if (c.has("world.revisit_passes")) s.revisit_passes = c.get_uint("world.revisit_passes");
  if (c.has("world.loop_radius")) s.loop_radius = c.get_double("world.loop_radius");
  if (c.has("world.loop_aspect")) s.loop_aspect = c.get_double("world.loop_aspect");
  if (c.has("world.clearance")) s.clearance = c.get_double("world.clearance");
  if (c.has("world.scatter")) s.scatter = c.get_double("world.scatter");
  if (c.has("world.sensor_height")) s.sensor_height = c.get_double("world.sensor_height");
  if (c.has("world.max_range")) s.max_range = c.get_double("world.max_range");
  if (c.has("world.revisit_offset")) s.revisit_offset = c.get_double("world.revisit_offset");
  if (c.has("world.reverse_revisits")) s.reverse_revisits = c.get_bool("world.reverse_revisits");
  if (c.has("world.seed")) s.seed = c.get_uint("world.seed");
  if (s.loop_poses == 0) throw std::invalid_argument("world.loop_poses must be >= 1");
  return s;
}

namespace {

struct LoopPath {
  double a, b, height;

  Eigen::Vector3d point(double phi) const {
    return {a * std::cos(phi), b * std::sin(phi), height};
  }
  double heading(double phi) const { return std::atan2(b * std::cos(phi), -a * std::sin(phi)); }
  Eigen::Vector3d normal(double phi) const {
    const double yaw = heading(phi);
    return {std::sin(yaw), -std::cos(yaw), 0.0};  // points to the right of travel
  }
};

double footprint_radius(const Primitive& p) {
  return p.kind == Primitive::Kind::kBox ? std::hypot(p.half_size.x(), p.half_size.y())
                                         : p.half_size.x();
}

bool clear_of(const Primitive& p, const std::vector<TrajectoryPose>& trajectory,
              const std::vector<Primitive>& placed, double clearance) {
  const double r = footprint_radius(p);
  for (const auto& t : trajectory) {
    if ((p.center.head<2>() - t.pose.translation.head<2>()).norm() < r + clearance) return false;
  }
  for (const auto& q : placed) {
    if ((p.center.head<2>() - q.center.head<2>()).norm() < r + footprint_radius(q) + 0.5) {
      return false;
    }
  }
  return true;
}

}  // namespace

SyntheticWorld generate_world(const WorldSpec& spec) {
  if (spec.loop_poses == 0) throw std::invalid_argument("world needs at least one pose");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SyntheticWorld world;
  world.seed = spec.seed;
  world.max_range = spec.max_range;
  const LoopPath path{spec.loop_radius * spec.loop_aspect, spec.loop_radius, spec.sensor_height};
  const double step = 2.0 * std::numbers::pi / static_cast<double>(spec.loop_poses);

  for (std::size_t i = 0; i < spec.loop_poses; ++i) {
    const double phi = step * static_cast<double>(i);
    world.trajectory.push_back({Pose::from_yaw(path.heading(phi), path.point(phi)), 0, i});
  }
  for (std::size_t pass = 1; pass <= spec.revisit_passes; ++pass) {
    for (std::size_t i = 0; i < spec.loop_poses; ++i) {
      const double phi = step * static_cast<double>(i);
      double yaw = path.heading(phi) + uniform(-0.3, 0.3);
      if (spec.reverse_revisits && i % 2 == 1) yaw += std::numbers::pi;
      const Eigen::Vector3d position = path.point(phi) + spec.revisit_offset * path.normal(phi);
      world.trajectory.push_back({Pose::from_yaw(yaw, position), pass, i});
    }
  }

  const auto place_near_path = [&](Primitive p, double lo, double hi) -> std::optional<Primitive> {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double phi = uniform(0.0, 2.0 * std::numbers::pi);
      const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
      const double offset = footprint_radius(p) + uniform(lo, hi);
      const Eigen::Vector3d base = path.point(phi) + side * offset * path.normal(phi);
      p.center.x() = base.x();
      p.center.y() = base.y();
      if (clear_of(p, world.trajectory, world.statics, spec.clearance)) return p;
    }
    return std::nullopt;
  };

  for (std::size_t i = 0; i < spec.static_count; ++i) {
    Primitive p;
    if (unit(rng) < 0.6) {
      p.kind = Primitive::Kind::kBox;
      p.half_size = {uniform(0.5, 3.0), uniform(0.5, 3.0), uniform(1.0, 5.0)};
      p.yaw = uniform(0.0, std::numbers::pi);
    } else {
      p.kind = Primitive::Kind::kCylinder;
      const double r = uniform(0.3, 1.5);
      p.half_size = {r, r, uniform(1.5, 5.0)};
    }
    p.center.z() = p.half_size.z();
    if (auto placed = place_near_path(p, spec.clearance, spec.clearance + spec.scatter)) {
      world.statics.push_back(*placed);
    }
  }

  std::vector<Primitive> occupied = world.statics;
  for (std::size_t i = 0; i < spec.movable_count; ++i) {
    Primitive car;
    car.kind = Primitive::Kind::kBox;
    car.half_size = {2.2, 0.9, 0.75};
    car.center.z() = car.half_size.z();
    std::optional<Primitive> placed;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      const double phi = uniform(0.0, 2.0 * std::numbers::pi);
      const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
      const Eigen::Vector3d base =
          path.point(phi) + side * (spec.clearance + uniform(0.5, 2.5)) * path.normal(phi);
      car.center.x() = base.x();
      car.center.y() = base.y();
      car.yaw = path.heading(phi);
      // Parked cars only need to keep the sensor outside their footprint.
      if (clear_of(car, world.trajectory, occupied, 0.5)) placed = car;
    }
    if (!placed) continue;
    occupied.push_back(*placed);
    MovablePrimitive movable{*placed, {}};
    const bool first = unit(rng) < 0.5;
    for (std::size_t v = 0; v <= spec.revisit_passes; ++v) {
      movable.present.push_back(v % 2 == 0 ? first : !first);
    }
    world.movables.push_back(movable);
  }
  return world;
}

}  // namespace rangeplace
