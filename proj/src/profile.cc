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

#include "rangeplace/profile.h"

#include <numbers>
#include <stdexcept>

namespace rangeplace {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Profile small_profile(const std::string& name, std::vector<std::size_t> channels,
                      std::size_t clusters) {
  Profile p;
  p.name = name;
  p.projection = hdl64_params();
  p.projection.height = 16;
  p.projection.width = 90;
  p.model.height = 16;
  p.model.width = 90;
  p.model.ccm = CcmConfig::standard(16, channels);
  p.model.head.clusters = clusters;
  p.model.head.descriptor_dim = 256;
  // Database and queries come from different passes; only the query itself
  // would be trivially close in id.
  p.eval.exclusion_window = 1;
  return p;
}

}  // namespace

Profile make_profile(const std::string& name) {
  if (name == "tiny") {
    Profile p = small_profile(name, {4, 4, 8, 8, 16, 16, 16}, 8);
    p.world.static_count = 6;
    p.world.movable_count = 2;
    p.world.loop_poses = 20;
    p.world.loop_radius = 12.0;
    p.world.scatter = 10.0;
    p.train.epochs = 5;
    return p;
  }
  if (name == "desk") {
    Profile p = small_profile(name, {8, 16, 16, 32, 32, 32, 32}, 16);
    p.model.input_scale = 0.3;
    p.train.epochs = 60;
    return p;
  }
  if (name == "full") {
    Profile p;
    p.name = name;
    p.projection = hdl64_params();
    p.model.height = 64;
    p.model.width = 900;
    p.model.ccm = CcmConfig::standard(64, {16, 16, 32, 32, 64, 64, 128, 128, 128});
    p.model.head.clusters = 64;
    p.model.head.descriptor_dim = 256;
    return p;
  }
  throw std::invalid_argument("unknown profile '" + name + "' (expected tiny, desk or full)");
}

std::vector<std::string> profile_names() { return {"tiny", "desk", "full"}; }

KeyValueConfig Profile::to_config() const {
  KeyValueConfig c;
  c.set("profile", name);
  c.set("projection.width", std::to_string(projection.width));
  c.set("projection.height", std::to_string(projection.height));
  c.set("projection.fov_up_deg", format_double(projection.fov_up / kDeg));
  c.set("projection.fov_down_deg", format_double(projection.fov_down / kDeg));
  c.set("projection.min_range", format_double(projection.min_range));
  c.set("overlap.delta", format_double(overlap_delta));
  c.set("overlap.gate_radius", format_double(gate_radius));
  c.set("eval.rule", eval.rule == EvalProtocol::Rule::kOverlap ? "overlap" : "distance");
  c.set("eval.overlap_threshold", format_double(eval.overlap_threshold));
  c.set("eval.distance_radius", format_double(eval.distance_radius));
  c.set("eval.exclusion_window", std::to_string(eval.exclusion_window));
  c.merge(model.to_config());
  c.merge(world.to_config());
  c.merge(train.to_config());
  return c;
}

Profile Profile::with_overrides(const KeyValueConfig& overrides) const {
  KeyValueConfig c = to_config();
  for (const auto& [key, value] : overrides.values()) {
    if (!c.has(key)) throw std::invalid_argument("unknown config key: " + key);
  }
  c.merge(overrides);
  Profile p;
  p.name = c.get_string("profile");
  p.projection.width = c.get_uint("projection.width");
  p.projection.height = c.get_uint("projection.height");
  p.projection.fov_up = c.get_double("projection.fov_up_deg") * kDeg;
  p.projection.fov_down = c.get_double("projection.fov_down_deg") * kDeg;
  p.projection.min_range = c.get_double("projection.min_range");
  p.projection.validate();
  p.overlap_delta = c.get_double("overlap.delta");
  if (!(p.overlap_delta > 0.0)) throw std::invalid_argument("overlap.delta must be positive");
  p.gate_radius = c.get_double("overlap.gate_radius");
  if (!(p.gate_radius > 0.0)) throw std::invalid_argument("overlap.gate_radius must be positive");
  const std::string rule = c.get_string("eval.rule");
  if (rule == "overlap") {
    p.eval.rule = EvalProtocol::Rule::kOverlap;
  } else if (rule == "distance") {
    p.eval.rule = EvalProtocol::Rule::kDistance;
  } else {
    throw std::invalid_argument("eval.rule must be overlap or distance");
  }
  p.eval.overlap_threshold = c.get_double("eval.overlap_threshold");
  p.eval.distance_radius = c.get_double("eval.distance_radius");
  p.eval.exclusion_window = c.get_uint("eval.exclusion_window");
  p.eval.validate();
  p.model = ModelConfig::from_config(c);
  p.world = WorldSpec::from_config(c, world);
  p.train = TrainConfig::from_config(c, train);
  if (p.model.height != p.projection.height || p.model.width != p.projection.width) {
    throw std::invalid_argument("model input size must match the projection size");
  }
  return p;
}

}  // namespace rangeplace
