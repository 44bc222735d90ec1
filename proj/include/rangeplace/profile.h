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

#include <string>
#include <vector>

#include "rangeplace/config.h"
#include "rangeplace/dataio.h"
#include "rangeplace/model.h"
#include "rangeplace/range_image.h"
#include "rangeplace/retrieval.h"
#include "rangeplace/train.h"

namespace rangeplace {

/// Named bundle of sizes for the sensor, network, synthetic world, training
/// and evaluation.
struct Profile {
  std::string name;
  ProjectionParams projection;
  ModelConfig model;
  WorldSpec world;
  TrainConfig train;
  EvalProtocol eval;
  double overlap_delta = kDefaultOverlapDelta;
  double gate_radius = kDefaultGateRadius;

  /// Every setting as `key = value` pairs.
  KeyValueConfig to_config() const;
  /// Applies the keys present in `overrides` on top of this profile.
  Profile with_overrides(const KeyValueConfig& overrides) const;
};

/// "tiny", "desk" or "full".
Profile make_profile(const std::string& name);
std::vector<std::string> profile_names();

}  // namespace rangeplace
