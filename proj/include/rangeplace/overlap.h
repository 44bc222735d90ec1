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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <utility>
#include <vector>

#include "rangeplace/pose.h"
#include "rangeplace/range_image.h"

namespace rangeplace {

inline constexpr double kDefaultOverlapDelta = 1.0;
inline constexpr double kDefaultGateRadius = 50.0;
inline constexpr double kLoopClosureOverlap = 0.3;

struct OverlapLabel {
  std::uint64_t query_id = 0;
  std::uint64_t reference_id = 0;
  double overlap = 0.0;

  bool operator==(const OverlapLabel&) const = default;
};

/// Projects the reference cloud into the query sensor frame.
RangeImage reproject(const PointCloud& reference_cloud, const Pose& query_pose,
                     const Pose& reference_pose, const ProjectionParams& params);

/// Fraction of mutually valid pixels whose ranges agree within `delta`,
/// normalized by the smaller valid-pixel count. Throws when the images differ
/// in size or neither has a valid pixel.
double overlap(const RangeImage& query, const RangeImage& reprojected, double delta);

/// Loop-closure rule: strictly greater than the threshold.
inline bool is_loop_closure(double overlap_value, double threshold = kLoopClosureOverlap) {
  return overlap_value > threshold;
}

/// Labels every ordered pair (i, j) whose sensor positions lie within
/// `gate_radius` of each other, including (i, i). Pairs outside the gate are
/// implicitly 0.
std::vector<OverlapLabel> label_sequence(const std::vector<PointCloud>& scans,
                                         const std::vector<Pose>& poses,
                                         const ProjectionParams& params,
                                         double delta = kDefaultOverlapDelta,
                                         double gate_radius = kDefaultGateRadius);

/// Ordered-pair lookup over a label list; absent pairs read as 0.
class LabelTable {
 public:
  LabelTable() = default;
  explicit LabelTable(const std::vector<OverlapLabel>& labels);

  void insert(const OverlapLabel& label);
  double lookup(std::uint64_t query_id, std::uint64_t reference_id) const;
  bool contains(std::uint64_t query_id, std::uint64_t reference_id) const;

  /// Reference ids explicitly labeled for a query, ascending.
  std::vector<std::uint64_t> neighbors(std::uint64_t query_id) const;
  std::vector<std::uint64_t> query_ids() const;
  std::vector<OverlapLabel> labels() const;
  std::size_t size() const { return table_.size(); }
  bool empty() const { return table_.empty(); }

 private:
  std::map<std::pair<std::uint64_t, std::uint64_t>, double> table_;
};

/// Text format: `query_id reference_id overlap` per line, overlap with six
/// decimals; lines starting with '#' are comments.
void write_labels(const std::filesystem::path& path, const std::vector<OverlapLabel>& labels);
std::vector<OverlapLabel> read_labels(const std::filesystem::path& path);

}  // namespace rangeplace
