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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rangeplace/overlap.h"

namespace rangeplace {

using Descriptor = Eigen::VectorXf;

/// Descriptor similarity mapped to [0,1]: (cos(a,b) + 1) / 2, accumulated in
/// double. Throws std::domain_error for a zero-norm operand.
template <typename DerivedA, typename DerivedB>
double similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("similarity: dimension mismatch");
  const auto da = a.template cast<double>();
  const auto db = b.template cast<double>();
  const double na = da.norm();
  const double nb = db.norm();
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw std::domain_error("similarity of a zero-norm descriptor");
  }
  const double cosine = da.dot(db) / (na * nb);
  return 0.5 * (std::clamp(cosine, -1.0, 1.0) + 1.0);
}

/// Exact flat index; entries keep insertion order.
class DescriptorIndex {
 public:
  explicit DescriptorIndex(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("descriptor dimension must be positive");
  }

  void add(std::uint64_t scan_id, const Descriptor& descriptor);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::uint64_t>& ids() const { return ids_; }
  const Descriptor& descriptor(std::size_t i) const { return descriptors_.at(i); }
  bool contains(std::uint64_t scan_id) const { return positions_.count(scan_id) > 0; }

 private:
  std::size_t dim_;
  std::vector<std::uint64_t> ids_;
  std::vector<Descriptor> descriptors_;
  std::unordered_map<std::uint64_t, std::size_t> positions_;
};

DescriptorIndex build_index(const std::vector<std::pair<std::uint64_t, Descriptor>>& entries);

struct Match {
  std::uint64_t scan_id = 0;
  double similarity = 0.0;
};

/// Candidates outside `exclusion`, by descending similarity, ties by
/// ascending scan id; at most `top_k` (0 = all). Throws when nothing remains.
std::vector<Match> query(const Descriptor& query_descriptor, const DescriptorIndex& index,
                         const std::unordered_set<std::uint64_t>& exclusion, std::size_t top_k);

struct EvalProtocol {
  enum class Rule { kOverlap, kDistance };
  Rule rule = Rule::kOverlap;
  double overlap_threshold = kLoopClosureOverlap;
  double distance_radius = 4.0;
  // Index entries with |id - query id| < window are skipped.
  std::size_t exclusion_window = 100;
  std::vector<std::size_t> ks{1, 5, 10};

  void validate() const;
};

/// Ground truth for either positive rule: overlap labels keyed by
/// (query id, reference id), or sensor positions keyed by scan id.
struct GroundTruth {
  LabelTable overlaps;
  std::unordered_map<std::uint64_t, Eigen::Vector3d> positions;
};

struct Metrics {
  std::size_t queries = 0;            // queries with at least one positive
  std::size_t skipped = 0;            // queries without a positive
  double recall_at_1 = 0.0;
  double recall_at_1_percent = 0.0;
  std::vector<std::pair<std::size_t, double>> recall_at_k;  // AR@k
};

Metrics evaluate(const std::vector<std::pair<std::uint64_t, Descriptor>>& queries,
                 const DescriptorIndex& index, const GroundTruth& truth,
                 const EvalProtocol& protocol);

/// Exclusion set for a query under the protocol's temporal window.
std::unordered_set<std::uint64_t> temporal_exclusion(std::uint64_t query_id,
                                                     const DescriptorIndex& index,
                                                     std::size_t window);

bool is_positive(std::uint64_t query_id, std::uint64_t candidate_id, const GroundTruth& truth,
                 const EvalProtocol& protocol);

/// `name value` lines.
void write_metrics_text(std::ostream& out, const Metrics& metrics);
/// Header row plus one value row.
void write_metrics_csv(std::ostream& out, const Metrics& metrics);

/// "RLD1" file: count and dim (u64), then per entry the scan id (u64) and
/// dim f32 values.
void save_index(const std::filesystem::path& path, const DescriptorIndex& index);
DescriptorIndex load_index(const std::filesystem::path& path);

}  // namespace rangeplace
