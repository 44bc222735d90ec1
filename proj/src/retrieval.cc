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

#include "rangeplace/retrieval.h"

#include <cmath>
#include <iomanip>
#include <string>

#include "rangeplace/binary_io.h"
#include "rangeplace/config.h"

namespace rangeplace {

void DescriptorIndex::add(std::uint64_t scan_id, const Descriptor& descriptor) {
  if (static_cast<std::size_t>(descriptor.size()) != dim_) {
    throw std::invalid_argument("descriptor for scan " + std::to_string(scan_id) + " has dim " +
                                std::to_string(descriptor.size()) + ", index expects " +
                                std::to_string(dim_));
  }
  if (!positions_.emplace(scan_id, ids_.size()).second) {
    throw std::invalid_argument("duplicate scan id " + std::to_string(scan_id));
  }
  ids_.push_back(scan_id);
  descriptors_.push_back(descriptor);
}

DescriptorIndex build_index(const std::vector<std::pair<std::uint64_t, Descriptor>>& entries) {
  if (entries.empty()) throw std::invalid_argument("cannot build an empty index");
  DescriptorIndex index(static_cast<std::size_t>(entries.front().second.size()));
  for (const auto& [id, d] : entries) index.add(id, d);
  return index;
}

std::vector<Match> query(const Descriptor& query_descriptor, const DescriptorIndex& index,
                         const std::unordered_set<std::uint64_t>& exclusion, std::size_t top_k) {
  if (static_cast<std::size_t>(query_descriptor.size()) != index.dim()) {
    throw std::invalid_argument("query dimension does not match the index");
  }
  std::vector<Match> matches;
  matches.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::uint64_t id = index.ids()[i];
    if (exclusion.count(id)) continue;
    matches.push_back({id, similarity(query_descriptor, index.descriptor(i))});
  }
  if (matches.empty()) throw std::invalid_argument("query has no candidates after exclusion");
  const auto better = [](const Match& a, const Match& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.scan_id < b.scan_id;
  };
  if (top_k == 0 || top_k >= matches.size()) {
    std::sort(matches.begin(), matches.end(), better);
  } else {
    std::partial_sort(matches.begin(), matches.begin() + static_cast<std::ptrdiff_t>(top_k),
                      matches.end(), better);
    matches.resize(top_k);
  }
  return matches;
}

void EvalProtocol::validate() const {
  if (!(overlap_threshold > 0.0 && overlap_threshold < 1.0)) {
    throw std::invalid_argument("overlap threshold must lie in (0,1)");
  }
  if (!(distance_radius > 0.0)) throw std::invalid_argument("distance radius must be positive");
  for (std::size_t k : ks) {
    if (k == 0) throw std::invalid_argument("AR@k needs k >= 1");
  }
}

std::unordered_set<std::uint64_t> temporal_exclusion(std::uint64_t query_id,
                                                     const DescriptorIndex& index,
                                                     std::size_t window) {
  std::unordered_set<std::uint64_t> excluded;
  for (std::uint64_t id : index.ids()) {
    const std::uint64_t gap = id > query_id ? id - query_id : query_id - id;
    if (gap < window) excluded.insert(id);
  }
  return excluded;
}

bool is_positive(std::uint64_t query_id, std::uint64_t candidate_id, const GroundTruth& truth,
                 const EvalProtocol& protocol) {
  if (protocol.rule == EvalProtocol::Rule::kOverlap) {
    return is_loop_closure(truth.overlaps.lookup(query_id, candidate_id),
                           protocol.overlap_threshold);
  }
  const auto q = truth.positions.find(query_id);
  const auto c = truth.positions.find(candidate_id);
  if (q == truth.positions.end() || c == truth.positions.end()) {
    throw std::invalid_argument("ground truth has no position for scan " +
                                std::to_string(q == truth.positions.end() ? query_id
                                                                          : candidate_id));
  }
  return (q->second - c->second).norm() < protocol.distance_radius;
}

Metrics evaluate(const std::vector<std::pair<std::uint64_t, Descriptor>>& queries,
                 const DescriptorIndex& index, const GroundTruth& truth,
                 const EvalProtocol& protocol) {
  protocol.validate();
  Metrics metrics;
  std::size_t hits_1 = 0, hits_1_percent = 0;
  std::vector<std::size_t> hits_k(protocol.ks.size(), 0);
  for (const auto& [qid, d] : queries) {
    const auto excluded = temporal_exclusion(qid, index, protocol.exclusion_window);
    bool any_positive = false;
    for (std::uint64_t id : index.ids()) {
      if (!excluded.count(id) && is_positive(qid, id, truth, protocol)) {
        any_positive = true;
        break;
      }
    }
    if (!any_positive) {
      ++metrics.skipped;
      continue;
    }
    ++metrics.queries;
    const std::vector<Match> ranked = query(d, index, excluded, 0);
    const std::size_t one_percent = (ranked.size() + 99) / 100;
    // Rank (0-based) of the best positive.
    std::size_t first_hit = ranked.size();
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (is_positive(qid, ranked[r].scan_id, truth, protocol)) {
        first_hit = r;
        break;
      }
    }
    if (first_hit < 1) ++hits_1;
    if (first_hit < one_percent) ++hits_1_percent;
    for (std::size_t i = 0; i < protocol.ks.size(); ++i) {
      if (first_hit < protocol.ks[i]) ++hits_k[i];
    }
  }
  if (metrics.queries == 0) {
    throw std::invalid_argument("no query has a true positive; recall is undefined");
  }
  const auto n = static_cast<double>(metrics.queries);
  metrics.recall_at_1 = static_cast<double>(hits_1) / n;
  metrics.recall_at_1_percent = static_cast<double>(hits_1_percent) / n;
  for (std::size_t i = 0; i < protocol.ks.size(); ++i) {
    metrics.recall_at_k.emplace_back(protocol.ks[i], static_cast<double>(hits_k[i]) / n);
  }
  return metrics;
}

void write_metrics_text(std::ostream& out, const Metrics& m) {
  out << "queries " << m.queries << "\n";
  out << "skipped " << m.skipped << "\n";
  out << "Recall@1 " << format_double(m.recall_at_1) << "\n";
  out << "Recall@1% " << format_double(m.recall_at_1_percent) << "\n";
  for (const auto& [k, v] : m.recall_at_k) out << "AR@" << k << " " << format_double(v) << "\n";
}

void write_metrics_csv(std::ostream& out, const Metrics& m) {
  out << "queries,skipped,recall_at_1,recall_at_1_percent";
  for (const auto& [k, v] : m.recall_at_k) out << ",ar_at_" << k;
  out << "\n" << m.queries << "," << m.skipped << "," << format_double(m.recall_at_1) << ","
      << format_double(m.recall_at_1_percent);
  for (const auto& [k, v] : m.recall_at_k) out << "," << format_double(v);
  out << "\n";
}

void save_index(const std::filesystem::path& path, const DescriptorIndex& index) {
  BinaryWriter out(path);
  out.magic("RLD1");
  out.u64(index.size());
  out.u64(index.dim());
  for (std::size_t i = 0; i < index.size(); ++i) {
    out.u64(index.ids()[i]);
    for (float v : index.descriptor(i)) out.f32(v);
  }
  out.close();
}

DescriptorIndex load_index(const std::filesystem::path& path) {
  BinaryReader in(path);
  in.expect_magic("RLD1");
  const std::uint64_t count = in.u64();
  const std::uint64_t dim = in.u64();
  if (dim == 0 || dim > (std::uint64_t{1} << 24)) {
    throw std::runtime_error(path.string() + ": bad descriptor dimension");
  }
  DescriptorIndex index(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t id = in.u64();
    Descriptor d(static_cast<Eigen::Index>(dim));
    for (auto& v : d) v = in.f32();
    index.add(id, d);
  }
  if (!in.at_end()) throw std::runtime_error(path.string() + ": trailing bytes");
  return index;
}

}  // namespace rangeplace
