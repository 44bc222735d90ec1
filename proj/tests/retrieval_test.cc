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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "oracles.h"
#include "test_util.h"

namespace rangeplace {
namespace {

Descriptor random_descriptor(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Descriptor d(static_cast<Eigen::Index>(dim));
  for (auto& v : d) v = n(rng);
  return d;
}

// Plain cosine in long double, independent of the library's helper.
double oracle_similarity(const Descriptor& a, const Descriptor& b) {
  long double dot = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>((dot / std::sqrt(na * nb) + 1) / 2);
}

TEST(Similarity, Identities) {
  std::mt19937_64 rng(51);
  const auto d = random_descriptor(256, rng);
  EXPECT_NEAR(similarity(d, d), 1.0, 1e-12);
  EXPECT_NEAR(similarity(d, Descriptor(-d)), 0.0, 1e-12);
  Descriptor a = Descriptor::Zero(4), b = Descriptor::Zero(4);
  a << 1, 2, 0, 0;
  b << 0, 0, 3, -1;
  EXPECT_NEAR(similarity(a, b), 0.5, 1e-12);
}

TEST(Similarity, RejectsZeroNorm) {
  EXPECT_THROW(similarity(Descriptor::Zero(3), Descriptor::Ones(3)), std::domain_error);
  EXPECT_THROW(similarity(Descriptor::Ones(3), Descriptor::Ones(4)), std::invalid_argument);
}

TEST(Similarity, StaysInUnitInterval) {
  std::mt19937_64 rng(52);
  for (int i = 0; i < 1000; ++i) {
    const double s = similarity(random_descriptor(8, rng), random_descriptor(8, rng));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Index, BuildAndValidate) {
  std::mt19937_64 rng(53);
  DescriptorIndex index(16);
  index.add(7, random_descriptor(16, rng));
  EXPECT_EQ(index.size(), 1u);
  EXPECT_THROW(index.add(7, random_descriptor(16, rng)), std::invalid_argument);
  EXPECT_THROW(index.add(8, random_descriptor(15, rng)), std::invalid_argument);
  EXPECT_THROW(build_index({}), std::invalid_argument);
}

TEST(Query, SelfIsRankOne) {
  std::mt19937_64 rng(54);
  std::vector<std::pair<std::uint64_t, Descriptor>> entries;
  for (std::uint64_t i = 0; i < 50; ++i) entries.emplace_back(i, random_descriptor(32, rng));
  const auto index = build_index(entries);
  const auto hits = query(entries[17].second, index, {}, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].scan_id, 17u);
  EXPECT_NEAR(hits[0].similarity, 1.0, 1e-12);
}

TEST(Query, EverythingExcludedIsAnError) {
  std::mt19937_64 rng(55);
  const auto index = build_index({{1, random_descriptor(4, rng)}, {2, random_descriptor(4, rng)}});
  EXPECT_THROW(query(random_descriptor(4, rng), index, {1, 2}, 1), std::invalid_argument);
}

TEST(Query, TiesBreakByAscendingId) {
  Descriptor d = Descriptor::Ones(4);
  const auto index = build_index({{9, d}, {3, d}, {5, d}});
  const auto hits = query(d, index, {}, 0);
  EXPECT_EQ(hits[0].scan_id, 3u);
  EXPECT_EQ(hits[1].scan_id, 5u);
  EXPECT_EQ(hits[2].scan_id, 9u);
}

TEST(Query, MatchesFullSortOracle) {
  std::mt19937_64 rng(56);
  std::uniform_int_distribution<std::size_t> size(1, 500);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng);
    std::vector<std::pair<std::uint64_t, Descriptor>> entries;
    for (std::uint64_t i = 0; i < n; ++i) entries.emplace_back(i * 3 + 1, random_descriptor(16, rng));
    const auto index = build_index(entries);
    const auto q = random_descriptor(16, rng);
    std::vector<std::pair<double, std::uint64_t>> oracle;
    for (const auto& [id, d] : entries) oracle.emplace_back(similarity(q, d), id);
    std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    const auto hits = query(q, index, {}, 0);
    ASSERT_EQ(hits.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(hits[i].scan_id, oracle[i].second);
      EXPECT_EQ(hits[i].similarity, oracle[i].first);
    }
    EXPECT_NEAR(hits[0].similarity, oracle_similarity(q, index.descriptor(hits[0].scan_id / 3)), 1e-6);
  }
}

TEST(TemporalExclusion, WindowIsStrict) {
  DescriptorIndex index(2);
  for (std::uint64_t i = 0; i < 10; ++i) index.add(i, Descriptor::Ones(2));
  const auto ex = temporal_exclusion(5, index, 2);
  EXPECT_EQ(ex, (std::unordered_set<std::uint64_t>{4, 5, 6}));
  EXPECT_TRUE(temporal_exclusion(5, index, 0).empty());
}

// 200 database entries; query i's only positive is ranked second because a
// decoy sits closer to it.
TEST(Evaluate, AdversarialFixture) {
  const auto f = testing::adversarial_fixture();
  EvalProtocol protocol;
  protocol.exclusion_window = 0;
  const auto m = evaluate(f.queries, f.index, f.truth, protocol);
  EXPECT_EQ(m.queries, 10u);
  EXPECT_EQ(m.recall_at_1, 0.0);
  EXPECT_EQ(m.recall_at_1_percent, 1.0);
}

TEST(Evaluate, DuplicatesAreFound) {
  std::mt19937_64 rng(57);
  DescriptorIndex index(8);
  std::vector<std::pair<std::uint64_t, Descriptor>> queries;
  GroundTruth truth;
  for (std::uint64_t i = 0; i < 30; ++i) {
    const auto d = random_descriptor(8, rng);
    index.add(i, d);
    queries.emplace_back(500 + i, d);
    truth.overlaps.insert({500 + i, i, 1.0});
  }
  EvalProtocol protocol;
  protocol.exclusion_window = 0;
  const auto m = evaluate(queries, index, truth, protocol);
  EXPECT_EQ(m.recall_at_1, 1.0);
}

TEST(Evaluate, QueriesWithoutPositivesAreSkipped) {
  std::mt19937_64 rng(58);
  DescriptorIndex index(4);
  for (std::uint64_t i = 0; i < 5; ++i) index.add(i, random_descriptor(4, rng));
  GroundTruth truth;
  truth.overlaps.insert({10, 0, 0.3});  // not strictly above the threshold
  EvalProtocol protocol;
  protocol.exclusion_window = 0;
  EXPECT_THROW(evaluate({{10, random_descriptor(4, rng)}}, index, truth, protocol),
               std::invalid_argument);
  truth.overlaps.insert({11, 2, 0.8});
  const auto m = evaluate({{10, random_descriptor(4, rng)}, {11, index.descriptor(2)}}, index,
                          truth, protocol);
  EXPECT_EQ(m.queries, 1u);
  EXPECT_EQ(m.skipped, 1u);
  EXPECT_EQ(m.recall_at_1, 1.0);
}

TEST(Evaluate, DistanceRule) {
  DescriptorIndex index(2);
  Descriptor a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  index.add(0, a);
  index.add(1, b);
  GroundTruth truth;
  truth.positions[0] = {0, 0, 0};
  truth.positions[1] = {10, 0, 0};
  truth.positions[7] = {3.9, 0, 0};
  EvalProtocol protocol;
  protocol.rule = EvalProtocol::Rule::kDistance;
  protocol.exclusion_window = 0;
  const auto m = evaluate({{7, a}}, index, truth, protocol);
  EXPECT_EQ(m.recall_at_1, 1.0);
  truth.positions[7] = {4.0, 0, 0};
  EXPECT_THROW(evaluate({{7, a}}, index, truth, protocol), std::invalid_argument);
}

TEST(Evaluate, MatchesBruteForceRecomputation) {
  std::mt19937_64 rng(59);
  std::uniform_int_distribution<std::size_t> size(20, 500);
  std::uniform_real_distribution<double> label(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng);
    std::vector<std::pair<std::uint64_t, Descriptor>> db, queries;
    for (std::uint64_t i = 0; i < n; ++i) db.emplace_back(i, random_descriptor(8, rng));
    LabelTable labels;
    for (std::uint64_t q = 0; q < 15; ++q) {
      const std::uint64_t qid = n / 2 + q;
      queries.emplace_back(qid, random_descriptor(8, rng));
      for (int j = 0; j < 8; ++j) labels.insert({qid, rng() % n, label(rng)});
    }
    const auto index = build_index(db);
    EvalProtocol protocol;
    protocol.exclusion_window = 3;
    protocol.ks = {1, 5, 10, 25};
    const auto expected = testing::oracle_metrics(queries, db, labels, 3, protocol.ks);
    GroundTruth truth{labels, {}};
    Metrics actual;
    try {
      actual = evaluate(queries, index, truth, protocol);
    } catch (const std::invalid_argument&) {
      EXPECT_EQ(expected.queries, 0u);
      continue;
    }
    EXPECT_EQ(actual.queries, expected.queries);
    EXPECT_EQ(actual.skipped, expected.skipped);
    EXPECT_EQ(actual.recall_at_1, expected.recall_at_1);
    EXPECT_EQ(actual.recall_at_1_percent, expected.recall_at_1_percent);
    EXPECT_EQ(actual.recall_at_k, expected.recall_at_k);
    for (std::size_t i = 1; i < actual.recall_at_k.size(); ++i) {
      EXPECT_LE(actual.recall_at_k[i - 1].second, actual.recall_at_k[i].second);
    }
  }
}

TEST(Evaluate, ReturnedIdsRespectTheWindow) {
  std::mt19937_64 rng(60);
  DescriptorIndex index(8);
  for (std::uint64_t i = 0; i < 200; ++i) index.add(i, random_descriptor(8, rng));
  for (std::uint64_t q = 0; q < 200; q += 17) {
    const auto excluded = temporal_exclusion(q, index, 25);
    for (const auto& hit : query(random_descriptor(8, rng), index, excluded, 0)) {
      const std::uint64_t gap = hit.scan_id > q ? hit.scan_id - q : q - hit.scan_id;
      EXPECT_GE(gap, 25u);
    }
  }
}

TEST(MetricsText, Format) {
  Metrics m;
  m.queries = 4;
  m.recall_at_1 = 0.0;
  m.recall_at_1_percent = 1.0;
  m.recall_at_k = {{1, 0.0}, {5, 1.0}};
  std::ostringstream text, csv;
  write_metrics_text(text, m);
  write_metrics_csv(csv, m);
  EXPECT_NE(text.str().find("Recall@1 0\n"), std::string::npos);
  EXPECT_NE(text.str().find("Recall@1% 1\n"), std::string::npos);
  EXPECT_NE(text.str().find("AR@5 1\n"), std::string::npos);
  EXPECT_EQ(csv.str(),
            "queries,skipped,recall_at_1,recall_at_1_percent,ar_at_1,ar_at_5\n4,0,0,1,0,1\n");
}

TEST(IndexFile, RoundTripGivesIdenticalQueries) {
  const auto dir = testing::scratch_dir("rld");
  std::mt19937_64 rng(61);
  std::vector<std::pair<std::uint64_t, Descriptor>> entries;
  for (std::uint64_t i = 0; i < 40; ++i) entries.emplace_back(i * 7, random_descriptor(256, rng));
  const auto index = build_index(entries);
  save_index(dir / "db.rld", index);
  const auto back = load_index(dir / "db.rld");
  ASSERT_EQ(back.ids(), index.ids());
  for (std::size_t i = 0; i < index.size(); ++i) EXPECT_EQ(back.descriptor(i), index.descriptor(i));
  const auto q = random_descriptor(256, rng);
  const auto a = query(q, index, {}, 0);
  const auto b = query(q, back, {}, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].scan_id, b[i].scan_id);
    EXPECT_EQ(a[i].similarity, b[i].similarity);
  }
  std::filesystem::resize_file(dir / "db.rld", 100);
  EXPECT_THROW(load_index(dir / "db.rld"), std::runtime_error);
}

}  // namespace
}  // namespace rangeplace
