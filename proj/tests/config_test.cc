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

#include "rangeplace/config.h"

#include <gtest/gtest.h>

#include <stdexcept>

#include "rangeplace/profile.h"
#include "test_util.h"

namespace rangeplace {
namespace {

TEST(KeyValueConfig, ParsesCommentsAndWhitespace) {
  const auto c = KeyValueConfig::parse("# header\n  a = 1  \n\nb=two # trailing\nc = 0.5,\n");
  EXPECT_EQ(c.get_uint("a"), 1u);
  EXPECT_EQ(c.get_string("b"), "two");
  EXPECT_EQ(c.values().size(), 3u);
}

TEST(KeyValueConfig, ReportsTheBadLine) {
  try {
    KeyValueConfig::parse("a = 1\nnot a pair\n", "run.cfg");
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(KeyValueConfig::parse(" = 3\n"), std::invalid_argument);
}

TEST(KeyValueConfig, TypedGettersValidate) {
  const auto c = KeyValueConfig::parse("n = 12\nx = 1e-3\nb = true\nl = 1, 2,3\nbad = 1.5x\n");
  EXPECT_EQ(c.get_double("x"), 1e-3);
  EXPECT_TRUE(c.get_bool("b"));
  EXPECT_EQ(c.get_uint_list("l"), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_THROW(c.get_double("bad"), std::invalid_argument);
  EXPECT_THROW(c.get_uint("x"), std::invalid_argument);
  EXPECT_THROW(c.get_bool("n"), std::invalid_argument);
  EXPECT_THROW(c.get_string("missing"), std::invalid_argument);
}

TEST(KeyValueConfig, SaveLoadRoundTrip) {
  const auto dir = testing::scratch_dir("config");
  auto c = KeyValueConfig::parse("b = 2\na = 1\n");
  c.save(dir / "c.cfg");
  const auto back = KeyValueConfig::load(dir / "c.cfg");
  EXPECT_EQ(back.to_string(), "a = 1\nb = 2\n");
  EXPECT_THROW(KeyValueConfig::load(dir / "missing.cfg"), std::runtime_error);
}

TEST(FormatDouble, ShortestRoundTrip) {
  for (double v : {0.1, 1e-8, 123456.789, 0.3, 2.0 / 3.0}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Profile, NamesAndSizes) {
  EXPECT_EQ(profile_names(), (std::vector<std::string>{"tiny", "desk", "full"}));
  EXPECT_EQ(make_profile("full").model.height, 64u);
  EXPECT_EQ(make_profile("full").model.width, 900u);
  EXPECT_EQ(make_profile("full").model.head.clusters, 64u);
  EXPECT_EQ(make_profile("desk").projection.width, 90u);
  EXPECT_EQ(make_profile("tiny").model.head.clusters, 8u);
  EXPECT_THROW(make_profile("huge"), std::invalid_argument);
}

TEST(Profile, SharedDefaultsInEveryProfile) {
  for (const auto& name : profile_names()) {
    const auto p = make_profile(name);
    EXPECT_EQ(p.model.head.descriptor_dim, 256u) << name;
    EXPECT_EQ(p.train.queries_per_batch, 6u) << name;
    EXPECT_EQ(p.train.references_per_batch, 6u) << name;
    EXPECT_EQ(p.train.learning_rate, 1e-3) << name;
    EXPECT_EQ(p.overlap_delta, 1.0) << name;
    EXPECT_EQ(p.eval.overlap_threshold, 0.3) << name;
  }
}

TEST(Profile, TextRoundTripIsStable) {
  for (const auto& name : profile_names()) {
    const auto p = make_profile(name);
    const auto text = p.to_config().to_string();
    EXPECT_EQ(p.with_overrides(KeyValueConfig::parse(text)).to_config().to_string(), text) << name;
  }
}

TEST(Profile, OverridesApplyAndValidate) {
  const auto base = make_profile("desk");
  const auto p = base.with_overrides(
      KeyValueConfig::parse("train.epochs = 3\nworld.seed = 9\neval.rule = distance\n"));
  EXPECT_EQ(p.train.epochs, 3u);
  EXPECT_EQ(p.world.seed, 9u);
  EXPECT_EQ(p.eval.rule, EvalProtocol::Rule::kDistance);
  EXPECT_EQ(p.model, base.model);
  EXPECT_THROW(base.with_overrides(KeyValueConfig::parse("train.epoch = 3\n")),
               std::invalid_argument);
  EXPECT_THROW(base.with_overrides(KeyValueConfig::parse("projection.width = 100\n")),
               std::invalid_argument);
  EXPECT_THROW(base.with_overrides(KeyValueConfig::parse("eval.rule = nearest\n")),
               std::invalid_argument);
}

}  // namespace
}  // namespace rangeplace
