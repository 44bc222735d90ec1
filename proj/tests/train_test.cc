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

#include "rangeplace/train.h"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "rangeplace/experiment.h"
#include "rangeplace/profile.h"
#include "test_util.h"

namespace rangeplace {
namespace {

using testing::TensorD;

TensorD rows(const std::vector<std::vector<double>>& values) {
  const std::size_t n = values.size(), d = values[0].size();
  TensorD::Vector v(static_cast<Eigen::Index>(n * d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) v[static_cast<Eigen::Index>(i * d + j)] = values[i][j];
  }
  return TensorD({n, d}, v);
}

TEST(SimilarityMatrix, Identities) {
  const auto q = rows({{1, 2, 3}});
  const auto r = rows({{1, 2, 3}, {-1, -2, -3}, {3, 0, -1}, {2, 4, 6}});
  const auto sims = similarity_matrix(q, r);
  ASSERT_EQ(sims.shape(), (Shape{1, 4}));
  EXPECT_NEAR(sims.values()[0], 1.0, 1e-12);
  EXPECT_NEAR(sims.values()[1], 0.0, 1e-12);
  EXPECT_NEAR(sims.values()[2], 0.5, 1e-12);
  EXPECT_NEAR(sims.values()[3], 1.0, 1e-12);
}

TEST(SimilarityMatrix, StaysInUnitInterval) {
  std::mt19937_64 rng(41);
  const auto sims = similarity_matrix(testing::random_tensor({6, 16}, rng, false),
                                      testing::random_tensor({6, 16}, rng, false));
  EXPECT_GE(sims.values().minCoeff(), 0.0);
  EXPECT_LE(sims.values().maxCoeff(), 1.0);
}

TEST(OverlapLoss, SinglePair) {
  const TensorD sims({1, 1}, TensorD::Vector::Constant(1, 0.8));
  const Eigen::MatrixXd targets = Eigen::MatrixXd::Constant(1, 1, 0.3);
  EXPECT_NEAR(overlap_loss(sims, targets).item(), 0.5, 1e-15);
  EXPECT_NEAR(overlap_loss(sims, targets, LossKind::kSquared).item(), 0.25, 1e-15);
}

TEST(OverlapLoss, ZeroExactlyWhenSimilarityMatchesTargets) {
  std::mt19937_64 rng(42);
  const auto sims = testing::random_tensor({6, 6}, rng, false, 0.0, 1.0);
  Eigen::MatrixXd targets(6, 6);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) targets(i, j) = sims.values()[i * 6 + j];
  }
  EXPECT_EQ(overlap_loss(sims, targets).item(), 0.0);
  targets(2, 3) += 0.1;
  EXPECT_NEAR(overlap_loss(sims, targets).item(), 0.1, 1e-12);
}

TEST(OverlapLoss, SumsEveryPairOfTheGrid) {
  std::mt19937_64 rng(43);
  const auto sims = testing::random_tensor({3, 4}, rng, false, 0.0, 1.0);
  const Eigen::MatrixXd targets = Eigen::MatrixXd::Random(3, 4).cwiseAbs();
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) expected += std::abs(sims.values()[i * 4 + j] - targets(i, j));
  }
  EXPECT_NEAR(overlap_loss(sims, targets).item(), expected, 1e-12);
  EXPECT_THROW(overlap_loss(sims, Eigen::MatrixXd::Zero(4, 3)), std::invalid_argument);
}

Profile tiny() { return make_profile("tiny"); }

ModelConfig fd_model_config(std::uint64_t seed) {
  ModelConfig c;
  c.height = 16;
  c.width = 8;
  c.input_scale = 0.1;
  c.ccm = CcmConfig::standard(16, {2, 2, 3, 3, 4, 4, 4});
  c.head.clusters = 3;
  c.head.descriptor_dim = 8;
  c.seed = seed;
  return c;
}

TEST(BatchLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(44);
  auto params16x8 = tiny().projection;
  params16x8.width = 8;
  std::vector<RangeImage> images;
  for (int i = 0; i < 6; ++i) images.push_back(testing::random_image(params16x8, rng));
  std::uniform_int_distribution<std::uint64_t> id(0, images.size() - 1);
  double worst = 0.0;
  for (int instance = 0; instance < 20; ++instance) {
    const auto model = Model<double>::create(fd_model_config(200 + instance));
    for (auto bias : model.weights.conv_biases) {
      bias.mutable_values() = testing::random_away_from_zero(bias.shape(), rng).values() * 0.1;
    }
    Batch batch;
    for (int i = 0; i < 3; ++i) batch.query_ids.push_back(id(rng));
    for (int i = 0; i < 3; ++i) batch.reference_ids.push_back(id(rng));
    batch.targets = testing::random_tensor({3, 3}, rng, false, 0.0, 1.0).values().reshaped(3, 3);
    std::vector<TensorD> leaves;
    for (const auto& [name, p] : model.weights.named()) leaves.push_back(p);
    const double err = testing::stacked_gradient_error(
        leaves, [&](const std::vector<TensorD>&) { return batch_loss(batch, images, model); });
    EXPECT_LE(err, 1e-4) << "instance " << instance;
    worst = std::max(worst, err);
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(SampleBatch, SingleScanRepeats) {
  LabelTable labels({{0, 0, 1.0}});
  std::mt19937_64 rng(45);
  const auto batch = sample_batch(labels, {0}, rng, TrainConfig{});
  EXPECT_EQ(batch.query_ids, std::vector<std::uint64_t>(6, 0));
  EXPECT_EQ(batch.reference_ids, std::vector<std::uint64_t>(6, 0));
  EXPECT_EQ(batch.targets, Eigen::MatrixXd::Ones(6, 6));
}

TEST(SampleBatch, RejectsEmptyPool) {
  std::mt19937_64 rng(46);
  EXPECT_THROW(sample_batch(LabelTable({{0, 0, 1.0}}), {}, rng, TrainConfig{}),
               std::invalid_argument);
}

class SampleBatchOnWorld : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { sequence_ = new Sequence(build_sequence(tiny())); }
  static void TearDownTestSuite() { delete sequence_; }
  static Sequence* sequence_;
};
Sequence* SampleBatchOnWorld::sequence_ = nullptr;

TEST_F(SampleBatchOnWorld, TargetsEqualLabelLookups) {
  const LabelTable table(sequence_->labels);
  std::vector<std::uint64_t> ids(sequence_->images.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  std::mt19937_64 rng(47);
  std::size_t positives = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto batch = sample_batch(table, ids, rng, TrainConfig{});
    for (std::size_t i = 0; i < batch.query_ids.size(); ++i) {
      for (std::size_t j = 0; j < batch.reference_ids.size(); ++j) {
        const double expected = table.lookup(batch.query_ids[i], batch.reference_ids[j]);
        EXPECT_EQ(batch.targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                  expected);
        if (expected > 0.0) ++positives;
      }
    }
  }
  EXPECT_GT(positives, 0u);
}

TEST_F(SampleBatchOnWorld, SeedDeterminesTheBatch) {
  const LabelTable table(sequence_->labels);
  std::vector<std::uint64_t> ids{0, 3, 5, 7, 11, 13, 20, 25};
  std::mt19937_64 a(48), b(48);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = sample_batch(table, ids, a, TrainConfig{});
    const auto y = sample_batch(table, ids, b, TrainConfig{});
    EXPECT_EQ(x.query_ids, y.query_ids);
    EXPECT_EQ(x.reference_ids, y.reference_ids);
    EXPECT_EQ(x.targets, y.targets);
  }
}

NamedTensors<double> scalar_params(std::vector<double> values) {
  NamedTensors<double> params;
  for (std::size_t i = 0; i < values.size(); ++i) {
    params.emplace_back("p" + std::to_string(i), TensorD({1}, TensorD::Vector::Constant(1, values[i]), true));
  }
  return params;
}

void set_gradients(const NamedTensors<double>& params, const std::vector<double>& grads) {
  std::vector<TensorD> terms;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].second;
    p.zero_grad();
    terms.push_back(scale(p, grads[i]));
  }
  sum(concat(terms, 0)).backward();
}

TEST(Adam, ZeroGradientLeavesWeightsUnchanged) {
  const auto params = scalar_params({0.5, -2.0});
  AdamState<double> state;
  for (int t = 0; t < 5; ++t) {
    set_gradients(params, {0.0, 0.0});
    adam_step(params, state, TrainConfig{});
  }
  EXPECT_EQ(params[0].second.values()[0], 0.5);
  EXPECT_EQ(params[1].second.values()[0], -2.0);
}

TEST(Adam, MatchesScalarRecurrence) {
  const std::vector<double> grads{0.3, -1.7, 1e-4};
  const auto params = scalar_params({1.0, 1.0, 1.0});
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  AdamState<double> state;
  std::vector<double> w{1.0, 1.0, 1.0}, m(3, 0.0), v(3, 0.0);
  for (int t = 1; t <= 25; ++t) {
    set_gradients(params, grads);
    adam_step(params, state, cfg);
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grads[i];
      v[i] = 0.999 * v[i] + 0.001 * grads[i] * grads[i];
      const double mhat = m[i] / (1.0 - std::pow(0.9, t));
      const double vhat = v[i] / (1.0 - std::pow(0.999, t));
      w[i] -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
      EXPECT_NEAR(params[i].second.values()[0], w[i], 1e-12) << "step " << t;
    }
  }
  EXPECT_EQ(state.step, 25u);
}

TEST(Adam, NonFiniteGradientNamesTheTensor) {
  const auto params = scalar_params({1.0, 1.0});
  set_gradients(params, {0.0, std::numeric_limits<double>::quiet_NaN()});
  AdamState<double> state;
  try {
    adam_step(params, state, TrainConfig{});
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("p1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(params[0].second.values()[0], 1.0);
}

TEST(TrainConfig, TextRoundTripAndValidation) {
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.loss = LossKind::kSquared;
  cfg.neighbor_fraction = 0.25;
  const auto back = TrainConfig::from_config(KeyValueConfig::parse(cfg.to_config().to_string()));
  EXPECT_EQ(back.to_config().to_string(), cfg.to_config().to_string());
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_THROW(TrainConfig::from_config(KeyValueConfig::parse("train.loss = huber\n")),
               std::invalid_argument);
}

Dataset tiny_dataset(const Profile& profile) {
  const auto sequence = build_sequence(profile);
  return training_set(sequence, revisit_split(sequence));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(Fit, ZeroEpochsWritesOnlyTheInitialCheckpoint) {
  const auto profile = tiny();
  const auto data = tiny_dataset(profile);
  auto model = Model<float>::create(profile.model);
  auto cfg = profile.train;
  cfg.epochs = 0;
  const auto dir = testing::scratch_dir("fit0");
  const auto result = fit(data, model, cfg, dir);
  EXPECT_TRUE(result.epoch_loss.empty());
  ASSERT_EQ(result.checkpoints.size(), 1u);
  EXPECT_EQ(result.checkpoints[0], checkpoint_path(dir, 0));
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".rlw") ++files;
  }
  EXPECT_EQ(files, 1u);
}

TEST(Fit, RejectsEmptyLabels) {
  Dataset data;
  auto model = Model<float>::create(tiny().model);
  EXPECT_THROW(fit(data, model, TrainConfig{}, testing::scratch_dir("fit_empty")),
               std::invalid_argument);
}

TEST(Fit, NonFiniteLossStopsTraining) {
  const auto profile = tiny();
  const auto data = tiny_dataset(profile);
  auto model = Model<float>::create(profile.model);
  model.weights.mlp_bias.mutable_values()[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(fit(data, model, profile.train, testing::scratch_dir("fit_nan")),
               std::runtime_error);
}

TEST(Fit, CheckpointsMetricsAndReload) {
  const auto profile = tiny();
  const auto data = tiny_dataset(profile);
  auto model = Model<float>::create(profile.model);
  auto cfg = profile.train;
  cfg.epochs = 5;
  cfg.checkpoint_interval = 2;
  const auto dir = testing::scratch_dir("fit5");
  const auto result = fit(data, model, cfg, dir);
  ASSERT_EQ(result.epoch_loss.size(), 5u);
  const std::vector<std::filesystem::path> expected{checkpoint_path(dir, 0), checkpoint_path(dir, 2),
                                                    checkpoint_path(dir, 4), checkpoint_path(dir, 5)};
  EXPECT_EQ(result.checkpoints, expected);

  std::istringstream metrics(read_text(dir / "metrics.txt"));
  std::size_t epoch = 0, lines = 0;
  double value = 0.0;
  while (metrics >> epoch >> value) {
    EXPECT_EQ(epoch, lines);
    EXPECT_NEAR(value, lines == 0 ? result.initial_loss : result.epoch_loss[lines - 1], 1e-5);
    ++lines;
  }
  EXPECT_EQ(lines, 6u);

  const auto reloaded = load_model<float>(checkpoint_path(dir, 5), profile.model);
  for (const auto& image : data.images) {
    EXPECT_EQ(descriptor(image, reloaded).values(), descriptor(image, model).values());
  }
}

TEST(Fit, SameSeedSameWeights) {
  const auto profile = tiny();
  const auto data = tiny_dataset(profile);
  auto cfg = profile.train;
  cfg.epochs = 2;
  auto a = Model<float>::create(profile.model);
  auto b = Model<float>::create(profile.model);
  fit(data, a, cfg, testing::scratch_dir("fit_a"));
  fit(data, b, cfg, testing::scratch_dir("fit_b"));
  const auto pa = a.weights.named(), pb = b.weights.named();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].second.values(), pb[i].second.values()) << pa[i].first;
  }
}

TEST(Fit, TinyWorldHalvesTheLossAndEveryParameterLearns) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto profile = tiny();
    profile.world.seed = seed;
    profile.model.seed = seed;
    profile.train.seed = seed;
    profile.train.epochs = 30;
    profile.train.checkpoint_interval = 30;
    const auto data = tiny_dataset(profile);
    auto model = Model<float>::create(profile.model);
    const auto result = fit(data, model, profile.train, testing::scratch_dir("fit_tiny"));
    EXPECT_LT(result.epoch_loss.back(), 0.5 * result.initial_loss) << "seed " << seed;
    for (const auto& [name, p] : model.weights.named()) {
      EXPECT_TRUE(result.parameters_with_gradient.count(name)) << name << " seed " << seed;
    }
  }
}

}  // namespace
}  // namespace rangeplace
