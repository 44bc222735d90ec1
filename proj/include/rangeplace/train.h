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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rangeplace/checkpoint.h"
#include "rangeplace/config.h"
#include "rangeplace/model.h"
#include "rangeplace/overlap.h"
#include "rangeplace/range_image.h"

namespace rangeplace {

enum class LossKind { kAbsolute, kSquared };

struct TrainConfig {
  std::size_t queries_per_batch = 6;
  std::size_t references_per_batch = 6;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 30;
  std::size_t batches_per_epoch = 0;  // 0: one pass over the training ids
  std::size_t checkpoint_interval = 10;
  double neighbor_fraction = 0.5;     // share of reference slots drawn from labeled neighbors
  LossKind loss = LossKind::kAbsolute;
  std::uint64_t seed = 0;

  void validate() const;
  KeyValueConfig to_config() const;
  static TrainConfig from_config(const KeyValueConfig& config, TrainConfig defaults);
  static TrainConfig from_config(const KeyValueConfig& config);
};

inline TrainConfig TrainConfig::from_config(const KeyValueConfig& config) {
  return from_config(config, TrainConfig{});
}

/// Query/reference scan ids and the overlap target for every (q, r) pair.
struct Batch {
  std::vector<std::uint64_t> query_ids;
  std::vector<std::uint64_t> reference_ids;
  Eigen::MatrixXd targets;  // queries x references, in [0,1]
};

/// Draws queries uniformly from `scan_ids`; reference slots come from the
/// labeled neighbors of the batch queries or uniformly from `scan_ids`.
/// Unlabeled pairs get target 0.
Batch sample_batch(const LabelTable& labels, const std::vector<std::uint64_t>& scan_ids,
                   std::mt19937_64& rng, const TrainConfig& config);

/// Similarity grid (cos + 1) / 2 between the rows of `queries` [n_q, D] and
/// `references` [n_r, D].
template <typename Scalar>
Tensor<Scalar> similarity_matrix(const Tensor<Scalar>& queries, const Tensor<Scalar>& references) {
  auto cosine = matmul(l2norm(queries, 1), transpose(l2norm(references, 1)));
  return add_scalar(scale(cosine, Scalar(0.5)), Scalar(0.5));
}

/// Sum over the grid of |Sim - Over| (or its square).
template <typename Scalar>
Tensor<Scalar> overlap_loss(const Tensor<Scalar>& similarities, const Eigen::MatrixXd& targets,
                            LossKind kind = LossKind::kAbsolute) {
  if (similarities.rank() != 2 || similarities.dim(0) != static_cast<std::size_t>(targets.rows()) ||
      similarities.dim(1) != static_cast<std::size_t>(targets.cols())) {
    throw std::invalid_argument("target grid does not match the similarity grid");
  }
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor row_major = targets;
  typename Tensor<Scalar>::Vector t =
      Eigen::Map<const Eigen::VectorXd>(row_major.data(), row_major.size()).template cast<Scalar>();
  auto diff = sub(similarities, Tensor<Scalar>(similarities.shape(), std::move(t)));
  return sum(kind == LossKind::kAbsolute ? abs(diff) : square(diff));
}

/// Stacked descriptors [n, D] for a list of scan ids; each distinct id runs
/// through the network once.
template <typename Scalar>
Tensor<Scalar> descriptor_rows(const std::vector<std::uint64_t>& ids,
                               const std::vector<RangeImage>& images, const Model<Scalar>& model,
                               std::map<std::uint64_t, Tensor<Scalar>>& cache) {
  std::vector<Tensor<Scalar>> rows;
  for (std::uint64_t id : ids) {
    if (id >= images.size()) throw std::out_of_range("scan id " + std::to_string(id));
    auto it = cache.find(id);
    if (it == cache.end()) {
      auto d = descriptor(images[id], model);
      it = cache.emplace(id, reshape(d, {1, d.size()})).first;
    }
    rows.push_back(it->second);
  }
  return concat(rows, 0);
}

template <typename Scalar>
Tensor<Scalar> batch_loss(const Batch& batch, const std::vector<RangeImage>& images,
                          const Model<Scalar>& model, LossKind kind = LossKind::kAbsolute) {
  std::map<std::uint64_t, Tensor<Scalar>> cache;
  auto q = descriptor_rows(batch.query_ids, images, model, cache);
  auto r = descriptor_rows(batch.reference_ids, images, model, cache);
  return overlap_loss(similarity_matrix(q, r), batch.targets, kind);
}

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
struct AdamState {
  std::vector<typename Tensor<Scalar>::Vector> first_moment;
  std::vector<typename Tensor<Scalar>::Vector> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params` from its grad.
/// Tensors without a grad are treated as having zero gradient. Throws on a
/// non-finite gradient, naming the tensor.
template <typename Scalar>
void adam_step(const NamedTensors<Scalar>& params, AdamState<Scalar>& state,
               const TrainConfig& config) {
  if (state.first_moment.empty()) {
    for (const auto& [name, t] : params) {
      state.first_moment.push_back(Tensor<Scalar>::Vector::Zero(t.values().size()));
      state.second_moment.push_back(Tensor<Scalar>::Vector::Zero(t.values().size()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].second.values().size()) {
      throw std::invalid_argument("optimizer state shape mismatch for " + params[i].first);
    }
    if (params[i].second.has_grad() && !params[i].second.grad().allFinite()) {
      throw std::runtime_error("non-finite gradient in " + params[i].first + " at step " +
                               std::to_string(state.step + 1));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(config.beta1);
  const auto b2 = static_cast<Scalar>(config.beta2);
  const auto correction1 = static_cast<Scalar>(1.0 - std::pow(config.beta1, t));
  const auto correction2 = static_cast<Scalar>(1.0 - std::pow(config.beta2, t));
  const auto lr = static_cast<Scalar>(config.learning_rate);
  const auto eps = static_cast<Scalar>(config.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar> p = params[i].second;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (p.has_grad()) {
      const auto& g = p.grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    } else {
      m *= b1;
      v *= b2;
    }
    p.mutable_values().array() -=
        lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct Dataset {
  std::vector<RangeImage> images;          // indexed by scan id
  LabelTable labels;
  std::vector<std::uint64_t> train_ids;    // scans eligible for batches
};

struct FitResult {
  double initial_loss = 0.0;               // mean batch loss of the untrained model
  std::vector<double> epoch_loss;          // mean batch loss, epochs 1..N
  std::vector<std::filesystem::path> checkpoints;
  std::set<std::string> parameters_with_gradient;  // got a nonzero grad at least once
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "checkpoint_%04zu.rlw", epoch);
  return dir / name;
}

/// Trains `model` in place. Writes `metrics.txt` (`epoch mean_loss` lines,
/// epoch 0 being the untrained model on its own batch draw) and checkpoints
/// into `out_dir`: epoch 0, every `checkpoint_interval` epochs, and the final
/// epoch.
template <typename Scalar>
FitResult fit(const Dataset& data, Model<Scalar>& model, const TrainConfig& config,
              const std::filesystem::path& out_dir) {
  config.validate();
  if (data.labels.empty() || data.train_ids.empty()) {
    throw std::invalid_argument("training needs at least one labeled pair");
  }
  std::filesystem::create_directories(out_dir);
  FitResult result;
  const auto save = [&](std::size_t epoch) {
    const auto path = checkpoint_path(out_dir, epoch);
    save_model(path, model);
    result.checkpoints.push_back(path);
  };
  save(0);

  std::ofstream metrics(out_dir / "metrics.txt", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write metrics in " + out_dir.string());

  AdamState<Scalar> adam;
  const auto params = model.weights.named();
  const std::size_t batches =
      config.batches_per_epoch > 0
          ? config.batches_per_epoch
          : (data.train_ids.size() + config.queries_per_batch - 1) / config.queries_per_batch;
  const auto checked = [](double value, const std::string& where) {
    if (!std::isfinite(value)) throw std::runtime_error("non-finite loss at " + where);
    return value;
  };

  {
    std::mt19937_64 probe(config.seed ^ 0x9e3779b97f4a7c15ULL);
    double total = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const Batch batch = sample_batch(data.labels, data.train_ids, probe, config);
      total += checked(static_cast<double>(batch_loss(batch, data.images, model, config.loss).item()),
                       "epoch 0, batch " + std::to_string(b));
    }
    result.initial_loss = total / static_cast<double>(batches);
    metrics << 0 << ' ' << format_double(result.initial_loss) << '\n';
  }

  std::mt19937_64 rng(config.seed);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const Batch batch = sample_batch(data.labels, data.train_ids, rng, config);
      for (auto [name, p] : params) p.zero_grad();
      auto loss = batch_loss(batch, data.images, model, config.loss);
      const double value = checked(static_cast<double>(loss.item()),
                                   "epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(b));
      loss.backward();
      for (const auto& [name, p] : params) {
        if (p.has_grad() && (p.grad().array() != Scalar(0)).any()) {
          result.parameters_with_gradient.insert(name);
        }
      }
      adam_step(params, adam, config);
      total += value;
    }
    const double mean = total / static_cast<double>(batches);
    result.epoch_loss.push_back(mean);
    metrics << epoch << ' ' << format_double(mean) << '\n';
    metrics.flush();
    if (!metrics) throw std::runtime_error("write failed: metrics.txt");
    if (epoch % config.checkpoint_interval == 0 || epoch == config.epochs) save(epoch);
  }
  return result;
}

}  // namespace rangeplace
