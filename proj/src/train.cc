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

#include <algorithm>
#include <string>

namespace rangeplace {

void TrainConfig::validate() const {
  if (queries_per_batch == 0 || references_per_batch == 0) {
    throw std::invalid_argument("batch sizes must be positive");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0,1)");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
  if (checkpoint_interval == 0) throw std::invalid_argument("checkpoint interval must be >= 1");
  if (!(neighbor_fraction >= 0.0 && neighbor_fraction <= 1.0)) {
    throw std::invalid_argument("neighbor fraction must lie in [0,1]");
  }
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig c;
  c.set("train.queries_per_batch", std::to_string(queries_per_batch));
  c.set("train.references_per_batch", std::to_string(references_per_batch));
  c.set("train.learning_rate", format_double(learning_rate));
  c.set("train.beta1", format_double(beta1));
  c.set("train.beta2", format_double(beta2));
  c.set("train.epsilon", format_double(epsilon));
  c.set("train.epochs", std::to_string(epochs));
  c.set("train.batches_per_epoch", std::to_string(batches_per_epoch));
  c.set("train.checkpoint_interval", std::to_string(checkpoint_interval));
  c.set("train.neighbor_fraction", format_double(neighbor_fraction));
  c.set("train.loss", loss == LossKind::kAbsolute ? "absolute" : "squared");
  c.set("train.seed", std::to_string(seed));
  return c;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& c, TrainConfig t) {
  if (c.has("train.queries_per_batch")) t.queries_per_batch = c.get_uint("train.queries_per_batch");
  if (c.has("train.references_per_batch")) {
    t.references_per_batch = c.get_uint("train.references_per_batch");
  }
  if (c.has("train.learning_rate")) t.learning_rate = c.get_double("train.learning_rate");
  if (c.has("train.beta1")) t.beta1 = c.get_double("train.beta1");
  if (c.has("train.beta2")) t.beta2 = c.get_double("train.beta2");
  if (c.has("train.epsilon")) t.epsilon = c.get_double("train.epsilon");
  if (c.has("train.epochs")) t.epochs = c.get_uint("train.epochs");
  if (c.has("train.batches_per_epoch")) t.batches_per_epoch = c.get_uint("train.batches_per_epoch");
  if (c.has("train.checkpoint_interval")) {
    t.checkpoint_interval = c.get_uint("train.checkpoint_interval");
  }
  if (c.has("train.neighbor_fraction")) t.neighbor_fraction = c.get_double("train.neighbor_fraction");
  if (c.has("train.loss")) {
    const std::string kind = c.get_string("train.loss");
    if (kind == "absolute") {
      t.loss = LossKind::kAbsolute;
    } else if (kind == "squared") {
      t.loss = LossKind::kSquared;
    } else {
      throw std::invalid_argument("train.loss must be absolute or squared");
    }
  }
  if (c.has("train.seed")) t.seed = c.get_uint("train.seed");
  t.validate();
  return t;
}

Batch sample_batch(const LabelTable& labels, const std::vector<std::uint64_t>& scan_ids,
                   std::mt19937_64& rng, const TrainConfig& config) {
  if (scan_ids.empty()) throw std::invalid_argument("no scans to sample from");
  std::uniform_int_distribution<std::size_t> any(0, scan_ids.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  Batch batch;
  std::vector<std::uint64_t> pool = scan_ids;
  if (pool.size() >= config.queries_per_batch) {
    std::shuffle(pool.begin(), pool.end(), rng);
    batch.query_ids.assign(pool.begin(), pool.begin() + config.queries_per_batch);
  } else {
    for (std::size_t i = 0; i < config.queries_per_batch; ++i) {
      batch.query_ids.push_back(scan_ids[any(rng)]);
    }
  }

  std::vector<std::uint64_t> neighbors;
  for (std::uint64_t q : batch.query_ids) {
    for (std::uint64_t r : labels.neighbors(q)) {
      if (r != q && labels.lookup(q, r) > 0.0) neighbors.push_back(r);
    }
  }
  std::uniform_int_distribution<std::size_t> near(0, neighbors.empty() ? 0 : neighbors.size() - 1);
  for (std::size_t i = 0; i < config.references_per_batch; ++i) {
    if (!neighbors.empty() && coin(rng) < config.neighbor_fraction) {
      batch.reference_ids.push_back(neighbors[near(rng)]);
    } else {
      batch.reference_ids.push_back(scan_ids[any(rng)]);
    }
  }

  batch.targets.resize(static_cast<Eigen::Index>(batch.query_ids.size()),
                       static_cast<Eigen::Index>(batch.reference_ids.size()));
  for (std::size_t i = 0; i < batch.query_ids.size(); ++i) {
    for (std::size_t j = 0; j < batch.reference_ids.size(); ++j) {
      batch.targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          labels.lookup(batch.query_ids[i], batch.reference_ids[j]);
    }
  }
  return batch;
}

}  // namespace rangeplace
