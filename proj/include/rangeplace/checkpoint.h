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

#include <filesystem>
#include <string>

#include "rangeplace/binary_io.h"
#include "rangeplace/model.h"

namespace rangeplace {

// "RLW1" weight files: magic, then per tensor the name length, name bytes,
// rank and dims (all u64) followed by the values as f32. Values are narrowed
// to float on save regardless of the in-memory precision.

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const NamedTensors<Scalar>& tensors) {
  BinaryWriter out(path);
  out.magic("RLW1");
  for (const auto& [name, tensor] : tensors) {
    out.u64(name.size());
    out.bytes(name.data(), name.size());
    out.u64(tensor.rank());
    for (std::size_t d : tensor.shape()) out.u64(d);
    for (Eigen::Index i = 0; i < tensor.values().size(); ++i) {
      out.f32(static_cast<float>(tensor.values()[i]));
    }
  }
  out.close();
}

inline NamedTensors<float> load_checkpoint(const std::filesystem::path& path) {
  constexpr std::uint64_t kMaxName = 4096;
  constexpr std::uint64_t kMaxRank = 8;
  constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;
  BinaryReader in(path);
  in.expect_magic("RLW1");
  NamedTensors<float> tensors;
  while (!in.at_end()) {
    const std::uint64_t name_len = in.u64();
    if (name_len == 0 || name_len > kMaxName) {
      throw std::runtime_error(path.string() + ": bad tensor name length at byte " +
                               std::to_string(in.offset()));
    }
    std::string name(name_len, '\0');
    in.bytes(name.data(), name.size());
    const std::uint64_t rank = in.u64();
    if (rank == 0 || rank > kMaxRank) {
      throw std::runtime_error(path.string() + ": bad rank for " + name);
    }
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const std::uint64_t d = in.u64();
      if (d == 0 || count * d > kMaxElements) {
        throw std::runtime_error(path.string() + ": bad dimension for " + name);
      }
      count *= d;
      shape.push_back(d);
    }
    Tensor<float>::Vector values(static_cast<Eigen::Index>(count));
    for (auto& v : values) v = in.f32();
    tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  return tensors;
}

template <typename Scalar>
void save_model(const std::filesystem::path& path, const Model<Scalar>& model) {
  save_checkpoint(path, model.weights.named());
}

/// Builds a model from `config` and overwrites its weights from the file.
template <typename Scalar>
Model<Scalar> load_model(const std::filesystem::path& path, const ModelConfig& config) {
  Model<Scalar> model = Model<Scalar>::create(config);
  model.weights.assign_from(load_checkpoint(path));
  return model;
}

}  // namespace rangeplace
