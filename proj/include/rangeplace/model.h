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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rangeplace/config.h"
#include "rangeplace/range_image.h"
#include "rangeplace/tensor.h"

namespace rangeplace {

// ---------------------------------------------------------------------------
// Configuration

struct ConvLayer {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t pad_vertical = 1;
  std::size_t stride_h = 2;
  std::size_t stride_w = 1;
  std::size_t out_channels = 16;

  bool operator==(const ConvLayer&) const = default;
};

/// Circular convolution stack. Every layer pads its columns by the ring rule
/// (see circular_padding); `horizontal` = kZero gives the non-circular control.
struct CcmConfig {
  std::vector<ConvLayer> layers;
  HorizontalPadding horizontal = HorizontalPadding::kCircular;

  /// One 5x5 layer and (log2(height) - 1) 3x3 layers, all with vertical
  /// stride 2 and horizontal stride 1, followed by three 1x3 layers.
  /// `channels` holds one width per layer. Height must be a power of two >= 2.
  static CcmConfig standard(std::size_t height, const std::vector<std::size_t>& channels);

  PadMode pad_mode(std::size_t layer, std::size_t width) const;

  bool operator==(const CcmConfig&) const = default;
};

/// Row count after each layer, starting with the input height. Throws
/// std::invalid_argument naming the offending layer when the schedule does
/// not collapse the height to exactly 1 or uses a horizontal stride != 1.
std::vector<std::size_t> ccm_height_trace(std::size_t height, const CcmConfig& config);

struct RtmConfig {
  std::size_t channel_kernel = 3;
  std::size_t spatial_kernel = 7;

  bool operator==(const RtmConfig&) const = default;
};

struct HeadConfig {
  std::size_t clusters = 64;
  std::size_t descriptor_dim = 256;

  bool operator==(const HeadConfig&) const = default;
};

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 900;
  // Ranges are multiplied by this before entering the network.
  double input_scale = 1.0;
  CcmConfig ccm;
  RtmConfig rtm;
  HeadConfig head;
  std::uint64_t seed = 0;

  std::size_t feature_channels() const { return ccm.layers.back().out_channels; }
  void validate() const;
  KeyValueConfig to_config() const;
  static ModelConfig from_config(const KeyValueConfig& config);

  bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Parameters

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Scalar>>>;

template <typename Scalar>
struct ModelWeights {
  std::vector<Tensor<Scalar>> conv_kernels;  // [C_out, C_in, K_h, K_w]
  std::vector<Tensor<Scalar>> conv_biases;   // [C_out]
  Tensor<Scalar> channel_kernel;             // [1, 1, k_c]
  Tensor<Scalar> channel_bias;               // [1]
  Tensor<Scalar> spatial_kernel;             // [1, 2, 1, k_s]
  Tensor<Scalar> spatial_bias;               // [1]
  Tensor<Scalar> assign_weight;              // [K, C]
  Tensor<Scalar> assign_bias;                // [K]
  Tensor<Scalar> centers;                    // [K, C]
  Tensor<Scalar> mlp_weight;                 // [K*C, D]
  Tensor<Scalar> mlp_bias;                   // [D]

  static ModelWeights initialize(const ModelConfig& config, std::uint64_t seed);

  /// Handles to every trainable tensor in a fixed order. The handles share
  /// storage with this object.
  NamedTensors<Scalar> named() const;

  /// Copies values from `source` by name; shapes must match exactly.
  template <typename Other>
  void assign_from(const NamedTensors<Other>& source);
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  ModelWeights<Scalar> weights;

  static Model create(const ModelConfig& config) {
    config.validate();
    return Model{config, ModelWeights<Scalar>::initialize(config, config.seed)};
  }
};

// ---------------------------------------------------------------------------
// Forward pipeline. Feature maps are [C, 1, W] tensors.

template <typename Scalar>
using FeatureMap = Tensor<Scalar>;

template <typename Scalar>
Tensor<Scalar> image_tensor(const RangeImage& image, double input_scale = 1.0) {
  typename Tensor<Scalar>::Vector values =
      Eigen::Map<const Eigen::VectorXf>(image.ranges.data(), image.ranges.size())
          .template cast<Scalar>();
  if (input_scale != 1.0) values *= static_cast<Scalar>(input_scale);
  return Tensor<Scalar>({1, image.height(), image.width()}, std::move(values));
}

/// Rolls the last axis: column j of the result is column (j - k) mod W.
template <typename Scalar>
Tensor<Scalar> shift_columns(const Tensor<Scalar>& x, std::ptrdiff_t k) {
  const std::size_t w = x.shape().back();
  const std::size_t rows = x.size() / w;
  typename Tensor<Scalar>::Vector out(x.size());
  const auto s = static_cast<std::size_t>(((k % static_cast<std::ptrdiff_t>(w)) +
                                           static_cast<std::ptrdiff_t>(w)) %
                                          static_cast<std::ptrdiff_t>(w));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) {
      out[static_cast<Eigen::Index>(r * w + (j + s) % w)] =
          x.values()[static_cast<Eigen::Index>(r * w + j)];
    }
  }
  return Tensor<Scalar>(x.shape(), std::move(out));
}

/// Every layer output of the convolution stack (conv + ReLU), input first
/// excluded. The last entry is A_CCM with shape [C, 1, W].
template <typename Scalar>
std::vector<FeatureMap<Scalar>> ccm_layers(const Tensor<Scalar>& image, const CcmConfig& config,
                                           const ModelWeights<Scalar>& weights) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw std::invalid_argument("ccm expects an image tensor [1,H,W], got " +
                                to_string(image.shape()));
  }
  ccm_height_trace(image.dim(1), config);
  const std::size_t width = image.dim(2);
  std::vector<FeatureMap<Scalar>> outputs;
  Tensor<Scalar> x = image;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const ConvLayer& layer = config.layers[i];
    x = relu(conv2d(x, weights.conv_kernels[i], weights.conv_biases[i],
                    Stride2d{layer.stride_h, layer.stride_w}, config.pad_mode(i, width)));
    outputs.push_back(x);
  }
  return outputs;
}

template <typename Scalar>
FeatureMap<Scalar> ccm_forward(const Tensor<Scalar>& image, const CcmConfig& config,
                               const ModelWeights<Scalar>& weights) {
  return ccm_layers(image, config, weights).back();
}

/// Per-channel weights in (0,1), shape [C,1,1]: mean over positions, circular
/// 1-D convolution across channels, sigmoid.
template <typename Scalar>
Tensor<Scalar> channel_attention(const FeatureMap<Scalar>& features, const RtmConfig& config,
                                 const ModelWeights<Scalar>& weights) {
  const std::size_t channels = features.dim(0);
  if (channels < config.channel_kernel) {
    throw std::invalid_argument("channel attention needs at least k_c channels");
  }
  auto pooled = reshape(pool(features, PoolKind::kMean, std::vector<std::size_t>{1, 2}),
                        {1, channels});
  auto logits = conv1d(pooled, weights.channel_kernel, weights.channel_bias,
                       HorizontalPadding::kCircular);
  return reshape(sigmoid(logits), {channels, 1, 1});
}

/// Per-position weights in (0,1), shape [1,1,W]: channel mean and max stacked,
/// 1 x k_s convolution with circular columns, sigmoid.
template <typename Scalar>
Tensor<Scalar> spatial_attention(const FeatureMap<Scalar>& features, const RtmConfig& config,
                                 const ModelWeights<Scalar>& weights) {
  const std::size_t w = features.dim(2);
  auto mean = reshape(pool(features, PoolKind::kMean, std::size_t{0}), {1, 1, w});
  auto peak = reshape(pool(features, PoolKind::kMax, std::size_t{0}), {1, 1, w});
  auto stacked = concat<Scalar>({mean, peak}, 0);
  auto logits = conv2d(stacked, weights.spatial_kernel, weights.spatial_bias, Stride2d{1, 1},
                       PadMode::circular(0, config.spatial_kernel - 1));
  return sigmoid(logits);
}

/// Channel re-weighting followed by spatial re-weighting of the result.
template <typename Scalar>
FeatureMap<Scalar> rtm_forward(const FeatureMap<Scalar>& features, const RtmConfig& config,
                               const ModelWeights<Scalar>& weights) {
  auto reweighted = mul(features, channel_attention(features, config, weights));
  return mul(reweighted, spatial_attention(reweighted, config, weights));
}

/// NetVLAD over the W columns as local C-dim features. Returns [K*C],
/// intra-normalized per cluster (a cluster with an exactly zero residual stays
/// zero), then globally L2-normalized.
template <typename Scalar>
Tensor<Scalar> netvlad(const FeatureMap<Scalar>& features, const ModelWeights<Scalar>& weights) {
  const std::size_t c = features.dim(0);
  const std::size_t w = features.dim(1) * features.dim(2);
  const std::size_t k = weights.centers.dim(0);
  auto local = transpose(reshape(features, {c, w}));                            // [W, C]
  auto logits = add(matmul(local, transpose(weights.assign_weight)),
                    reshape(weights.assign_bias, {1, k}));                      // [W, K]
  auto assignment = softmax(logits, 1);
  auto weighted = matmul(transpose(assignment), local);                         // [K, C]
  auto mass = reshape(scale(pool(assignment, PoolKind::kMean, std::size_t{0}),
                            static_cast<Scalar>(w)),
                      {k, 1});
  auto residual = sub(weighted, mul(mass, weights.centers));
  try {
    auto intra = l2norm(residual, 1, ZeroSlice::kKeep);
    return reshape(l2norm(reshape(intra, {1, k * c}), 1), {k * c});
  } catch (const std::domain_error&) {
    throw std::domain_error("netvlad: degenerate all-zero cluster aggregate");
  }
}

/// Single linear map from the VLAD vector to the descriptor.
template <typename Scalar>
Tensor<Scalar> mlp_forward(const Tensor<Scalar>& vlad, const ModelWeights<Scalar>& weights) {
  const std::size_t d = weights.mlp_bias.dim(0);
  auto out = add(matmul(reshape(vlad, {1, vlad.size()}), weights.mlp_weight),
                 reshape(weights.mlp_bias, {1, d}));
  return reshape(out, {d});
}

template <typename Scalar>
Tensor<Scalar> descriptor(const Tensor<Scalar>& image, const ModelConfig& config,
                          const ModelWeights<Scalar>& weights) {
  auto features = ccm_forward(image, config.ccm, weights);
  auto attended = rtm_forward(features, config.rtm, weights);
  return mlp_forward(netvlad(attended, weights), weights);
}

template <typename Scalar>
Tensor<Scalar> descriptor(const RangeImage& image, const Model<Scalar>& model) {
  if (image.height() != model.config.height || image.width() != model.config.width) {
    throw std::invalid_argument("image is " + std::to_string(image.height()) + "x" +
                                std::to_string(image.width()) + " but the model expects " +
                                std::to_string(model.config.height) + "x" +
                                std::to_string(model.config.width));
  }
  return descriptor(image_tensor<Scalar>(image, model.config.input_scale), model.config,
                    model.weights);
}

// ---------------------------------------------------------------------------
// Implementation of the weight helpers

template <typename Scalar>
ModelWeights<Scalar> ModelWeights<Scalar>::initialize(const ModelConfig& config,
                                                      std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    typename Tensor<Scalar>::Vector v(numel(shape));
    for (auto& x : v) x = static_cast<Scalar>(dist(rng));
    return Tensor<Scalar>(std::move(shape), std::move(v), true);
  };
  auto he_uniform = [&rng](Shape shape, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    typename Tensor<Scalar>::Vector v(numel(shape));
    for (auto& x : v) x = static_cast<Scalar>(dist(rng));
    return Tensor<Scalar>(std::move(shape), std::move(v), true);
  };
  auto gaussian = [&rng](Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    typename Tensor<Scalar>::Vector v(numel(shape));
    for (auto& x : v) x = static_cast<Scalar>(dist(rng));
    return Tensor<Scalar>(std::move(shape), std::move(v), true);
  };

  ModelWeights w;
  std::size_t in_channels = 1;
  for (const ConvLayer& layer : config.ccm.layers) {
    const std::size_t area = layer.kernel_h * layer.kernel_w;
    w.conv_kernels.push_back(
        he_uniform({layer.out_channels, in_channels, layer.kernel_h, layer.kernel_w},
               in_channels * area));
    w.conv_biases.push_back(Tensor<Scalar>::zeros({layer.out_channels}, true));
    in_channels = layer.out_channels;
  }
  const std::size_t kc = config.rtm.channel_kernel;
  const std::size_t ks = config.rtm.spatial_kernel;
  w.channel_kernel = glorot({1, 1, kc}, kc, kc);
  w.channel_bias = Tensor<Scalar>::zeros({1}, true);
  w.spatial_kernel = glorot({1, 2, 1, ks}, 2 * ks, ks);
  w.spatial_bias = Tensor<Scalar>::zeros({1}, true);

  const std::size_t c = config.feature_channels();
  const std::size_t k = config.head.clusters;
  const double cluster_scale = 1.0 / std::sqrt(static_cast<double>(c));
  w.assign_weight = gaussian({k, c}, cluster_scale);
  w.assign_bias = Tensor<Scalar>::zeros({k}, true);
  w.centers = gaussian({k, c}, cluster_scale);
  const std::size_t d = config.head.descriptor_dim;
  w.mlp_weight = glorot({k * c, d}, k * c, d);
  w.mlp_bias = Tensor<Scalar>::zeros({d}, true);
  return w;
}

template <typename Scalar>
NamedTensors<Scalar> ModelWeights<Scalar>::named() const {
  NamedTensors<Scalar> out;
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    out.emplace_back("ccm." + std::to_string(i) + ".kernel", conv_kernels[i]);
    out.emplace_back("ccm." + std::to_string(i) + ".bias", conv_biases[i]);
  }
  out.emplace_back("rtm.channel.kernel", channel_kernel);
  out.emplace_back("rtm.channel.bias", channel_bias);
  out.emplace_back("rtm.spatial.kernel", spatial_kernel);
  out.emplace_back("rtm.spatial.bias", spatial_bias);
  out.emplace_back("netvlad.assign.weight", assign_weight);
  out.emplace_back("netvlad.assign.bias", assign_bias);
  out.emplace_back("netvlad.centers", centers);
  out.emplace_back("mlp.weight", mlp_weight);
  out.emplace_back("mlp.bias", mlp_bias);
  return out;
}

template <typename Scalar>
template <typename Other>
void ModelWeights<Scalar>::assign_from(const NamedTensors<Other>& source) {
  auto targets = named();
  if (source.size() != targets.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(source.size()) +
                             " tensors, model expects " + std::to_string(targets.size()));
  }
  for (auto& [name, target] : targets) {
    const auto it = std::find_if(source.begin(), source.end(),
                                 [&](const auto& entry) { return entry.first == name; });
    if (it == source.end()) throw std::runtime_error("checkpoint is missing " + name);
    if (it->second.shape() != target.shape()) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               to_string(it->second.shape()) + ", model expects " +
                               to_string(target.shape()));
    }
    target.mutable_values() = it->second.values().template cast<Scalar>();
  }
}

}  // namespace rangeplace
