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

#include "rangeplace/model.h"

#include <cstdio>
#include <sstream>

namespace rangeplace {

CcmConfig CcmConfig::standard(std::size_t height, const std::vector<std::size_t>& channels) {
  if (height < 2 || (height & (height - 1)) != 0) {
    throw std::invalid_argument("standard schedule needs a power-of-two height >= 2, got " +
                                std::to_string(height));
  }
  std::size_t halvings = 0;
  while ((std::size_t{1} << halvings) < height) ++halvings;

  CcmConfig config;
  config.layers.push_back({5, 5, 2, 2, 1, 0});
  for (std::size_t i = 1; i < halvings; ++i) config.layers.push_back({3, 3, 1, 2, 1, 0});
  for (int i = 0; i < 3; ++i) config.layers.push_back({1, 3, 0, 1, 1, 0});
  if (channels.size() != config.layers.size()) {
    throw std::invalid_argument("schedule for height " + std::to_string(height) + " has " +
                                std::to_string(config.layers.size()) + " layers but " +
                                std::to_string(channels.size()) + " channel widths were given");
  }
  for (std::size_t i = 0; i < channels.size(); ++i) config.layers[i].out_channels = channels[i];
  return config;
}

PadMode CcmConfig::pad_mode(std::size_t layer, std::size_t width) const {
  const ConvLayer& l = layers.at(layer);
  const HorizontalPad pad = circular_padding(width, l.kernel_w, l.stride_w);
  return PadMode{l.pad_vertical, horizontal, pad.total};
}

std::vector<std::size_t> ccm_height_trace(std::size_t height, const CcmConfig& config) {
  if (config.layers.empty()) throw std::invalid_argument("ccm schedule has no layers");
  std::vector<std::size_t> trace{height};
  std::size_t h = height;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const ConvLayer& layer = config.layers[i];
    if (layer.stride_w != 1) {
      throw std::invalid_argument("ccm layer " + std::to_string(i) +
                                  ": horizontal stride must be 1");
    }
    if (layer.stride_h == 0 || layer.kernel_h == 0 || layer.kernel_w == 0 ||
        layer.out_channels == 0) {
      throw std::invalid_argument("ccm layer " + std::to_string(i) + ": zero-sized parameter");
    }
    const std::size_t padded = h + 2 * layer.pad_vertical;
    if (layer.kernel_h > padded) {
      throw std::invalid_argument("ccm layer " + std::to_string(i) + ": kernel height " +
                                  std::to_string(layer.kernel_h) + " exceeds padded height " +
                                  std::to_string(padded));
    }
    h = (padded - layer.kernel_h) / layer.stride_h + 1;
    trace.push_back(h);
  }
  if (h != 1) {
    // Report the first layer whose output no longer matches the halving chain.
    std::size_t offending = config.layers.size() - 1;
    for (std::size_t i = 0; i < config.layers.size(); ++i) {
      if (trace[i + 1] * config.layers[i].stride_h != trace[i] && trace[i] != 1) {
        offending = i;
        break;
      }
    }
    throw std::invalid_argument("ccm schedule leaves height " + std::to_string(h) +
                                " (expected 1) for input height " + std::to_string(height) +
                                "; mismatch at layer " + std::to_string(offending));
  }
  return trace;
}

void ModelConfig::validate() const {
  if (width < 1) throw std::invalid_argument("model width must be >= 1");
  ccm_height_trace(height, ccm);
  if (rtm.channel_kernel % 2 == 0 || rtm.spatial_kernel % 2 == 0) {
    throw std::invalid_argument("attention kernel sizes must be odd");
  }
  if (feature_channels() < rtm.channel_kernel) {
    throw std::invalid_argument("channel attention kernel wider than the channel count");
  }
  if (head.clusters < 2) throw std::invalid_argument("NetVLAD needs at least 2 clusters");
  if (head.descriptor_dim < 1) throw std::invalid_argument("descriptor dim must be >= 1");
  if (!(input_scale > 0.0)) throw std::invalid_argument("input_scale must be positive");
}

namespace {

std::string format_layers(const std::vector<ConvLayer>& layers) {
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += ", ";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zux%zu/%zux%zu/%zu", l.kernel_h, l.kernel_w, l.stride_h,
                  l.stride_w, l.pad_vertical);
    out += buf;
  }
  return out;
}

std::vector<ConvLayer> parse_layers(const std::string& text) {
  std::vector<ConvLayer> layers;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    ConvLayer l;
    char tail = 0;
    if (std::sscanf(item.c_str(), " %zux%zu/%zux%zu/%zu %c", &l.kernel_h, &l.kernel_w,
                    &l.stride_h, &l.stride_w, &l.pad_vertical, &tail) != 5) {
      throw std::invalid_argument("bad ccm layer `" + item +
                                  "`, expected KHxKW/SHxSW/PAD");
    }
    layers.push_back(l);
  }
  return layers;
}

}  // namespace

KeyValueConfig ModelConfig::to_config() const {
  KeyValueConfig c;
  c.set("model.height", std::to_string(height));
  c.set("model.width", std::to_string(width));
  c.set("model.input_scale", format_double(input_scale));
  c.set("model.ccm.layers", format_layers(ccm.layers));
  std::string channels;
  for (const auto& l : ccm.layers) {
    if (!channels.empty()) channels += ",";
    channels += std::to_string(l.out_channels);
  }
  c.set("model.ccm.channels", channels);
  c.set("model.ccm.padding",
        ccm.horizontal == HorizontalPadding::kCircular ? "circular" : "zero");
  c.set("model.rtm.channel_kernel", std::to_string(rtm.channel_kernel));
  c.set("model.rtm.spatial_kernel", std::to_string(rtm.spatial_kernel));
  c.set("model.head.clusters", std::to_string(head.clusters));
  c.set("model.head.descriptor_dim", std::to_string(head.descriptor_dim));
  c.set("model.seed", std::to_string(seed));
  return c;
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& c) {
  ModelConfig m;
  m.height = c.get_uint("model.height");
  m.width = c.get_uint("model.width");
  if (c.has("model.input_scale")) m.input_scale = c.get_double("model.input_scale");
  const auto channels = c.get_uint_list("model.ccm.channels");
  if (c.has("model.ccm.layers")) {
    m.ccm.layers = parse_layers(c.get_string("model.ccm.layers"));
    if (channels.size() != m.ccm.layers.size()) {
      throw std::invalid_argument("model.ccm.channels must list one width per layer");
    }
    for (std::size_t i = 0; i < channels.size(); ++i) m.ccm.layers[i].out_channels = channels[i];
  } else {
    m.ccm = CcmConfig::standard(m.height, {channels.begin(), channels.end()});
  }
  if (c.has("model.ccm.padding")) {
    const std::string mode = c.get_string("model.ccm.padding");
    if (mode == "circular") {
      m.ccm.horizontal = HorizontalPadding::kCircular;
    } else if (mode == "zero") {
      m.ccm.horizontal = HorizontalPadding::kZero;
    } else {
      throw std::invalid_argument("model.ccm.padding must be circular or zero");
    }
  }
  if (c.has("model.rtm.channel_kernel")) m.rtm.channel_kernel = c.get_uint("model.rtm.channel_kernel");
  if (c.has("model.rtm.spatial_kernel")) m.rtm.spatial_kernel = c.get_uint("model.rtm.spatial_kernel");
  if (c.has("model.head.clusters")) m.head.clusters = c.get_uint("model.head.clusters");
  if (c.has("model.head.descriptor_dim")) {
    m.head.descriptor_dim = c.get_uint("model.head.descriptor_dim");
  }
  if (c.has("model.seed")) m.seed = c.get_uint("model.seed");
  m.validate();
  return m;
}

}  // namespace rangeplace
