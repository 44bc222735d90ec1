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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rangeplace/dataio.h"
#include "rangeplace/model.h"
#include "rangeplace/overlap.h"
#include "rangeplace/profile.h"
#include "rangeplace/retrieval.h"
#include "rangeplace/train.h"

namespace rangeplace {

/// Scans of one drive; scan id = index. `trajectory` carries visit/place
/// annotations for synthetic drives and is empty otherwise.
struct Sequence {
  std::vector<PointCloud> clouds;
  std::vector<RangeImage> images;
  std::vector<Pose> poses;
  std::vector<OverlapLabel> labels;
  std::vector<TrajectoryPose> trajectory;
};

/// Generates the profile's world and renders, projects and labels every pose.
Sequence build_sequence(const Profile& profile);

/// Directory layout: velodyne/NNNNNN.bin, poses.txt, labels.txt,
/// images/NNNNNN.rim and, for synthetic drives, meta.txt (`scan visit place`
/// per line).
void write_sequence(const std::filesystem::path& dir, const Sequence& sequence);

/// Reads velodyne/*.bin (sorted by name) and poses.txt. A scan's image comes
/// from images/ when present with the profile's projection, otherwise the scan
/// is projected. Labels are computed when labels.txt is absent or
/// `recompute_labels` is set.
Sequence read_sequence(const std::filesystem::path& dir, const Profile& profile,
                       bool recompute_labels = false);

/// With annotations: the first pass is the database; places are grouped in
/// pairs (0-1, 2-3, ...), revisits in even pairs train alongside the database
/// and revisits in odd pairs are held out, so training never sees a held-out
/// scan. Without annotations every scan is database, training and query.
struct RevisitSplit {
  std::vector<std::uint64_t> database;
  std::vector<std::uint64_t> train_queries;
  std::vector<std::uint64_t> heldout_queries;
  std::vector<std::uint64_t> train_ids;
};

RevisitSplit revisit_split(const Sequence& sequence);

/// Training data restricted to pairs inside `split.train_ids`.
Dataset training_set(const Sequence& sequence, const RevisitSplit& split);

GroundTruth ground_truth(const Sequence& sequence);

template <typename Scalar>
std::vector<std::pair<std::uint64_t, Descriptor>> describe(const std::vector<RangeImage>& images,
                                                           const std::vector<std::uint64_t>& ids,
                                                           const Model<Scalar>& model) {
  std::vector<std::pair<std::uint64_t, Descriptor>> out;
  out.reserve(ids.size());
  for (std::uint64_t id : ids) {
    const auto d = descriptor(images.at(id), model);
    out.emplace_back(id, d.values().template cast<float>());
  }
  return out;
}

/// Held-out queries against the database.
template <typename Scalar>
Metrics evaluate_heldout(const Sequence& sequence, const RevisitSplit& split,
                         const Model<Scalar>& model, const EvalProtocol& protocol) {
  const auto index = build_index(describe(sequence.images, split.database, model));
  return evaluate(describe(sequence.images, split.heldout_queries, model), index,
                  ground_truth(sequence), protocol);
}

struct EquivarianceRow {
  std::ptrdiff_t shift = 0;
  double ccm = 0.0;         // max |CCM(shift(R)) - shift(CCM(R))|
  double rtm = 0.0;         // same after attention
  double descriptor = 0.0;  // max |D(shift(R)) - D(R)|
};

template <typename Scalar>
double max_abs_difference(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return static_cast<double>((a.values() - b.values()).cwiseAbs().maxCoeff());
}

/// Stage-wise shift errors of `model` on `image`, one row per shift.
template <typename Scalar>
std::vector<EquivarianceRow> equivariance_report(const Model<Scalar>& model,
                                                 const RangeImage& image,
                                                 const std::vector<std::ptrdiff_t>& shifts) {
  if (image.height() != model.config.height || image.width() != model.config.width) {
    throw std::invalid_argument("image is " + std::to_string(image.height()) + "x" +
                                std::to_string(image.width()) + ", model expects " +
                                std::to_string(model.config.height) + "x" +
                                std::to_string(model.config.width));
  }
  const auto& config = model.config;
  const auto stages = [&](const Tensor<Scalar>& x) {
    auto ccm = ccm_forward(x, config.ccm, model.weights);
    auto rtm = rtm_forward(ccm, config.rtm, model.weights);
    auto d = mlp_forward(netvlad(rtm, model.weights), model.weights);
    return std::array<Tensor<Scalar>, 3>{ccm, rtm, d};
  };
  const auto input = image_tensor<Scalar>(image, config.input_scale);
  const auto base = stages(input);
  std::vector<EquivarianceRow> rows;
  for (std::ptrdiff_t k : shifts) {
    const auto moved = stages(shift_columns(input, k));
    rows.push_back({k, max_abs_difference(moved[0], shift_columns(base[0], k)),
                    max_abs_difference(moved[1], shift_columns(base[1], k)),
                    max_abs_difference(moved[2], base[2])});
  }
  return rows;
}

}  // namespace rangeplace
