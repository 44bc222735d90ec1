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

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "rangeplace/checkpoint.h"
#include "rangeplace/experiment.h"

namespace fs = std::filesystem;
namespace rp = rangeplace;

namespace {

constexpr double kTolerance64 = 1e-9;
constexpr double kTolerance32 = 1e-4;
constexpr double kControlThreshold = 1e-3;

struct Shared {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = ".";
  std::string profile;
  int precision = 32;
  bool precision_given = false;
};

rp::Profile resolve_profile(const Shared& shared) {
  rp::KeyValueConfig overrides;
  std::string name = shared.profile;
  if (!shared.config.empty()) {
    overrides = rp::KeyValueConfig::load(shared.config);
    if (name.empty() && overrides.has("profile")) name = overrides.get_string("profile");
  }
  if (name.empty()) name = "tiny";
  rp::Profile profile = rp::make_profile(name).with_overrides(overrides);
  if (shared.seed_given) {
    profile.world.seed = shared.seed;
    profile.model.seed = shared.seed;
    profile.train.seed = shared.seed;
  }
  return profile;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::vector<std::string>& args, const Shared& shared, int precision,
                    const rp::Profile& profile) {
  std::ostringstream m;
  m << "command " << command << "\n";
  m << "argv";
  for (const auto& a : args) m << ' ' << a;
  m << "\n";
  m << "seed "
    << (shared.seed_given ? std::to_string(shared.seed) : std::string("profile"))
    << "\n";
  m << "precision " << precision << "\n";
  m << "version " << RANGEPLACE_VERSION << "\n";
  m << "eigen " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION
    << "\n";
  m << "# effective configuration\n" << profile.to_config().to_string();
  write_text(out_dir / "manifest.txt", m.str());
}

template <typename F>
void dispatch(int precision, F&& f) {
  if (precision == 64) {
    f(std::type_identity<double>{});
  } else {
    f(std::type_identity<float>{});
  }
}

rp::RangeImage load_image(const fs::path& path, const rp::ProjectionParams& projection) {
  if (path.extension() == ".bin") return rp::project_cloud(rp::read_scan_bin(path), projection);
  return rp::read_range_image(path);
}

void print_metrics(const rp::Metrics& metrics, const fs::path& out_dir) {
  rp::write_metrics_text(std::cout, metrics);
  std::ofstream text(out_dir / "metrics.txt", std::ios::trunc);
  rp::write_metrics_text(text, metrics);
  std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
  rp::write_metrics_csv(csv, metrics);
  if (!text || !csv) throw std::runtime_error("cannot write metrics in " + out_dir.string());
}

void add_shared(CLI::App& sub, Shared& shared) {
  sub.add_option("--config", shared.config, "key = value overrides on top of the profile")
      ->check(CLI::ExistingFile);
  sub.add_option("--seed", shared.seed, "seed for world, weights and batches");
  sub.add_option("--out", shared.out, "output directory")->capture_default_str();
  sub.add_option("--profile", shared.profile, "tiny, desk or full (default tiny)")
      ->check(CLI::IsMember({"tiny", "desk", "full"}));
  sub.add_option("--precision", shared.precision, "32 or 64 bit arithmetic")
      ->check(CLI::IsMember({32, 64}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Range-image LiDAR place recognition"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", RANGEPLACE_VERSION);

  Shared shared;
  std::vector<std::string> scans;
  std::string data, checkpoint, index_path, queries_path, labels_path, poses_path, image_path;
  std::string mode = "circular";
  std::vector<long> shifts{1, 5, 45, 89};
  std::size_t top_k = 5;
  std::string scan_set = "database";

  auto* project = app.add_subcommand("project", "Project .bin scans into range images");
  project->add_option("--scan", scans, "scan files")->required()->check(CLI::ExistingFile);

  auto* label = app.add_subcommand("label", "Compute overlap labels for a sequence");
  label->add_option("--data", data, "sequence directory (velodyne/, poses.txt)")
      ->required()
      ->check(CLI::ExistingDirectory);

  app.add_subcommand("synth", "Render the profile's synthetic sequence");

  auto* train = app.add_subcommand("train", "Train on a sequence directory");
  train->add_option("--data", data, "sequence directory")->required()->check(CLI::ExistingDirectory);

  auto* index = app.add_subcommand("index", "Describe the database scans of a sequence");
  index->add_option("--data", data, "sequence directory")->required()->check(CLI::ExistingDirectory);
  index->add_option("--checkpoint", checkpoint, "weights file")->required()->check(CLI::ExistingFile);
  index->add_option("--set", scan_set, "database, heldout (queries) or all")
      ->capture_default_str()
      ->check(CLI::IsMember({"database", "heldout", "all"}));

  auto* query = app.add_subcommand("query", "Rank database entries for one scan");
  query->add_option("--index", index_path, "descriptor database")->required()->check(CLI::ExistingFile);
  query->add_option("--checkpoint", checkpoint, "weights file")->required()->check(CLI::ExistingFile);
  query->add_option("--scan", image_path, ".bin scan or range image")->required()->check(CLI::ExistingFile);
  query->add_option("--top-k", top_k, "matches to report")->capture_default_str()->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand(
      "eval", "Recall metrics from descriptor files, or held-out revisits of a sequence");
  auto* eval_index = eval->add_option("--index", index_path, "database descriptors")->check(CLI::ExistingFile);
  auto* eval_queries = eval->add_option("--queries", queries_path, "query descriptors")->check(CLI::ExistingFile);
  auto* eval_labels = eval->add_option("--labels", labels_path, "overlap labels")->check(CLI::ExistingFile);
  eval->add_option("--poses", poses_path, "poses, line = scan id (distance rule)")->check(CLI::ExistingFile);
  auto* eval_data = eval->add_option("--data", data, "sequence directory")->check(CLI::ExistingDirectory);
  auto* eval_checkpoint = eval->add_option("--checkpoint", checkpoint, "weights file")->check(CLI::ExistingFile);
  eval_index->needs(eval_queries)->excludes(eval_data);
  eval_queries->needs(eval_index);
  eval_labels->needs(eval_index);
  eval_data->needs(eval_checkpoint);
  eval_checkpoint->needs(eval_data);

  auto* equicheck = app.add_subcommand("equicheck", "Shift equivariance per pipeline stage");
  equicheck->add_option("--mode", mode, "circular or zero (control)")
      ->capture_default_str()
      ->check(CLI::IsMember({"circular", "zero"}));
  equicheck->add_option("--checkpoint", checkpoint, "weights file (default: random)")
      ->check(CLI::ExistingFile);
  equicheck->add_option("--image", image_path, ".bin scan or range image (default: synthetic)")
      ->check(CLI::ExistingFile);
  equicheck->add_option("--shifts", shifts, "column shifts")->delimiter(',')->capture_default_str();

  for (CLI::App* sub : app.get_subcommands({})) add_shared(*sub, shared);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) {
      std::cerr << app.help();
      return 1;
    }
    return 0;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  shared.seed_given = sub->count("--seed") > 0;
  shared.precision_given = sub->count("--precision") > 0;
  const std::vector<std::string> args(argv + 1, argv + argc);
  const int precision =
      shared.precision_given ? shared.precision : (command == "equicheck" ? 64 : 32);

  try {
    if (command == "eval" && eval_index->count() == 0 && eval_data->count() == 0) {
      throw std::invalid_argument("eval needs --index/--queries/--labels or --data/--checkpoint");
    }
    if (command == "eval" && eval_index->count() > 0 && eval_labels->count() == 0 &&
        poses_path.empty()) {
      throw std::invalid_argument("eval needs --labels or --poses with --index");
    }
    const rp::Profile profile = resolve_profile(shared);
    const fs::path out(shared.out);
    fs::create_directories(out);
    write_manifest(out, command, args, shared, precision, profile);

    int status = 0;
    dispatch(precision, [&]<typename Scalar>(std::type_identity<Scalar>) {
      if (command == "project") {
        for (const auto& scan : scans) {
          const fs::path path(scan);
          const auto image = rp::project_cloud(rp::read_scan_bin(path), profile.projection);
          const auto target = out / (path.stem().string() + ".rim");
          rp::write_range_image(target, image);
          std::cout << target.string() << " valid " << image.valid_count() << "\n";
        }
      } else if (command == "label") {
        const auto sequence = rp::read_sequence(data, profile, true);
        rp::write_labels(out / "labels.txt", sequence.labels);
        const auto closures = std::count_if(
            sequence.labels.begin(), sequence.labels.end(),
            [&](const rp::OverlapLabel& l) { return rp::is_loop_closure(l.overlap); });
        std::cout << "scans " << sequence.clouds.size() << "\nlabels " << sequence.labels.size()
                  << "\nloop_closures " << closures << "\n";
      } else if (command == "synth") {
        const auto sequence = rp::build_sequence(profile);
        rp::write_sequence(out, sequence);
        profile.to_config().save(out / "config.cfg");
        std::cout << "scans " << sequence.clouds.size() << "\nlabels " << sequence.labels.size()
                  << "\n";
      } else if (command == "train") {
        const auto sequence = rp::read_sequence(data, profile);
        const auto split = rp::revisit_split(sequence);
        auto model = rp::Model<Scalar>::create(profile.model);
        const auto result = rp::fit(rp::training_set(sequence, split), model, profile.train, out);
        profile.to_config().save(out / "config.cfg");
        std::cout << "initial_loss " << rp::format_double(result.initial_loss) << "\n";
        std::cout << "final_loss "
                  << rp::format_double(result.epoch_loss.empty() ? result.initial_loss
                                                                 : result.epoch_loss.back())
                  << "\n";
        std::cout << "checkpoint " << result.checkpoints.back().string() << "\n";
        if (!sequence.trajectory.empty() && !split.heldout_queries.empty()) {
          const auto metrics = rp::evaluate_heldout(sequence, split, model, profile.eval);
          std::ofstream held(out / "heldout_metrics.txt", std::ios::trunc);
          rp::write_metrics_text(held, metrics);
          std::cout << "heldout_recall_at_1 " << rp::format_double(metrics.recall_at_1) << "\n";
        }
      } else if (command == "index") {
        const auto sequence = rp::read_sequence(data, profile);
        const auto split = rp::revisit_split(sequence);
        const auto model = rp::load_model<Scalar>(checkpoint, profile.model);
        std::vector<std::uint64_t> ids = split.database;
        if (scan_set == "heldout") ids = split.heldout_queries;
        if (scan_set == "all") {
          ids.resize(sequence.images.size());
          std::iota(ids.begin(), ids.end(), std::uint64_t{0});
        }
        const auto built = rp::build_index(rp::describe(sequence.images, ids, model));
        rp::save_index(out / (scan_set == "database" ? "index.rld" : scan_set + ".rld"), built);
        std::cout << "entries " << built.size() << "\ndim " << built.dim() << "\n";
      } else if (command == "query") {
        const auto database = rp::load_index(index_path);
        const auto model = rp::load_model<Scalar>(checkpoint, profile.model);
        const auto image = load_image(image_path, profile.projection);
        const rp::Descriptor d = rp::descriptor(image, model).values().template cast<float>();
        const auto matches = rp::query(d, database, {}, top_k);
        std::ostringstream csv;
        csv << "rank,scan_id,similarity\n";
        for (std::size_t i = 0; i < matches.size(); ++i) {
          std::cout << i + 1 << ' ' << matches[i].scan_id << ' '
                    << rp::format_double(matches[i].similarity) << "\n";
          csv << i + 1 << ',' << matches[i].scan_id << ','
              << rp::format_double(matches[i].similarity) << "\n";
        }
        write_text(out / "matches.csv", csv.str());
      } else if (command == "eval") {
        rp::Metrics metrics;
        if (!data.empty()) {
          const auto sequence = rp::read_sequence(data, profile);
          const auto split = rp::revisit_split(sequence);
          const auto model = rp::load_model<Scalar>(checkpoint, profile.model);
          metrics = rp::evaluate_heldout(sequence, split, model, profile.eval);
        } else {
          const auto database = rp::load_index(index_path);
          const auto query_file = rp::load_index(queries_path);
          std::vector<std::pair<std::uint64_t, rp::Descriptor>> queries;
          for (std::size_t i = 0; i < query_file.size(); ++i) {
            queries.emplace_back(query_file.ids()[i], query_file.descriptor(i));
          }
          rp::GroundTruth truth;
          if (!labels_path.empty()) truth.overlaps = rp::LabelTable(rp::read_labels(labels_path));
          if (!poses_path.empty()) {
            const auto poses = rp::read_poses(poses_path);
            for (std::size_t i = 0; i < poses.size(); ++i) {
              truth.positions.emplace(i, poses[i].translation);
            }
          }
          metrics = rp::evaluate(queries, database, truth, profile.eval);
        }
        print_metrics(metrics, out);
      } else if (command == "equicheck") {
        rp::ModelConfig config = profile.model;
        if (mode == "zero") config.ccm.horizontal = rp::HorizontalPadding::kZero;
        const auto model = checkpoint.empty() ? rp::Model<Scalar>::create(config)
                                              : rp::load_model<Scalar>(checkpoint, config);
        rp::RangeImage image;
        if (image_path.empty()) {
          const auto world = rp::generate_world(profile.world);
          const auto& first = world.trajectory.front();
          image = rp::synth_scan(world, first.pose, profile.projection, first.visit).image;
        } else {
          image = load_image(image_path, profile.projection);
        }
        const std::vector<std::ptrdiff_t> ks(shifts.begin(), shifts.end());
        const auto rows = rp::equivariance_report(model, image, ks);
        double ccm = 0.0, rtm = 0.0, desc = 0.0;
        std::ostringstream csv;
        csv << "shift,ccm,rtm,descriptor\n";
        std::cout << "mode " << mode << "\nprecision " << precision << "\n";
        std::cout << "shift ccm rtm descriptor\n";
        for (const auto& r : rows) {
          std::cout << r.shift << ' ' << r.ccm << ' ' << r.rtm << ' ' << r.descriptor << "\n";
          csv << r.shift << ',' << rp::format_double(r.ccm) << ',' << rp::format_double(r.rtm)
              << ',' << rp::format_double(r.descriptor) << "\n";
          ccm = std::max(ccm, r.ccm);
          rtm = std::max(rtm, r.rtm);
          desc = std::max(desc, r.descriptor);
        }
        write_text(out / "equicheck.csv", csv.str());
        std::cout << "max_ccm_error " << ccm << "\nmax_rtm_error " << rtm
                  << "\nmax_descriptor_error " << desc << "\n";
        const double tolerance = precision == 64 ? kTolerance64 : kTolerance32;
        if (mode == "circular") {
          const bool ok = ccm <= tolerance && rtm <= tolerance && desc <= tolerance;
          std::cout << (ok ? "equivariance holds" : "equivariance VIOLATED") << " (tolerance "
                    << tolerance << ")\n";
          status = ok ? 0 : 2;
        } else {
          const bool broken = ccm > kControlThreshold;
          std::cout << (broken ? "control failed as expected" : "control unexpectedly equivariant")
                    << " (threshold " << kControlThreshold << ")\n";
          status = broken ? 0 : 2;
        }
      }
    });
    return status;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
