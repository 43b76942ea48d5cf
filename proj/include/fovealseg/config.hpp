// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Flat key=value run configuration shared by every CLI command.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fovealseg/data.hpp"
#include "fovealseg/error.hpp"
#include "fovealseg/fsnet.hpp"
#include "fovealseg/random.hpp"
#include "fovealseg/scheduler.hpp"
#include "fovealseg/trainer.hpp"

namespace fovealseg {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  require(ec == std::errc() && p == end, ErrorKind::kParse,
          "config key '" + key + "': cannot parse '" + std::string(text) + "'");
  return v;
}

inline void parse_value(const std::string& key, std::string_view text, int& v) { v = parse_number<int>(key, text); }
inline void parse_value(const std::string& key, std::string_view text, double& v) {
  v = parse_number<double>(key, text);
}
inline void parse_value(const std::string& key, std::string_view text, std::uint64_t& v) {
  v = parse_number<std::uint64_t>(key, text);
}
inline void parse_value(const std::string&, std::string_view text, std::string& v) { v = std::string(text); }
inline void parse_value(const std::string& key, std::string_view text, nn::OptimizerKind& v) {
  if (text == "nadam") {
    v = nn::OptimizerKind::kNAdam;
  } else if (text == "adamw") {
    v = nn::OptimizerKind::kAdamW;
  } else {
    fail(ErrorKind::kParse, "config key '" + key + "': optimizer must be nadam or adamw, got '" + std::string(text) + "'");
  }
}
inline void parse_value(const std::string& key, std::string_view text, std::vector<int>& v) {
  v.clear();
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = trim(text.substr(start, comma == std::string_view::npos ? text.size() - start : comma - start));
    if (!item.empty()) v.push_back(parse_number<int>(key, item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  require(!v.empty(), ErrorKind::kParse, "config key '" + key + "': empty list");
}

inline std::string format_value(int v) { return std::to_string(v); }
inline std::string format_value(std::uint64_t v) { return std::to_string(v); }
inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
inline std::string format_value(nn::OptimizerKind v) { return v == nn::OptimizerKind::kNAdam ? "nadam" : "adamw"; }
inline std::string format_value(const std::vector<int>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

}  // namespace detail

/// Every tunable of the artifact. Keys use underscores; the CLI accepts the
/// same keys as `--key value` overrides (dashes and underscores both work).
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;

  FSNetConfig model{};
  TrainConfig train = TrainConfig::desk();
  SchedulerConfig scheduler{};
  SyntheticSpec synthetic{};
  SequenceSpec sequence{};

  int train_count = 300;
  int val_count = 60;
  std::string dataset_dir;
  std::string trace_path;
  std::string frames_path;
  std::string checkpoint;
  std::vector<int> ablation_sigmas{8, 12, 16, 20};

  /// Calls f(key, field&) for every registered key, in a fixed order.
  template <class F>
  void for_each_field(F&& f) {
    f("seed", seed);
    f("threads", threads);

    f("source_height", model.source_height);
    f("source_width", model.source_width);
    f("target_height", model.target_height);
    f("target_width", model.target_width);
    f("saliency_height", model.saliency_height);
    f("saliency_width", model.saliency_width);
    f("kernel_sigma", model.kernel.sigma);
    f("num_classes", model.num_classes);
    f("unet_base_channels", model.unet_base_channels);
    f("unet_depth", model.unet_depth);
    f("head_width", model.head_width);
    f("density_offset", model.density_offset);

    auto stage = [&](const std::string& p, StageConfig& s) {
      f(p + "_optimizer", s.optimizer);
      f(p + "_lr", s.lr);
      f(p + "_weight_decay", s.weight_decay);
      f(p + "_epochs", s.epochs);
      f(p + "_patience", s.patience);
      f(p + "_plateau_factor", s.plateau_factor);
      f(p + "_plateau_patience", s.plateau_patience);
    };
    stage("pretrain", train.pretrain);
    stage("stage1", train.stage1);
    stage("stage2", train.stage2);
    f("rounds", train.rounds);
    f("batch_size", train.batch_size);
    f("loss_lambda", train.loss.lambda);
    f("loss_gamma", train.loss.gamma);
    f("loss_epsilon", train.loss.epsilon);

    f("alpha", scheduler.alpha);
    f("beta", scheduler.beta);
    f("mask_tolerance", scheduler.mask_tolerance);

    f("scene_height", synthetic.height);
    f("scene_width", synthetic.width);
    f("min_shapes", synthetic.min_shapes);
    f("max_shapes", synthetic.max_shapes);
    f("min_size", synthetic.min_size);
    f("max_size", synthetic.max_size);
    f("scene_noise", synthetic.noise);
    f("color_jitter", synthetic.color_jitter);

    f("sequence_frames", sequence.frames);
    f("fps", sequence.fps);
    f("saccade_rate", sequence.saccade_rate);
    f("continue_prob", sequence.continue_prob);
    f("gaze_threshold", sequence.gaze_threshold);
    f("fixation_jitter", sequence.fixation_jitter);
    f("frame_noise", sequence.frame_noise);
    f("max_shift", sequence.max_shift);
    f("exposure_step", sequence.exposure_step);

    f("train_count", train_count);
    f("val_count", val_count);
    f("dataset_dir", dataset_dir);
    f("trace_path", trace_path);
    f("frames_path", frames_path);
    f("checkpoint", checkpoint);
    f("ablation_sigmas", ablation_sigmas);
  }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    const_cast<RunConfig*>(this)->for_each_field([&](const std::string& k, auto&) { out.push_back(k); });
    return out;
  }

  bool has_key(std::string_view key) const {
    const auto k = keys();
    return std::find(k.begin(), k.end(), key) != k.end();
  }

  /// Throws kConfiguration for unknown keys and kParse for bad values.
  void set(const std::string& key, std::string_view value) {
    bool found = false;
    for_each_field([&](const std::string& k, auto& field) {
      if (k != key) return;
      detail::parse_value(k, detail::trim(value), field);
      found = true;
    });
    require(found, ErrorKind::kConfiguration, "unknown config key '" + key + "'");
    sync();
  }

  /// Propagates shared keys into the module configs that duplicate them.
  void sync() {
    train.seed = seed;
    train.threads = threads;
    sequence.beta = scheduler.beta;
    sequence.scene = synthetic;
  }

  std::string get(const std::string& key) const {
    std::string out;
    bool found = false;
    const_cast<RunConfig*>(this)->for_each_field([&](const std::string& k, auto& field) {
      if (k != key) return;
      out = detail::format_value(field);
      found = true;
    });
    require(found, ErrorKind::kConfiguration, "unknown config key '" + key + "'");
    return out;
  }

  /// `key = value` lines; '#' starts a comment.
  void merge_text(std::string_view text, const std::string& origin = "config") {
    std::istringstream in{std::string(text)};
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      require(eq != std::string::npos, ErrorKind::kParse, origin + ":" + std::to_string(n) + ": expected key = value");
      set(detail::trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::kIo, "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path.string());
  }

  /// Fully resolved configuration in the same format merge_text accepts.
  std::string dump() const {
    std::string out;
    for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
    return out;
  }

  void write_resolved(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config.txt");
    out << dump();
    require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + (dir / "config.txt").string());
  }

  void validate() const {
    model.validate();
    train.validate();
    scheduler.validate();
    synthetic.validate();
    sequence.validate();
    require(model.source_height == synthetic.height && model.source_width == synthetic.width,
            ErrorKind::kConfiguration, "source dims must match the synthetic scene dims");
    require(train_count >= 1 && val_count >= 1, ErrorKind::kConfiguration, "train_count and val_count must be >= 1");
    for (int s : ablation_sigmas) require(s >= 1, ErrorKind::kInvalidKernel, "ablation sigma must be >= 1");
  }

  std::uint64_t seed_for(SeedStream stream, std::uint64_t index = 0) const { return derive_seed(seed, stream, index); }
};

}  // namespace fovealseg
