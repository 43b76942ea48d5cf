// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Alternating two-stage training (saliency network, then heads) with
// per-epoch validation, plateau decay and early stopping; IoU evaluation at
// full resolution and in the warped space.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fovealseg/data.hpp"
#include "fovealseg/error.hpp"
#include "fovealseg/fsnet.hpp"
#include "fovealseg/losses.hpp"
#include "fovealseg/nn.hpp"
#include "fovealseg/random.hpp"
#include "fovealseg/sampler.hpp"

namespace fovealseg {

struct StageConfig {
  nn::OptimizerKind optimizer = nn::OptimizerKind::kAdamW;
  double lr = 5e-3;
  double weight_decay = 1e-5;
  int epochs = 800;
  int patience = 20;          // early stopping, epochs without improvement
  double plateau_factor = 0.9;
  int plateau_patience = 10;  // epochs without improvement before decaying

  void validate(const std::string& name) const {
    require(lr >= 0.0 && weight_decay >= 0.0, ErrorKind::kConfiguration, name + ": lr and weight decay must be >= 0");
    require(epochs >= 0 && patience >= 1 && plateau_patience >= 0, ErrorKind::kConfiguration,
            name + ": epochs must be >= 0 and patience >= 1");
    require(plateau_factor > 0.0 && plateau_factor <= 1.0, ErrorKind::kConfiguration,
            name + ": plateau factor must lie in (0, 1]");
  }
};

struct TrainConfig {
  StageConfig stage1{nn::OptimizerKind::kNAdam, 0.05, 1e-5, 500, 20, 0.9, 10};
  StageConfig stage2{nn::OptimizerKind::kAdamW, 5e-3, 1e-5, 800, 20, 0.9, 10};
  StageConfig pretrain{nn::OptimizerKind::kAdamW, 5e-3, 1e-5, 800, 20, 0.9, 10};
  int rounds = 1;
  int batch_size = 16;
  int threads = 1;
  std::uint64_t seed = 0;
  LossConfig loss{};

  /// Epoch budgets and stage-1 rate for single-core desk runs.
  static TrainConfig desk() {
    TrainConfig c;
    c.stage1.epochs = 30;
    c.stage1.lr = 1e-4;
    c.stage2.epochs = 50;
    c.pretrain.epochs = 50;
    return c;
  }

  void validate() const {
    stage1.validate("stage1");
    stage2.validate("stage2");
    pretrain.validate("pretrain");
    loss.validate();
    require(rounds >= 1, ErrorKind::kConfiguration, "rounds must be >= 1");
    require(batch_size >= 1, ErrorKind::kConfiguration, "batch_size must be >= 1");
    require(threads >= 1, ErrorKind::kConfiguration, "threads must be >= 1");
  }
};

/// Training-ready form of a FovealSample.
struct PreparedSample {
  Tensor image;
  GazePoint gaze;
  Tensor stack;   // RGB + gaze map
  Tensor labels;  // (C+1) x H x W one-hot
  Mask y_binary;
  int class_id = 0;
};

template <class Model>
std::vector<PreparedSample> prepare_samples(const Model& model, const std::vector<FovealSample>& samples) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back({s.image, s.gaze, model.input_stack(s.image, s.gaze), one_hot_labels(s, model.config().num_classes),
                   s.y_binary, s.class_id});
  }
  return out;
}

struct LogEntry {
  int step = 0;  // global epoch counter across stages
  std::string stage;
  double loss = 0.0;      // mean training loss of the epoch
  double val_loss = 0.0;
  double lr = 0.0;

  std::string line() const {
    std::ostringstream os;
    os << step << ',' << stage << ',' << loss << ',' << val_loss << ',' << lr;
    return os.str();
  }
};

struct TrainHooks {
  std::function<void(const LogEntry&)> on_epoch;
  std::function<void(const std::string& stage, int round)> on_stage;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
};

struct StageResult {
  int epochs_run = 0;
  int best_epoch = 0;  // 0 is the untrained starting point
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::vector<double> val_losses;  // index 0: before the first epoch
};

namespace detail {

template <class Module>
std::vector<std::vector<double>> snapshot(Module& m) {
  std::vector<std::vector<double>> out;
  m.visit_parameters([&](const std::string&, std::vector<double>& v) { out.push_back(v); });
  return out;
}

template <class Module>
void restore(Module& m, const std::vector<std::vector<double>>& s) {
  std::size_t k = 0;
  m.visit_parameters([&](const std::string&, std::vector<double>& v) { v = s[k++]; });
}

/// Sums per-sample gradients of `indices` into `grads`. Work is split into
/// fixed contiguous chunks whose partial sums are added in chunk order, so
/// the result does not depend on the thread count's scheduling.
template <class Module, class GradFn>
double accumulate(const Module& prototype, Module& grads, const std::vector<std::size_t>& indices, int threads,
                  const GradFn& grad_fn) {
  nn::zero_parameters(grads);
  const std::size_t n = indices.size();
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (chunks <= 1) {
    double loss = 0.0;
    for (std::size_t i : indices) loss += grad_fn(i, &grads);
    return loss;
  }
  std::vector<Module> partial(chunks, prototype);
  std::vector<double> losses(chunks, 0.0);
  std::vector<std::thread> pool;
  for (std::size_t c = 0; c < chunks; ++c) {
    nn::zero_parameters(partial[c]);
    pool.emplace_back([&, c] {
      for (std::size_t k = c * n / chunks; k < (c + 1) * n / chunks; ++k) losses[c] += grad_fn(indices[k], &partial[c]);
    });
  }
  for (auto& t : pool) t.join();
  const auto dst = nn::parameter_list(grads);
  double loss = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const auto src = nn::parameter_list(partial[c]);
    for (std::size_t p = 0; p < dst.size(); ++p) {
      for (std::size_t e = 0; e < dst[p]->size(); ++e) (*dst[p])[e] += (*src[p])[e];
    }
    loss += losses[c];
  }
  return loss;
}

/// Generic epoch loop: shuffled mini-batches, plateau decay on the
/// validation loss, early stopping with best-weight restore.
template <class Module, class GradFn, class ValFn>
StageResult run_stage(Module& module, std::size_t train_size, const StageConfig& sc, const TrainConfig& cfg,
                      const std::string& stage, std::uint64_t seed, const GradFn& grad_fn, const ValFn& val_fn,
                      const TrainHooks& hooks, int& global_step) {
  StageResult r;
  r.initial_val_loss = r.best_val_loss = val_fn();
  r.val_losses.push_back(r.initial_val_loss);
  auto best = snapshot(module);
  nn::Optimizer opt(sc.optimizer, sc.weight_decay);
  nn::PlateauSchedule plateau(sc.lr, sc.plateau_factor, sc.plateau_patience);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(train_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Module grads = module;
  const auto params = nn::parameter_list(module);
  const auto grad_list = nn::parameter_list(grads);
  for (int epoch = 1; epoch <= sc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    const double lr = plateau.lr();
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                           order.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(order.size(), b + cfg.batch_size)));
      epoch_loss += accumulate(module, grads, batch, cfg.threads, grad_fn);
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto* g : grad_list) {
        for (double& v : *g) v *= inv;
      }
      opt.step(params, grad_list, lr);
    }
    const double val = val_fn();
    plateau.observe(val);
    r.val_losses.push_back(val);
    r.epochs_run = epoch;
    if (hooks.on_epoch) hooks.on_epoch({++global_step, stage, epoch_loss / static_cast<double>(train_size), val, lr});
    if (val < r.best_val_loss) {
      r.best_val_loss = val;
      r.best_epoch = epoch;
      best = snapshot(module);
    } else if (epoch - r.best_epoch >= sc.patience) {
      break;
    }
  }
  restore(module, best);
  return r;
}

}  // namespace detail

/// Warped inputs and warped-space targets under a fixed sampler.
struct WarpedSet {
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;  // C x h x w
};

template <class Model>
WarpedSet warp_set(const Model& model, const std::vector<PreparedSample>& data, SamplerKind sampler) {
  WarpedSet w;
  for (const auto& s : data) {
    const SamplingGrid g = sampler == SamplerKind::kSaliency ? model.grid(model.saliency(s.stack)) : model.uniform();
    w.inputs.push_back(warp(s.stack, g, WarpMode::kNearest));
    w.targets.push_back(class_channels(subsample_labels(s.labels, g)));
  }
  return w;
}

template <class Model>
double saliency_path_loss(const Model& model, const std::vector<PreparedSample>& data, const LossConfig& loss) {
  double total = 0.0;
  for (const auto& s : data) total += model.saliency_gradient(s.stack, s.labels, loss, nullptr);
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

template <class Model>
double heads_loss(const Model& model, const WarpedSet& w, const LossConfig& loss) {
  double total = 0.0;
  for (std::size_t k = 0; k < w.inputs.size(); ++k) total += model.heads_gradient(w.inputs[k], w.targets[k], loss, nullptr);
  return w.inputs.empty() ? 0.0 : total / static_cast<double>(w.inputs.size());
}

template <class Model>
StageResult train_stage1_impl(Model& model, const std::vector<PreparedSample>& train,
                              const std::vector<PreparedSample>& val, const TrainConfig& cfg, const TrainHooks& hooks,
                              int round, int& step) {
  if (hooks.on_stage) hooks.on_stage("stage1", round);
  auto grad_fn = [&](std::size_t i, UNet* g) {
    return model.saliency_gradient(train[i].stack, train[i].labels, cfg.loss, g);
  };
  auto val_fn = [&] { return saliency_path_loss(model, val, cfg.loss); };
  return detail::run_stage(model.saliency_net(), train.size(), cfg.stage1, cfg, "stage1",
                           derive_seed(cfg.seed, SeedStream::kShuffle, 2 * static_cast<std::uint64_t>(round)), grad_fn,
                           val_fn, hooks, step);
}

/// Updates only the saliency network; the heads stay bitwise unchanged.
template <class Model>
StageResult train_stage1(Model& model, const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& val,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}, int round = 0) {
  cfg.validate();
  require(!train.empty() && !val.empty(), ErrorKind::kConfiguration, "stage 1 needs training and validation data");
  int step = 0;
  return train_stage1_impl(model, train, val, cfg, hooks, round, step);
}

template <class Model>
StageResult train_heads_impl(Model& model, const std::vector<PreparedSample>& train,
                             const std::vector<PreparedSample>& val, const TrainConfig& cfg, const StageConfig& sc,
                             SamplerKind sampler, const std::string& stage, std::uint64_t seed,
                             const TrainHooks& hooks, int& step) {
  const WarpedSet wt = warp_set(model, train, sampler);
  const WarpedSet wv = warp_set(model, val, sampler);
  using Heads = std::remove_reference_t<decltype(model.heads())>;
  auto grad_fn = [&](std::size_t i, Heads* g) {
    return model.heads_gradient(wt.inputs[i], wt.targets[i], cfg.loss, g);
  };
  auto val_fn = [&] { return heads_loss(model, wv, cfg.loss); };
  return detail::run_stage(model.heads(), train.size(), sc, cfg, stage, seed, grad_fn, val_fn, hooks, step);
}

/// Updates only the heads, on inputs warped through the frozen saliency
/// sampler with the inference-time (nearest) warp.
template <class Model>
StageResult train_stage2(Model& model, const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& val,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}, int round = 0) {
  cfg.validate();
  require(!train.empty() && !val.empty(), ErrorKind::kConfiguration, "stage 2 needs training and validation data");
  if (hooks.on_stage) hooks.on_stage("stage2", round);
  int step = 0;
  return train_heads_impl(model, train, val, cfg, cfg.stage2, SamplerKind::kSaliency, "stage2",
                          derive_seed(cfg.seed, SeedStream::kShuffle, 2 * static_cast<std::uint64_t>(round) + 1), hooks,
                          step);
}

/// Trains the heads on uniformly downsampled inputs. Gives FSNet a trained
/// segmentation backbone to start from and doubles as the Avg baseline.
template <class Model>
StageResult train_uniform_heads(Model& model, const std::vector<PreparedSample>& train,
                                const std::vector<PreparedSample>& val, const TrainConfig& cfg, const StageConfig& sc,
                                const std::string& stage, std::uint64_t stream, const TrainHooks& hooks = {}) {
  cfg.validate();
  require(!train.empty() && !val.empty(), ErrorKind::kConfiguration, stage + " needs training and validation data");
  if (hooks.on_stage) hooks.on_stage(stage, 0);
  int step = 0;
  return train_heads_impl(model, train, val, cfg, sc, SamplerKind::kUniform, stage,
                          derive_seed(cfg.seed, SeedStream::kShuffle, stream), hooks, step);
}

struct AlternateResult {
  std::vector<StageResult> stages;               // stage1, stage2, stage1, ...
  std::vector<std::filesystem::path> checkpoints;
};

/// `rounds` x (stage 1, stage 2), checkpointing after every stage when a
/// checkpoint directory is set.
template <class Model>
AlternateResult alternate_train(Model& model, const std::vector<PreparedSample>& train,
                                const std::vector<PreparedSample>& val, const TrainConfig& cfg,
                                const TrainHooks& hooks = {}) {
  cfg.validate();
  require(!train.empty() && !val.empty(), ErrorKind::kConfiguration, "training needs training and validation data");
  AlternateResult out;
  int step = 0;
  auto checkpoint = [&](const std::string& name) {
    if (hooks.checkpoint_dir.empty()) return;
    const auto dir = hooks.checkpoint_dir / name;
    model.save(dir);
    out.checkpoints.push_back(dir);
    std::ofstream list(hooks.checkpoint_dir / "checkpoints.txt");
    for (const auto& c : out.checkpoints) list << c.filename().string() << '\n';
  };
  for (int round = 0; round < cfg.rounds; ++round) {
    out.stages.push_back(train_stage1_impl(model, train, val, cfg, hooks, round, step));
    checkpoint("round" + std::to_string(round) + "_stage1");
    if (hooks.on_stage) hooks.on_stage("stage2", round);
    out.stages.push_back(train_heads_impl(model, train, val, cfg, cfg.stage2, SamplerKind::kSaliency, "stage2",
                                          derive_seed(cfg.seed, SeedStream::kShuffle,
                                                      2 * static_cast<std::uint64_t>(round) + 1),
                                          hooks, step));
    checkpoint("round" + std::to_string(round) + "_stage2");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

/// |a and b| / |a or b|; two empty masks count as a perfect match.
inline double mask_iou(const Mask& a, const Mask& b) {
  require(a.height == b.height && a.width == b.width, ErrorKind::kShape, "mask_iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    inter += a.data[k] && b.data[k];
    uni += a.data[k] || b.data[k];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// IoU with the class rule: a wrong class zeroes the intersection.
inline double ioi_iou(const Mask& pred, int pred_class, const Mask& gt, int gt_class) {
  if (pred_class == gt_class) return mask_iou(pred, gt);
  const auto uni = std::count_if(pred.data.begin(), pred.data.end(), [](auto v) { return v != 0; }) +
                   std::count_if(gt.data.begin(), gt.data.end(), [](auto v) { return v != 0; });
  return uni == 0 ? 1.0 : 0.0;
}

struct ClassResult {
  int class_id = 0;
  int samples = 0;
  double iou = 0.0;
  double iou_prime = 0.0;
  double accuracy = 0.0;
};

struct EvalResult {
  double iou = 0.0;
  double iou_prime = 0.0;
  double class_accuracy = 0.0;
  int samples = 0;
  std::vector<ClassResult> per_class;

  nlohmann::json to_json() const {
    nlohmann::json j{{"iou", iou}, {"iou_prime", iou_prime}, {"class_accuracy", class_accuracy}, {"samples", samples}};
    j["per_class"] = nlohmann::json::array();
    for (const auto& c : per_class) {
      j["per_class"].push_back({{"class", c.class_id},
                                {"samples", c.samples},
                                {"iou", c.iou},
                                {"iou_prime", c.iou_prime},
                                {"accuracy", c.accuracy}});
    }
    return j;
  }
};

/// Scores one prediction against its sample at full resolution and in the
/// prediction's warped space.
struct SampleScore {
  double iou = 0.0;
  double iou_prime = 0.0;
  bool correct_class = false;
};

inline SampleScore score_prediction(const FSNetOutput& out, const FovealSample& s, int num_classes) {
  const FullResPrediction full = predict_fullres(out);
  const Tensor gt_warped = subsample_labels(one_hot_labels(s, num_classes), out.grid);
  Mask gt_prime(gt_warped.height, gt_warped.width);
  for (std::size_t k = 0; k < gt_prime.data.size(); ++k) gt_prime.data[k] = gt_warped.data[k] == 0.0;
  const Mask pred_prime = threshold(out.y_bm, 0.5);
  return {ioi_iou(full.mask, full.label, s.y_binary, s.class_id),
          ioi_iou(pred_prime, full.label, gt_prime, s.class_id), full.label == s.class_id};
}

/// Evaluates any predictor `FSNetOutput(const FovealSample&)`.
template <class Predict>
EvalResult evaluate_predictor(const Predict& predict, const std::vector<FovealSample>& data, int num_classes) {
  require(!data.empty(), ErrorKind::kConfiguration, "evaluate: empty data");
  EvalResult r;
  r.per_class.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) r.per_class[static_cast<std::size_t>(c)].class_id = c;
  for (const auto& s : data) {
    const SampleScore sc = score_prediction(predict(s), s, num_classes);
    r.iou += sc.iou;
    r.iou_prime += sc.iou_prime;
    r.class_accuracy += sc.correct_class;
    auto& pc = r.per_class.at(static_cast<std::size_t>(s.class_id));
    ++pc.samples;
    pc.iou += sc.iou;
    pc.iou_prime += sc.iou_prime;
    pc.accuracy += sc.correct_class;
  }
  r.samples = static_cast<int>(data.size());
  r.iou /= r.samples;
  r.iou_prime /= r.samples;
  r.class_accuracy /= r.samples;
  for (auto& pc : r.per_class) {
    if (pc.samples == 0) continue;
    pc.iou /= pc.samples;
    pc.iou_prime /= pc.samples;
    pc.accuracy /= pc.samples;
  }
  return r;
}

template <class Model>
EvalResult evaluate(const Model& model, const std::vector<FovealSample>& data,
                    SamplerKind sampler = SamplerKind::kSaliency) {
  return evaluate_predictor(
      [&](const FovealSample& s) { return model.forward(s.image, s.gaze, Mode::kInference, sampler); }, data,
      model.config().num_classes);
}

/// Predictor that returns the ground truth on an identity grid.
struct OracleModel {
  int num_classes = 3;

  FSNetOutput operator()(const FovealSample& s) const {
    FSNetOutput out;
    out.grid = uniform_grid(s.y_binary.height, s.y_binary.width, s.y_binary.height, s.y_binary.width);
    out.y_bm = Tensor(1, s.y_binary.height, s.y_binary.width);
    for (std::size_t k = 0; k < s.y_binary.data.size(); ++k) out.y_bm.data[k] = s.y_binary.data[k];
    out.y_cls.assign(static_cast<std::size_t>(num_classes), 0.0);
    out.y_cls[static_cast<std::size_t>(s.class_id)] = 1.0;
    out.y_cm = compose_mask(out.y_bm, out.y_cls);
    return out;
  }
};

}  // namespace fovealseg
