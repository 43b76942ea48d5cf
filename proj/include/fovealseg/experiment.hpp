// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end toy experiment: synthetic corpus, uniform pretraining, the Avg
// baseline, one or more alternate_train rounds, and evaluation.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fovealseg/config.hpp"
#include "fovealseg/data.hpp"
#include "fovealseg/fsnet.hpp"
#include "fovealseg/trainer.hpp"

namespace fovealseg {

struct ExperimentData {
  std::vector<FovealSample> train;
  std::vector<FovealSample> val;
};

/// Synthetic train/val corpora drawn from independent seed streams.
inline ExperimentData synthetic_experiment_data(const RunConfig& cfg) {
  return {make_corpus(cfg.synthetic, cfg.train_count, cfg.seed_for(SeedStream::kTrainData)),
          make_corpus(cfg.synthetic, cfg.val_count, cfg.seed_for(SeedStream::kValData))};
}

struct ExperimentResult {
  StageResult pretrain;
  std::optional<StageResult> baseline_stage;
  AlternateResult alternate;
  std::optional<EvalResult> baseline;  // Avg: uniform grid, heads trained for the stage-2 budget
  EvalResult fsnet;
  FSNet model;
};

struct ExperimentOptions {
  bool with_baseline = true;
  TrainHooks hooks;
};

inline ExperimentResult run_experiment(const RunConfig& cfg, const ExperimentData& data,
                                       const ExperimentOptions& opt = {}) {
  cfg.validate();
  ExperimentResult r;
  r.model = FSNet(cfg.model, cfg.seed_for(SeedStream::kModel));
  const auto train = prepare_samples(r.model, data.train);
  const auto val = prepare_samples(r.model, data.val);
  r.pretrain = train_uniform_heads(r.model, train, val, cfg.train, cfg.train.pretrain, "pretrain", 100, opt.hooks);
  if (opt.with_baseline) {
    FSNet avg = r.model;
    TrainHooks quiet = opt.hooks;
    quiet.checkpoint_dir.clear();
    r.baseline_stage = train_uniform_heads(avg, train, val, cfg.train, cfg.train.stage2, "avg", 101, quiet);
    r.baseline = evaluate(avg, data.val, SamplerKind::kUniform);
  }
  r.alternate = alternate_train(r.model, train, val, cfg.train, opt.hooks);
  r.fsnet = evaluate(r.model, data.val);
  return r;
}

}  // namespace fovealseg
