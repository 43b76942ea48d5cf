// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fovealseg/experiment.hpp"
#include "fovealseg/trainer.hpp"
#include "oracles.hpp"

namespace fovealseg {
namespace {

namespace fs = std::filesystem;

SyntheticSpec small_scenes() {
  SyntheticSpec s;
  s.height = 16;
  s.width = 16;
  s.min_size = 4;
  s.max_size = 8;
  s.max_shapes = 3;
  return s;
}

FSNetConfig small_model() {
  FSNetConfig c;
  c.source_height = 16;
  c.source_width = 16;
  c.target_height = 8;
  c.target_width = 8;
  c.kernel = {2};
  c.unet_base_channels = 4;
  c.unet_depth = 2;
  c.head_width = 8;
  return c;
}

TrainConfig small_train(int epochs = 3) {
  TrainConfig t = TrainConfig::desk();
  t.stage1.epochs = epochs;
  t.stage1.lr = 1e-3;
  t.stage2.epochs = epochs;
  t.pretrain.epochs = epochs;
  t.batch_size = 4;
  return t;
}

struct Fixture {
  std::vector<FovealSample> train_raw, val_raw;
  std::vector<PreparedSample> train, val;
  FSNet model;

  explicit Fixture(std::uint64_t seed = 1, int n_train = 16, int n_val = 6) : model(small_model(), seed) {
    train_raw = make_corpus(small_scenes(), n_train, 100 + seed);
    val_raw = make_corpus(small_scenes(), n_val, 200 + seed);
    train = prepare_samples(model, train_raw);
    val = prepare_samples(model, val_raw);
  }
};

template <class M>
std::uint64_t checksum(M& m) {
  return nn::parameter_checksum(m);
}

TEST(MaskIou, WorkedExamples) {
  Mask a(4, 4), b(4, 4);
  for (int j = 0; j < 4; ++j) a(0, j) = 1;
  EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
  for (int j = 0; j < 4; ++j) b(3, j) = 1;
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 0.0);
  Mask c(4, 4);
  c(0, 0) = c(0, 1) = 1;
  EXPECT_DOUBLE_EQ(mask_iou(a, c), 0.5);
  EXPECT_DOUBLE_EQ(mask_iou(Mask(3, 3), Mask(3, 3)), 1.0);
  EXPECT_THROW(mask_iou(Mask(2, 2), Mask(2, 3)), Error);
}

TEST(MaskIou, MatchesSetOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> density(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Mask a = oracle::random_mask(rng, 9, 7, density(rng));
    const Mask b = oracle::random_mask(rng, 9, 7, density(rng));
    EXPECT_NEAR(mask_iou(a, b), oracle::iou(a, b), 1e-15);
    EXPECT_DOUBLE_EQ(mask_iou(a, b), mask_iou(b, a));
  }
}

TEST(IoiIou, WrongClassScoresZero) {
  Mask a(3, 3);
  a(1, 1) = 1;
  EXPECT_DOUBLE_EQ(ioi_iou(a, 2, a, 2), 1.0);
  EXPECT_DOUBLE_EQ(ioi_iou(a, 1, a, 2), 0.0);
  EXPECT_DOUBLE_EQ(ioi_iou(Mask(3, 3), 1, Mask(3, 3), 2), 1.0);
}

TEST(Evaluate, OracleScoresPerfectly) {
  const auto data = make_corpus(small_scenes(), 12, 5);
  const auto r = evaluate_predictor(OracleModel{3}, data, 3);
  EXPECT_DOUBLE_EQ(r.iou, 1.0);
  EXPECT_DOUBLE_EQ(r.iou_prime, 1.0);
  EXPECT_DOUBLE_EQ(r.class_accuracy, 1.0);
  EXPECT_EQ(r.samples, 12);
  int total = 0;
  for (const auto& c : r.per_class) total += c.samples;
  EXPECT_EQ(total, 12);
}

TEST(Evaluate, WrongClassOracleScoresZero) {
  const auto data = make_corpus(small_scenes(), 9, 6);
  auto wrong = [](const FovealSample& s) {
    FSNetOutput out = OracleModel{3}(s);
    out.y_cls.assign(3, 0.0);
    out.y_cls[static_cast<std::size_t>((s.class_id + 1) % 3)] = 1.0;
    return out;
  };
  const auto r = evaluate_predictor(wrong, data, 3);
  EXPECT_DOUBLE_EQ(r.iou, 0.0);
  EXPECT_DOUBLE_EQ(r.class_accuracy, 0.0);
  EXPECT_THROW(evaluate_predictor(OracleModel{3}, std::vector<FovealSample>{}, 3), Error);
}

TEST(PrepareSamples, BuildsStacksAndOneHotLabels) {
  Fixture f;
  ASSERT_EQ(f.train.size(), 16u);
  const auto& s = f.train[0];
  EXPECT_EQ(s.stack.channels, 4);
  EXPECT_EQ(s.labels.channels, 4);
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) {
      double sum = 0.0;
      for (int c = 0; c < 4; ++c) sum += s.labels(c, i, j);
      EXPECT_EQ(sum, 1.0);
      EXPECT_EQ(s.labels(s.class_id + 1, i, j), s.y_binary(i, j) ? 1.0 : 0.0);
    }
  }
}

TEST(Stage1, UpdatesOnlySaliencyAndNeverEndsWorse) {
  Fixture f;
  const auto heads_before = checksum(f.model.heads());
  const auto sal_before = checksum(f.model.saliency_net());
  const auto r = train_stage1(f.model, f.train, f.val, small_train());
  EXPECT_EQ(checksum(f.model.heads()), heads_before);
  EXPECT_LE(r.best_val_loss, r.initial_val_loss);
  EXPECT_NEAR(saliency_path_loss(f.model, f.val, LossConfig{}), r.best_val_loss, 1e-12);
  if (r.best_epoch > 0) {
    EXPECT_NE(checksum(f.model.saliency_net()), sal_before);
  }
  EXPECT_EQ(r.val_losses.size(), static_cast<std::size_t>(r.epochs_run + 1));
}

TEST(Stage2, UpdatesOnlyHeadsAndKeepsIou) {
  Fixture f;
  const double iou_before = evaluate(f.model, f.val_raw).iou;
  const auto sal_before = checksum(f.model.saliency_net());
  const auto r = train_stage2(f.model, f.train, f.val, small_train(5));
  EXPECT_EQ(checksum(f.model.saliency_net()), sal_before);
  EXPECT_LE(r.best_val_loss, r.initial_val_loss);
  EXPECT_GE(evaluate(f.model, f.val_raw).iou, iou_before - 0.02);
}

TEST(Training, ZeroLearningRateLeavesParameters) {
  Fixture f;
  TrainConfig cfg = small_train(2);
  cfg.stage1.lr = cfg.stage2.lr = cfg.pretrain.lr = 0.0;
  cfg.stage1.weight_decay = cfg.stage2.weight_decay = 0.0;
  const auto before = checksum(f.model);
  alternate_train(f.model, f.train, f.val, cfg);
  train_uniform_heads(f.model, f.train, f.val, cfg, cfg.pretrain, "pretrain", 100);
  EXPECT_EQ(checksum(f.model), before);
}

TEST(Training, EarlyStoppingAfterPatience) {
  Fixture f;
  TrainConfig cfg = small_train(50);
  cfg.stage2.lr = 0.0;
  cfg.stage2.patience = 3;
  const auto r = train_stage2(f.model, f.train, f.val, cfg);
  EXPECT_EQ(r.epochs_run, 3);
  EXPECT_EQ(r.best_epoch, 0);
}

TEST(Training, OneRoundWritesTwoCheckpoints) {
  Fixture f;
  const fs::path dir = fs::temp_directory_path() / "fovealseg_test_trainer_ckpt";
  fs::remove_all(dir);
  TrainHooks hooks;
  hooks.checkpoint_dir = dir;
  std::vector<LogEntry> log;
  std::vector<std::string> stages;
  hooks.on_epoch = [&](const LogEntry& e) { log.push_back(e); };
  hooks.on_stage = [&](const std::string& s, int) { stages.push_back(s); };
  const auto r = alternate_train(f.model, f.train, f.val, small_train(2), hooks);
  ASSERT_EQ(r.checkpoints.size(), 2u);
  EXPECT_EQ(r.stages.size(), 2u);
  EXPECT_EQ(stages, (std::vector<std::string>{"stage1", "stage2"}));
  std::ifstream list(dir / "checkpoints.txt");
  std::vector<std::string> lines;
  for (std::string line; std::getline(list, line);) lines.push_back(line);
  EXPECT_EQ(lines, (std::vector<std::string>{"round0_stage1", "round0_stage2"}));
  for (std::size_t k = 0; k < log.size(); ++k) EXPECT_EQ(log[k].step, static_cast<int>(k) + 1);
  FSNet reloaded(small_model(), 99);
  reloaded.load(dir / "round0_stage2");
  EXPECT_EQ(checksum(reloaded), checksum(f.model));
  fs::remove_all(dir);
}

TEST(Training, DeterministicReplay) {
  for (int threads : {1, 3}) {
    Fixture a(4), b(4);
    TrainConfig cfg = small_train(2);
    cfg.threads = threads;
    alternate_train(a.model, a.train, a.val, cfg);
    alternate_train(b.model, b.train, b.val, cfg);
    EXPECT_EQ(checksum(a.model), checksum(b.model)) << threads << " threads";
  }
}

TEST(Training, RejectsBadConfigAndEmptyData) {
  Fixture f;
  TrainConfig cfg = small_train();
  cfg.rounds = 0;
  EXPECT_THROW(alternate_train(f.model, f.train, f.val, cfg), Error);
  cfg = small_train();
  cfg.stage1.plateau_factor = 1.5;
  EXPECT_THROW(train_stage1(f.model, f.train, f.val, cfg), Error);
  EXPECT_THROW(train_stage2(f.model, f.train, {}, small_train()), Error);
}

/// Two objects on one canvas; the IOI and the model input both follow gaze.
TEST(GazeSensitivity, TwoObjectSceneSwitchesInstance) {
  AnnotatedScene scene;
  scene.image = Tensor(3, 16, 16, 0.5);
  scene.instances.push_back({0, {{1, 1}, {7, 1}, {7, 7}, {1, 7}}});
  scene.instances.push_back({2, {{9, 9}, {15, 9}, {15, 15}, {9, 15}}});
  const auto left = gaze_to_ioi(scene, from_pixel({3, 3}, 16, 16));
  const auto right = gaze_to_ioi(scene, from_pixel({12, 12}, 16, 16));
  EXPECT_EQ(left.class_id, 0);
  EXPECT_EQ(right.class_id, 2);
  EXPECT_DOUBLE_EQ(mask_iou(left.y_binary, right.y_binary), 0.0);

  FSNet model(small_model(), 3);
  std::mt19937_64 rng(7);
  model.saliency_net().head().init_he(rng);
  const auto a = model.forward(scene.image, left.gaze);
  const auto b = model.forward(scene.image, right.gaze);
  EXPECT_NE(a.y_bm.data, b.y_bm.data);
  EXPECT_NE(a.grid.gh, b.grid.gh);
}

TEST(GazeSensitivity, TrainedModelFollowsGaze) {
  Fixture f(5, 96, 16);
  TrainConfig cfg = small_train(100);
  train_uniform_heads(f.model, f.train, f.val, cfg, cfg.pretrain, "pretrain", 100);
  const auto scenes_seed = 777u;
  double own = 0.0, other = 0.0;
  int pairs = 0;
  for (std::uint64_t k = 0; pairs < 20 && k < 500; ++k) {
    const AnnotatedScene scene = generate_synthetic_scene(small_scenes(), derive_seed(scenes_seed, {k}));
    if (scene.instances.size() < 2) continue;
    const auto owner = instance_owner(scene);
    std::vector<Mask> regions;
    for (int m = 0; m < 2; ++m) regions.push_back(visible_region(owner, 16, 16, m));
    if (regions[0].count() == 0 || regions[1].count() == 0) continue;
    for (int m = 0; m < 2; ++m) {
      const Mask& r = regions[static_cast<std::size_t>(m)];
      const auto it = std::find(r.data.begin(), r.data.end(), 1);
      const int p = static_cast<int>(it - r.data.begin());
      const auto pred = predict_fullres(f.model.forward(scene.image, from_pixel({p / 16, p % 16}, 16, 16),
                                                        Mode::kInference, SamplerKind::kUniform));
      own += mask_iou(pred.mask, r);
      other += mask_iou(pred.mask, regions[static_cast<std::size_t>(1 - m)]);
    }
    ++pairs;
  }
  ASSERT_EQ(pairs, 20);
  EXPECT_GT(own, other + 0.5 * pairs) << "own " << own / (2 * pairs) << " other " << other / (2 * pairs);
}

TEST(Experiment, SmallRunReportsBaselineAndFsnet) {
  RunConfig cfg;
  cfg.model = small_model();
  cfg.synthetic = small_scenes();
  cfg.train = small_train(2);
  cfg.train_count = 12;
  cfg.val_count = 6;
  const auto data = synthetic_experiment_data(cfg);
  ASSERT_EQ(data.train.size(), 12u);
  const auto r = run_experiment(cfg, data);
  ASSERT_TRUE(r.baseline.has_value());
  EXPECT_EQ(r.baseline->samples, 6);
  EXPECT_EQ(r.fsnet.samples, 6);
  EXPECT_EQ(r.alternate.stages.size(), 2u);
  for (double v : {r.baseline->iou, r.fsnet.iou, r.fsnet.iou_prime}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  ExperimentOptions opt;
  opt.with_baseline = false;
  EXPECT_FALSE(run_experiment(cfg, data, opt).baseline.has_value());
}

}  // namespace
}  // namespace fovealseg
