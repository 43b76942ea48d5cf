// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "fovealseg/fsnet.hpp"

namespace fovealseg {
namespace {

namespace fs = std::filesystem;

FSNetConfig small_config() {
  FSNetConfig c;
  c.source_height = 16;
  c.source_width = 16;
  c.target_height = 8;
  c.target_width = 8;
  c.kernel = {2};
  c.num_classes = 2;
  c.unet_base_channels = 3;
  c.unet_depth = 2;
  c.head_width = 4;
  return c;
}

Tensor random_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(3, h, w);
  for (double& v : t.data) v = u(rng);
  return t;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fovealseg_test_fsnet_" + name);
  fs::remove_all(p);
  return p;
}

/// Heads whose mask branch is pinned to "background everywhere".
struct EmptyMaskHeads {
  struct Trace {};
  HeadsConfig cfg;
  EmptyMaskHeads() = default;
  EmptyMaskHeads(const HeadsConfig& c, std::mt19937_64&) : cfg(c) {}
  HeadOutput forward(const Tensor& x, Trace*) const {
    std::vector<double> logits(static_cast<std::size_t>(cfg.num_classes), 0.0);
    logits[0] = 3.0;
    return {Tensor(1, x.height, x.width, -1000.0), logits};
  }
  Tensor backward(const Trace&, const Tensor& d, std::span<const double>, EmptyMaskHeads*, bool) const {
    return Tensor(4, d.height, d.width);
  }
  void visit_parameters(const nn::ParamVisitor&) {}
  const HeadsConfig& config() const { return cfg; }
};

TEST(ComposeMask, WorkedExample) {
  Tensor bm(1, 1, 2);
  bm.data = {0.8, 0.1};
  const std::vector<double> cls{0.25, 0.75};
  const Tensor cm = compose_mask(bm, cls);
  ASSERT_EQ(cm.channels, 2);
  EXPECT_DOUBLE_EQ(cm(0, 0, 0), 0.2);
  EXPECT_DOUBLE_EQ(cm(1, 0, 0), 0.6);
  EXPECT_DOUBLE_EQ(cm(1, 0, 1), 0.075);
}

TEST(ComposeMask, IsOuterProductAndMarginalizesToMask) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor bm(1, 5, 6);
  for (double& v : bm.data) v = u(rng);
  const auto cls = nn::softmax(std::vector<double>{0.3, -1.0, 2.0});
  const Tensor cm = compose_mask(bm, cls);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 6; ++j) {
      double s = 0.0;
      for (int c = 0; c < 3; ++c) {
        EXPECT_DOUBLE_EQ(cm(c, i, j), cls[static_cast<std::size_t>(c)] * bm(0, i, j));
        s += cm(c, i, j);
      }
      EXPECT_NEAR(s, bm(0, i, j), 1e-15);
    }
  }
}

TEST(ComposeMask, ZeroMaskGivesZeroVolume) {
  const Tensor cm = compose_mask(Tensor(1, 3, 3), std::vector<double>{0.2, 0.8});
  for (double v : cm.data) EXPECT_EQ(v, 0.0);
}

TEST(ComposeMask, RejectsBadShapes) {
  EXPECT_THROW(compose_mask(Tensor(2, 3, 3), std::vector<double>{1.0}), Error);
  EXPECT_THROW(compose_mask(Tensor(1, 3, 3), std::vector<double>{}), Error);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.5, 0.3}), 1);
  EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5}), 0);
  EXPECT_EQ(argmax(std::vector<double>{0.1, 0.45, 0.45}), 1);
  EXPECT_THROW(argmax(std::vector<double>{}), Error);
}

TEST(PredictFullRes, ConfidentMaskCoversImage) {
  FSNetOutput out;
  out.y_bm = Tensor(1, 4, 4, 0.9);
  out.y_cls = {0.1, 0.7, 0.2};
  out.grid = uniform_grid(8, 8, 4, 4);
  const auto pred = predict_fullres(out);
  EXPECT_EQ(pred.label, 1);
  EXPECT_EQ(pred.mask.height, 8);
  EXPECT_EQ(pred.mask.count(), 64u);
}

TEST(PredictFullRes, LowMaskIsEmptyAndTieIsClassZero) {
  FSNetOutput out;
  out.y_bm = Tensor(1, 4, 4, 0.2);
  out.y_cls = {0.5, 0.5};
  out.grid = uniform_grid(8, 8, 4, 4);
  const auto pred = predict_fullres(out);
  EXPECT_EQ(pred.label, 0);
  EXPECT_EQ(pred.mask.count(), 0u);
}

TEST(PredictFullRes, HalfMaskUnwarpsToHalfImage) {
  FSNetOutput out;
  out.y_bm = Tensor(1, 4, 4);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 4; ++j) out.y_bm(0, i, j) = 1.0;
  }
  out.y_cls = {1.0};
  out.grid = uniform_grid(8, 8, 4, 4);
  const auto pred = predict_fullres(out);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) EXPECT_EQ(pred.mask(i, j), i < 4 ? 1 : 0) << i << "," << j;
  }
}

TEST(FSNetConfig, Validation) {
  FSNetConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.target_height = 32;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.saliency_height = 7;  // not divisible by 2 at depth 2
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.kernel.sigma = 0;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.num_classes = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(FSNet, InputStackRejectsBadInput) {
  const FSNet net(small_config(), 1);
  std::mt19937_64 rng(2);
  try {
    net.input_stack(random_image(rng, 8, 16), {0.5, 0.5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfiguration);
  }
  try {
    net.input_stack(random_image(rng, 16, 16), {1.2, 0.5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
  const Tensor stack = net.input_stack(random_image(rng, 16, 16), {0.0, 0.0});
  EXPECT_EQ(stack.channels, 4);
  EXPECT_EQ(stack(3, 0, 0), 1.0);
}

TEST(FSNet, OutputsAreProbabilities) {
  std::mt19937_64 rng(3);
  FSNet net(small_config(), 4);
  net.saliency_net().head().init_he(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto out = net.forward(random_image(rng, 16, 16), {u(rng), u(rng)});
    ASSERT_EQ(out.y_bm.height, 8);
    ASSERT_EQ(out.y_cm.channels, 2);
    double s = 0.0;
    for (double p : out.y_cls) {
      EXPECT_GE(p, 0.0);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    for (double v : out.y_bm.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (std::size_t k = 0; k < out.y_cm.size(); ++k) EXPECT_LE(out.y_cm.data[k], out.y_bm.data[k % 64] + 1e-15);
    for (double g : out.grid.gh) {
      EXPECT_GE(g, 0.0);
      EXPECT_LE(g, 1.0);
    }
    for (double d : out.saliency.density.data) EXPECT_GT(d, 0.0);
  }
}

TEST(FSNet, DeterministicPerSeed) {
  std::mt19937_64 rng(5);
  const Tensor img = random_image(rng, 16, 16);
  FSNet a(small_config(), 7), b(small_config(), 7), c(small_config(), 8);
  const auto oa = a.forward(img, {0.3, 0.6}), ob = b.forward(img, {0.3, 0.6}), oc = c.forward(img, {0.3, 0.6});
  EXPECT_EQ(oa.y_cm.data, ob.y_cm.data);
  EXPECT_EQ(oa.grid.gh, ob.grid.gh);
  EXPECT_NE(oa.y_cm.data, oc.y_cm.data);
  EXPECT_EQ(nn::parameter_checksum(a), nn::parameter_checksum(b));
}

TEST(FSNet, UniformSamplerUsesUniformGrid) {
  std::mt19937_64 rng(6);
  const FSNet net(small_config(), 1);
  const auto out = net.forward(random_image(rng, 16, 16), {0.5, 0.5}, Mode::kInference, SamplerKind::kUniform);
  const auto u = uniform_grid(16, 16, 8, 8);
  EXPECT_EQ(out.grid.gh, u.gh);
  EXPECT_EQ(out.grid.gw, u.gw);
  EXPECT_TRUE(out.saliency.density.empty());
}

TEST(FSNet, EmptyMaskBranchGivesEmptyPrediction) {
  std::mt19937_64 rng(7);
  const FSNetModel<EmptyMaskHeads> net(small_config(), 1);
  const auto out = net.forward(random_image(rng, 16, 16), {0.2, 0.9});
  for (double v : out.y_cm.data) EXPECT_EQ(v, 0.0);
  const auto pred = net.segment(random_image(rng, 16, 16), {0.2, 0.9});
  EXPECT_EQ(pred.mask.count(), 0u);
  EXPECT_EQ(pred.label, 0);
}

TEST(FSNet, GridStableUnderSaliencyScaling) {
  std::mt19937_64 rng(8);
  FSNet net(small_config(), 2);
  net.saliency_net().head().init_he(rng);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor stack = net.input_stack(random_image(rng, 16, 16), {0.4, 0.1});
    SaliencyMap s = net.saliency(stack);
    const SamplingGrid g1 = net.grid(s);
    for (double& v : s.density.data) v *= 10.0;
    const SamplingGrid g10 = net.grid(s);
    for (std::size_t k = 0; k < g1.gh.size(); ++k) {
      EXPECT_LE(std::abs(g1.gh[k] - g10.gh[k]), 1e-4);
      EXPECT_LE(std::abs(g1.gw[k] - g10.gw[k]), 1e-4);
    }
  }
}

TEST(FSNet, SaveLoadRoundTrip) {
  std::mt19937_64 rng(9);
  FSNet a(small_config(), 11);
  a.saliency_net().head().init_he(rng);
  const fs::path dir = scratch_dir("roundtrip");
  a.save(dir);
  FSNet b(small_config(), 12);
  EXPECT_NE(nn::parameter_checksum(a), nn::parameter_checksum(b));
  b.load(dir);
  EXPECT_EQ(nn::parameter_checksum(a), nn::parameter_checksum(b));
  const Tensor img = random_image(rng, 16, 16);
  EXPECT_EQ(a.forward(img, {0.7, 0.2}).y_cm.data, b.forward(img, {0.7, 0.2}).y_cm.data);

  FSNetConfig other = small_config();
  other.kernel = {3};
  FSNet c(other, 1);
  try {
    c.load(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_NE(std::string(e.what()).find("kernel_sigma"), std::string::npos);
  }
  try {
    c.load(dir / "missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
  fs::remove_all(dir);
}

TEST(FSNet, LoadRejectsTruncatedWeights) {
  FSNet a(small_config(), 1);
  const fs::path dir = scratch_dir("truncated");
  a.save(dir);
  fs::resize_file(dir / "weights.bin", fs::file_size(dir / "weights.bin") / 2);
  EXPECT_THROW(a.load(dir), Error);
  fs::remove_all(dir);
}

TEST(Helpers, BilinearAlignedAndClassChannels) {
  const auto g = uniform_grid(8, 8, 4, 4);
  const auto a = bilinear_aligned(g);
  for (std::size_t k = 0; k < g.gh.size(); ++k) EXPECT_DOUBLE_EQ(a.gh[k], g.gh[k] * 7.0 / 8.0);
  Tensor one_hot(3, 2, 2);
  one_hot(0, 0, 0) = 1;
  one_hot(2, 1, 1) = 1;
  const Tensor cc = class_channels(one_hot);
  EXPECT_EQ(cc.channels, 2);
  EXPECT_EQ(cc(1, 1, 1), 1.0);
  EXPECT_EQ(cc(0, 0, 0), 0.0);
  EXPECT_THROW(class_channels(Tensor(1, 2, 2)), Error);
}

/// Constant one-hot labels for class `cls` so the supervision target does not
/// move with the grid and the loss is smooth in the saliency parameters.
Tensor constant_labels(int C, int H, int W, int cls) {
  Tensor t(C + 1, H, W);
  for (double& v : t.plane(cls + 1)) v = 1.0;
  return t;
}

TEST(FSNet, SaliencyGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  FSNet net(small_config(), 3);
  net.saliency_net().head().init_he(rng);
  // Zero biases put ReLUs fed by all-zero features exactly on their kink.
  std::uniform_real_distribution<double> bias(0.01, 0.1);
  net.saliency_net().visit_parameters([&](const std::string& name, std::vector<double>& v) {
    if (name.ends_with(".bias")) {
      for (double& b : v) b = bias(rng);
    }
  });
  const LossConfig loss{};
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor stack = net.input_stack(random_image(rng, 16, 16), {0.2 + 0.3 * trial, 0.7});
    const Tensor labels = constant_labels(2, 16, 16, trial % 2);
    UNet grads = net.saliency_net();
    nn::zero_parameters(grads);
    net.saliency_gradient(stack, labels, loss, &grads);
    const auto params = nn::parameter_list(net.saliency_net());
    const auto gparams = nn::parameter_list(grads);
    double max_grad = 0.0;
    for (auto* g : gparams) {
      for (double v : *g) max_grad = std::max(max_grad, std::abs(v));
    }
    ASSERT_GT(max_grad, 0.0);
    const double h = 1e-6;
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& v = *params[p];
      const std::size_t e = (v.size() * 7 + static_cast<std::size_t>(trial)) / 11 % v.size();
      const double orig = v[e];
      v[e] = orig + h;
      const double up = net.saliency_gradient(stack, labels, loss, nullptr);
      v[e] = orig - h;
      const double down = net.saliency_gradient(stack, labels, loss, nullptr);
      v[e] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = (*gparams[p])[e];
      EXPECT_LE(std::abs(fd - an), 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-3 * max_grad}))
          << "param " << p << "[" << e << "] fd " << fd << " analytic " << an;
    }
  }
}

TEST(FSNet, HeadsGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  FSNet net(small_config(), 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor warped(4, 8, 8);
  for (double& v : warped.data) v = u(rng);
  Tensor target(2, 8, 8);
  for (int i = 2; i < 6; ++i) {
    for (int j = 1; j < 5; ++j) target(1, i, j) = 1.0;
  }
  TwoBranchHeads grads = net.heads();
  nn::zero_parameters(grads);
  const LossConfig loss{};
  net.heads_gradient(warped, target, loss, &grads);
  const auto params = nn::parameter_list(net.heads());
  const auto gparams = nn::parameter_list(grads);
  const double h = 1e-6;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& v = *params[p];
    for (std::size_t e = 0; e < v.size(); e += std::max<std::size_t>(1, v.size() / 5)) {
      const double orig = v[e];
      v[e] = orig + h;
      const double up = net.heads_gradient(warped, target, loss, nullptr);
      v[e] = orig - h;
      const double down = net.heads_gradient(warped, target, loss, nullptr);
      v[e] = orig;
      const double fd = (up - down) / (2 * h);
      EXPECT_LE(std::abs(fd - (*gparams[p])[e]), 1e-4 * std::max({std::abs(fd), 1e-4})) << "param " << p << "[" << e << "]";
    }
  }
}

}  // namespace
}  // namespace fovealseg
