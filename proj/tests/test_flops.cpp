// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "fovealseg/flops.hpp"

namespace fovealseg {
namespace {

TEST(ConvFlops, CountsMultiplyAndAdd) {
  EXPECT_EQ(conv_flops(1, 1, 1, 1, 1), 2);
  EXPECT_EQ(conv_flops(3, 4, 8, 10, 10), 2 * 9 * 4 * 8 * 100);
  EXPECT_EQ(linear_flops(16, 3), 96);
}

TEST(WarpFlops, ScalesWithTargetArea) {
  EXPECT_EQ(warp_flops(64, 64, 4), 64 * 64 * 4);
  EXPECT_EQ(warp_flops(128, 128, 4), 4 * warp_flops(64, 64, 4));
  EXPECT_EQ(warp_flops(128, 128, 4, true), 4 * warp_flops(64, 64, 4, true));
  EXPECT_GT(warp_flops(64, 64, 4, true), warp_flops(64, 64, 4));
}

TEST(GridFlops, CalibratedPointAndQuadraticKernelScaling) {
  EXPECT_EQ(grid_flops(64, 128, 33), 8920000);
  EXPECT_NEAR(static_cast<double>(grid_flops(64, 128, 41)) / static_cast<double>(grid_flops(64, 128, 17)),
              (41.0 * 41.0) / (17.0 * 17.0), 1e-6);
  EXPECT_NEAR(static_cast<double>(grid_flops(128, 128, 33)) / static_cast<double>(grid_flops(64, 128, 33)), 2.0,
              1e-6);
}

TEST(GridFlops, MatchesReportedKernelTable) {
  const std::vector<std::pair<int, double>> table{{17, 2.38e6}, {25, 5.12e6}, {33, 8.92e6}, {41, 13.77e6}};
  for (const auto& [k, reported] : table) {
    EXPECT_NEAR(static_cast<double>(grid_flops(64, 128, k)) / reported, 1.0, 0.02) << "kernel " << k;
  }
}

TEST(UNetFlops, HandCountedSmallNetworks) {
  // depth 1: conv3x3 4->2, conv3x3 2->2, 1x1 head, all at 4x4.
  EXPECT_EQ(unet_flops({4, 2, 1}, 4, 4), 2304 + 1152 + 64);
  // depth 2 adds the 2x2 bottleneck (2->4, 4->4), the up conv 4->2 and the
  // decoder block on the 4-channel skip concatenation.
  EXPECT_EQ(unet_flops({4, 2, 2}, 4, 4), 2304 + 1152 + 576 + 1152 + 2304 + 2304 + 1152 + 64);
}

TEST(HeadFlops, HandCounted) {
  const HeadsConfig c{4, 8, 3};
  EXPECT_EQ(seg_head_flops(c, 4, 4), 2 * 9 * 4 * 8 * 16 + 2 * 9 * 8 * 8 * 16 + 2 * 8 * 16);
  EXPECT_EQ(cls_head_flops(c, 4, 4), 2 * 9 * 4 * 8 * 16 + 2 * 9 * 8 * 8 * 16 + 8 * 16 + 2 * 8 * 3);
}

TEST(Backbone, ReferenceFcnMatchesPublishedResNet18Cost) {
  // ResNet-18 convolutions cost about 1.82 GMAC at 224x224 with RGB input;
  // the gaze channel adds one stem input plane.
  const double flops = static_cast<double>(reference_fcn(3).flops(224, 224));
  const double extra_stem = 2.0 * 49 * 64 * 112 * 112;
  EXPECT_NEAR((flops - extra_stem) / 3.64e9, 1.0, 0.03);
}

TEST(Backbone, StrideRoundsUp) {
  const BackboneSpec b{"s", {{3, 1, 1, 2}}};
  EXPECT_EQ(b.flops(5, 5), conv_flops(3, 1, 1, 3, 3));
}

TEST(Components, NamesRoundTrip) {
  for (const auto& [c, name] : kComponentNames) {
    EXPECT_EQ(parse_component(name), c);
    EXPECT_EQ(to_string(c), name);
  }
  try {
    parse_component("transformer");
    FAIL() << "expected an unknown-component error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnknownComponent);
  }
}

TEST(Components, DeploymentCounts) {
  const DeploymentSpec d;
  EXPECT_EQ(count_flops(Component::kDisplacementCheck, d), 5);
  EXPECT_EQ(count_flops(Component::kWarp, d), 64 * 64 * 4);
  EXPECT_EQ(count_flops(Component::kGridComputation, d), grid_flops(64, 64, 33));
  EXPECT_EQ(count_flops(Component::kFullResBackbone, d), reference_fcn(3).flops(640, 640));
  for (const auto& [c, name] : kComponentNames) EXPECT_GT(count_flops(c, d), 0) << name;
}

TEST(CostModel, ConsistentWithComponents) {
  const DeploymentSpec d;
  const CostModel m = CostModel::from(d);
  EXPECT_EQ(m.reuse_check(), count_flops(Component::kReuseCheck, d));
  EXPECT_EQ(m.frame_difference, 3 * 640 * 640 * 3);
  EXPECT_EQ(m.mask_lookup, 25);
  EXPECT_GT(m.fsnet, count_flops(Component::kSaliencyNet, d) + count_flops(Component::kGridComputation, d));
  // The downsampled pipeline must be far cheaper than the full-resolution backbone.
  EXPECT_GT(static_cast<double>(m.fullres_backbone) / static_cast<double>(m.fsnet), 20.0);
  EXPECT_LT(m.reuse_check(), m.fsnet);
}

}  // namespace
}  // namespace fovealseg
