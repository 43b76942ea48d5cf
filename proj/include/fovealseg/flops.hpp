// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Analytic FLOP counts. A multiply-add counts as two FLOPs.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fovealseg/error.hpp"
#include "fovealseg/heads.hpp"
#include "fovealseg/saliency_net.hpp"

namespace fovealseg {

using Flops = std::int64_t;

enum class Component {
  kSaliencyNet,
  kGridComputation,
  kWarp,
  kSegHead,
  kClsHead,
  kUnwarp,
  kReuseCheck,
  kDisplacementCheck,
  kFullResBackbone,
};

inline constexpr std::array<std::pair<Component, std::string_view>, 9> kComponentNames{{
    {Component::kSaliencyNet, "saliency_net"},
    {Component::kGridComputation, "grid"},
    {Component::kWarp, "warp"},
    {Component::kSegHead, "seg_head"},
    {Component::kClsHead, "cls_head"},
    {Component::kUnwarp, "unwarp"},
    {Component::kReuseCheck, "reuse_check"},
    {Component::kDisplacementCheck, "displacement_check"},
    {Component::kFullResBackbone, "fullres_backbone"},
}};

inline std::string_view to_string(Component c) {
  for (const auto& [k, name] : kComponentNames) {
    if (k == c) return name;
  }
  return "unknown";
}

inline Component parse_component(std::string_view name) {
  for (const auto& [k, n] : kComponentNames) {
    if (n == name) return k;
  }
  fail(ErrorKind::kUnknownComponent, "unknown component '" + std::string(name) + "'");
}

inline constexpr Flops conv_flops(int kernel, int in_channels, int out_channels, int out_h, int out_w) {
  return Flops{2} * kernel * kernel * in_channels * out_channels * out_h * out_w;
}

inline constexpr Flops linear_flops(int in, int out) { return Flops{2} * in * out; }

/// Per-weight cost of the kernel-weighted coordinate means, fitted to the
/// 8.92M FLOPs reported for a size-33 kernel on a 64 x 128 target.
inline constexpr double kGridFlopConstant = 8.92e6 / (64.0 * 128.0 * 33.0 * 33.0);

inline Flops grid_flops(int h, int w, int kernel_size) {
  return static_cast<Flops>(std::llround(static_cast<double>(h) * w * kernel_size * kernel_size * kGridFlopConstant));
}

/// Bilinear: four taps blended per channel plus tap setup; nearest: free.
inline constexpr Flops warp_flops(int h, int w, int channels, bool bilinear = false) {
  return bilinear ? Flops{h} * w * (8 * channels + 12) : Flops{h} * w * channels;
}

/// Tent splat of h*w samples into the H x W raster, then normalization.
inline constexpr Flops unwarp_flops(int H, int W, int h, int w, int channels) {
  return Flops{h} * w * (8 + 4 * 2 * (channels + 1)) + Flops{H} * W * channels;
}

inline Flops unet_flops(const UNetConfig& c, int h, int w) {
  Flops total = 0;
  for (int l = 0; l < c.depth; ++l) {
    const int hl = h >> l, wl = w >> l;
    const int in = l == 0 ? c.in_channels : c.channels_at(l - 1);
    total += conv_flops(3, in, c.channels_at(l), hl, wl) + conv_flops(3, c.channels_at(l), c.channels_at(l), hl, wl);
  }
  for (int l = 0; l + 1 < c.depth; ++l) {
    const int hl = h >> l, wl = w >> l;
    total += conv_flops(3, c.channels_at(l + 1), c.channels_at(l), hl, wl);
    total += conv_flops(3, 2 * c.channels_at(l), c.channels_at(l), hl, wl) +
             conv_flops(3, c.channels_at(l), c.channels_at(l), hl, wl);
  }
  return total + conv_flops(1, c.channels_at(0), 1, h, w);
}

inline Flops seg_head_flops(const HeadsConfig& c, int h, int w) {
  return conv_flops(3, c.in_channels, c.width, h, w) + conv_flops(3, c.width, c.width, h, w) +
         conv_flops(1, c.width, 1, h, w);
}

inline Flops cls_head_flops(const HeadsConfig& c, int h, int w) {
  return conv_flops(3, c.in_channels, c.width, h, w) + conv_flops(3, c.width, c.width, h, w) +
         Flops{c.width} * h * w + linear_flops(c.width, c.num_classes);
}

/// Convolutional backbone described layer by layer; spatial size shrinks by
/// each layer's stride (rounding up).
struct BackboneSpec {
  struct Layer {
    int kernel, in_channels, out_channels, stride;
  };
  std::string name;
  std::vector<Layer> layers;

  Flops flops(int h, int w) const {
    Flops total = 0;
    for (const auto& l : layers) {
      h = (h + l.stride - 1) / l.stride;
      w = (w + l.stride - 1) / l.stride;
      total += conv_flops(l.kernel, l.in_channels, l.out_channels, h, w);
    }
    return total;
  }
};

/// ResNet-18 layout with a 1x1 classifier, 4 input channels (RGB + gaze).
/// Stride-2 max pooling after the stem is modelled as a zero-cost layer.
inline BackboneSpec reference_fcn(int num_classes) {
  BackboneSpec b{"resnet18-fcn", {{7, 4, 64, 2}, {0, 64, 64, 2}}};
  int in = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const int out = 64 << stage;
    const int stride = stage == 0 ? 1 : 2;
    b.layers.push_back({3, in, out, stride});
    b.layers.push_back({3, out, out, 1});
    if (stride != 1) b.layers.push_back({1, in, out, 1});  // projection shortcut
    b.layers.push_back({3, out, out, 1});
    b.layers.push_back({3, out, out, 1});
    in = out;
  }
  b.layers.push_back({1, in, num_classes + 1, 1});
  return b;
}

/// The two-branch toy heads expressed as a backbone.
inline BackboneSpec toy_backbone(const HeadsConfig& c) {
  return {"toy-heads",
          {{3, c.in_channels, c.width, 1}, {3, c.width, c.width, 1}, {1, c.width, 1, 1},
           {3, c.in_channels, c.width, 1}, {3, c.width, c.width, 1}}};
}

/// Geometry of a deployed FovealSeg pipeline.
struct DeploymentSpec {
  int source_height = 640;
  int source_width = 640;
  int target_height = 64;
  int target_width = 64;
  int saliency_height = 64;
  int saliency_width = 64;
  int kernel_size = 33;
  int image_channels = 3;
  int mask_tolerance = 2;
  UNetConfig unet{};
  HeadsConfig heads{};
  BackboneSpec backbone = reference_fcn(3);
};

inline Flops count_flops(Component c, const DeploymentSpec& d) {
  const Flops source_px = Flops{d.source_height} * d.source_width;
  switch (c) {
    case Component::kSaliencyNet:
      return unet_flops(d.unet, d.saliency_height, d.saliency_width);
    case Component::kGridComputation:
      return grid_flops(d.target_height, d.target_width, d.kernel_size);
    case Component::kWarp:
      return warp_flops(d.target_height, d.target_width, d.image_channels + 1);
    case Component::kSegHead:
      return seg_head_flops(d.heads, d.target_height, d.target_width);
    case Component::kClsHead:
      return cls_head_flops(d.heads, d.target_height, d.target_width);
    case Component::kUnwarp:
      return unwarp_flops(d.source_height, d.source_width, d.target_height, d.target_width, 1);
    case Component::kDisplacementCheck:
      return 5;
    case Component::kReuseCheck: {
      // displacement + mean absolute frame difference + tolerance-disk lookup
      const Flops side = 2 * d.mask_tolerance + 1;
      return 5 + 3 * source_px * d.image_channels + side * side;
    }
    case Component::kFullResBackbone:
      return d.backbone.flops(d.source_height, d.source_width);
  }
  fail(ErrorKind::kUnknownComponent, "unhandled component");
}

/// Per-event charges used by the scheduler.
struct CostModel {
  Flops fsnet = 0;              // one FSNet inference incl. gaze map, grid, warp, backbone, unwarp
  Flops fullres_backbone = 0;   // ND baseline per frame
  Flops displacement_check = 5;
  Flops frame_difference = 0;
  Flops mask_lookup = 0;

  Flops reuse_check() const noexcept { return displacement_check + frame_difference + mask_lookup; }

  static CostModel from(const DeploymentSpec& d) {
    CostModel m;
    const Flops source_px = Flops{d.source_height} * d.source_width;
    const Flops gaze_map = 6 * source_px;  // two differences, squares, sum, sqrt-scale
    const Flops downsample = 0;            // pure indexing
    const Flops density_upsample = 7 * source_px;
    m.fsnet = gaze_map + downsample + count_flops(Component::kSaliencyNet, d) + density_upsample +
              count_flops(Component::kGridComputation, d) + count_flops(Component::kWarp, d) +
              d.backbone.flops(d.target_height, d.target_width) + count_flops(Component::kUnwarp, d);
    m.fullres_backbone = count_flops(Component::kFullResBackbone, d);
    m.displacement_check = count_flops(Component::kDisplacementCheck, d);
    m.frame_difference = 3 * source_px * d.image_channels;
    const Flops side = 2 * d.mask_tolerance + 1;
    m.mask_lookup = side * side;
    return m;
  }
};

}  // namespace fovealseg
