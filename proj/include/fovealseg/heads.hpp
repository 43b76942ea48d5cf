// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <concepts>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fovealseg/nn.hpp"
#include "fovealseg/saliency_net.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg {

struct HeadsConfig {
  int in_channels = 4;
  int width = 16;
  int num_classes = 3;
};

struct HeadOutput {
  Tensor mask_logits;                // 1 x h x w
  std::vector<double> class_logits;  // C
};

/// Plug-in contract for the segmentation side of FSNet: a binary-mask branch
/// and a classification branch over the warped h x w x 4 input.
template <class H>
concept SegmentationHeads = requires(const H& ch, H& h, const Tensor& x, typename H::Trace* trace,
                                     const typename H::Trace& t, std::span<const double> d_cls,
                                     const nn::ParamVisitor& f) {
  { ch.forward(x, trace) } -> std::same_as<HeadOutput>;
  { ch.backward(t, x, d_cls, &h, true) } -> std::same_as<Tensor>;
  { h.visit_parameters(f) };
  { ch.config() } -> std::convertible_to<HeadsConfig>;
};

/// Default heads: conv trunk + 1x1 logit for the mask branch; conv trunk +
/// global average pooling + linear layer for the class branch.
class TwoBranchHeads {
 public:
  struct Trace {
    ConvBlock::Trace seg_trunk;
    ConvBlock::Trace cls_trunk;
    std::vector<double> pooled;
  };

  TwoBranchHeads() = default;

  template <class Rng>
  TwoBranchHeads(const HeadsConfig& config, Rng& rng)
      : config_(config),
        seg_trunk_(config.in_channels, config.width),
        seg_out_(config.width, 1, 1),
        cls_trunk_(config.in_channels, config.width),
        cls_out_(config.width, config.num_classes) {
    seg_trunk_.init(rng);
    seg_out_.init_he(rng);
    cls_trunk_.init(rng);
    cls_out_.init_xavier(rng);
  }

  const HeadsConfig& config() const noexcept { return config_; }

  HeadOutput forward(const Tensor& x, Trace* trace) const {
    Tensor seg_features = seg_trunk_.forward(x, trace ? &trace->seg_trunk : nullptr);
    Tensor cls_features = cls_trunk_.forward(x, trace ? &trace->cls_trunk : nullptr);
    std::vector<double> pooled(static_cast<std::size_t>(cls_features.channels), 0.0);
    const double n = static_cast<double>(cls_features.plane_size());
    for (int c = 0; c < cls_features.channels; ++c) {
      double s = 0.0;
      for (double v : cls_features.plane(c)) s += v;
      pooled[static_cast<std::size_t>(c)] = s / n;
    }
    HeadOutput out{seg_out_.forward(seg_features), cls_out_.forward(pooled)};
    if (trace != nullptr) trace->pooled = std::move(pooled);
    return out;
  }

  /// Returns d(loss)/d(input). `grads` may be null for a frozen backbone.
  Tensor backward(const Trace& t, const Tensor& d_mask_logits, std::span<const double> d_class_logits,
                  TwoBranchHeads* grads, bool want_input_grad) const {
    Tensor d_seg = seg_out_.backward(t.seg_trunk.output, d_mask_logits, grads ? &grads->seg_out_ : nullptr);
    Tensor dx = seg_trunk_.backward(t.seg_trunk, std::move(d_seg), grads ? &grads->seg_trunk_ : nullptr, want_input_grad);

    const auto d_pooled = cls_out_.backward(t.pooled, d_class_logits, grads ? &grads->cls_out_ : nullptr);
    const auto& feat = t.cls_trunk.output;
    Tensor d_feat(feat.channels, feat.height, feat.width);
    const double n = static_cast<double>(feat.plane_size());
    for (int c = 0; c < feat.channels; ++c) {
      for (double& v : d_feat.plane(c)) v = d_pooled[static_cast<std::size_t>(c)] / n;
    }
    Tensor dx_cls = cls_trunk_.backward(t.cls_trunk, std::move(d_feat), grads ? &grads->cls_trunk_ : nullptr, want_input_grad);
    if (want_input_grad) {
      for (std::size_t k = 0; k < dx.size(); ++k) dx.data[k] += dx_cls.data[k];
    }
    return dx;
  }

  void visit_parameters(const nn::ParamVisitor& f) {
    seg_trunk_.visit("seg.trunk", f);
    seg_out_.visit("seg.out", f);
    cls_trunk_.visit("cls.trunk", f);
    cls_out_.visit("cls.out", f);
  }

 private:
  HeadsConfig config_;
  ConvBlock seg_trunk_;
  nn::Conv2d seg_out_;
  ConvBlock cls_trunk_;
  nn::Linear cls_out_;
};

static_assert(SegmentationHeads<TwoBranchHeads>);

}  // namespace fovealseg
