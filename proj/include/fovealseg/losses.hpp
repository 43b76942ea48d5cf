// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Training objective in the downsampled space: soft dice over the composed
// class-mask volume plus a focal term whose pixel weights are the inverse
// areas of the IOI and non-IOI regions.
//
// Predictions and targets are C x h x w. A target pixel belongs to the IOI
// when one of its class channels is 1; all-zero pixels are background. The
// probability of the true label is pred[c*] on IOI pixels and
// 1 - sum_c pred[c] on background pixels.

#pragma once

#include <algorithm>
#include <cmath>

#include "fovealseg/error.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg {

struct LossConfig {
  double lambda = 1.0;
  double gamma = 2.0;
  double epsilon = 1e-6;

  void validate() const {
    require(lambda >= 0.0, ErrorKind::kConfiguration, "loss lambda must be >= 0");
    require(gamma >= 0.0, ErrorKind::kConfiguration, "focal gamma must be >= 0");
    require(epsilon > 0.0, ErrorKind::kConfiguration, "dice epsilon must be > 0");
  }
};

struct LossStats {
  int empty_ioi = 0;  // focal evaluations where the IOI region was empty
};

inline constexpr double kProbabilityClip = 1e-7;

namespace detail {

inline void prepare_grad(const Tensor& pred, Tensor* grad) {
  if (grad != nullptr && !grad->same_shape(pred)) *grad = Tensor::zeros_like(pred);
}

}  // namespace detail

/// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps). Adds scale * dL/dpred to
/// `grad` when given.
inline double dice_loss(const Tensor& pred, const Tensor& target, double epsilon = 1e-6, Tensor* grad = nullptr,
                        double scale = 1.0) {
  require_same_shape(pred, target, "dice_loss");
  double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    inter += pred.data[k] * target.data[k];
    sum_p += pred.data[k];
    sum_t += target.data[k];
  }
  const double num = 2.0 * inter + epsilon;
  const double den = sum_p + sum_t + epsilon;
  if (grad != nullptr) {
    detail::prepare_grad(pred, grad);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      grad->data[k] += scale * -(2.0 * target.data[k] * den - num) / (den * den);
    }
  }
  return 1.0 - num / den;
}

inline double area_weighted_focal_loss(const Tensor& pred, const Tensor& target, double gamma,
                                       Tensor* grad = nullptr, double scale = 1.0, LossStats* stats = nullptr) {
  require_same_shape(pred, target, "area_weighted_focal_loss");
  const int C = pred.channels;
  const std::size_t n = pred.plane_size();
  std::vector<std::uint8_t> is_ioi(n, 0);
  std::size_t ioi = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double t = 0.0;
    for (int c = 0; c < C; ++c) t += target.data[c * n + k];
    is_ioi[k] = t > 0.5;
    ioi += is_ioi[k];
  }
  const std::size_t background = n - ioi;
  if (ioi == 0 && stats != nullptr) ++stats->empty_ioi;
  const double w_ioi = ioi > 0 ? 1.0 / static_cast<double>(ioi) : 0.0;
  const double w_bg = background > 0 ? 1.0 / static_cast<double>(background) : 0.0;
  if (grad != nullptr) detail::prepare_grad(pred, grad);

  double loss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double p = 0.0;
    if (is_ioi[k]) {
      for (int c = 0; c < C; ++c) p += pred.data[c * n + k] * target.data[c * n + k];
    } else {
      p = 1.0;
      for (int c = 0; c < C; ++c) p -= pred.data[c * n + k];
    }
    const bool clipped = p < kProbabilityClip || p > 1.0 - kProbabilityClip;
    p = std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip);
    const double weight = is_ioi[k] ? w_ioi : w_bg;
    const double log_p = std::log(p);
    const double modulator = std::pow(1.0 - p, gamma);
    loss += weight * -modulator * log_p;
    if (grad != nullptr && !clipped) {
      double d_term = -modulator / p;
      if (gamma != 0.0) d_term += gamma * std::pow(1.0 - p, gamma - 1.0) * log_p;
      const double g = scale * weight * d_term;
      for (int c = 0; c < C; ++c) {
        grad->data[c * n + k] += is_ioi[k] ? g * target.data[c * n + k] : -g;
      }
    }
  }
  return loss;
}

inline double total_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg, Tensor* grad = nullptr,
                         LossStats* stats = nullptr) {
  cfg.validate();
  const double dice = dice_loss(pred, target, cfg.epsilon, grad, 1.0);
  if (cfg.lambda == 0.0) return dice;
  return dice + cfg.lambda * area_weighted_focal_loss(pred, target, cfg.gamma, grad, cfg.lambda, stats);
}

}  // namespace fovealseg
