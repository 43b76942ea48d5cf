// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "fovealseg/nn.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg {

struct UNetConfig {
  int in_channels = 4;
  int base_channels = 16;
  int depth = 3;  // resolution levels, the deepest one is the bottleneck

  int channels_at(int level) const noexcept { return base_channels << level; }
  int size_multiple() const noexcept { return 1 << (depth - 1); }
};

/// Two 3x3 conv + ReLU layers.
struct ConvBlock {
  nn::Conv2d first;
  nn::Conv2d second;

  struct Trace {
    Tensor input, hidden, output;
  };

  ConvBlock() = default;
  ConvBlock(int in, int out) : first(in, out, 3), second(out, out, 3) {}

  template <class Rng>
  void init(Rng& rng) {
    first.init_he(rng);
    second.init_he(rng);
  }

  Tensor forward(const Tensor& x, Trace* trace) const {
    Tensor h = first.forward(x);
    nn::relu_inplace(h);
    Tensor y = second.forward(h);
    nn::relu_inplace(y);
    if (trace != nullptr) *trace = {x, h, y};
    return y;
  }

  Tensor backward(const Trace& t, Tensor dy, ConvBlock* grads, bool want_input_grad = true) const {
    nn::relu_backward_inplace(t.output, dy);
    Tensor dh = second.backward(t.hidden, dy, grads ? &grads->second : nullptr);
    nn::relu_backward_inplace(t.hidden, dh);
    return first.backward(t.input, dh, grads ? &grads->first : nullptr, want_input_grad);
  }

  void visit(const std::string& prefix, const nn::ParamVisitor& f) {
    first.visit(prefix + ".conv1", f);
    second.visit(prefix + ".conv2", f);
  }
};

/// Encoder-decoder producing a nonnegative density map (softplus output) at
/// the resolution of its input.
class UNet {
 public:
  struct Trace {
    std::vector<ConvBlock::Trace> encoder;
    std::vector<nn::PoolTrace> pools;
    std::vector<Tensor> up_inputs;   // upsampled features fed to the up conv
    std::vector<Tensor> up_outputs;  // after ReLU
    std::vector<ConvBlock::Trace> decoder;
    Tensor head_input;
    Tensor pre_activation;
  };

  UNet() = default;

  template <class Rng>
  UNet(const UNetConfig& config, Rng& rng) : config_(config) {
    require(config.depth >= 1 && config.base_channels >= 1 && config.in_channels >= 1, ErrorKind::kConfiguration,
            "invalid U-Net configuration");
    for (int l = 0; l < config.depth; ++l) {
      const int in = l == 0 ? config.in_channels : config.channels_at(l - 1);
      encoder_.emplace_back(in, config.channels_at(l));
      encoder_.back().init(rng);
    }
    for (int l = 0; l + 1 < config.depth; ++l) {
      up_.emplace_back(config.channels_at(l + 1), config.channels_at(l), 3);
      up_.back().init_he(rng);
      decoder_.emplace_back(2 * config.channels_at(l), config.channels_at(l));
      decoder_.back().init(rng);
    }
    head_ = nn::Conv2d(config.channels_at(0), 1, 1);
    // A zero head yields a spatially constant density, i.e. the uniform grid
    // away from the borders, so training starts from the uniform sampler.
  }

  const UNetConfig& config() const noexcept { return config_; }

  Tensor forward(const Tensor& x, Trace* trace) const {
    require(x.height % config_.size_multiple() == 0 && x.width % config_.size_multiple() == 0,
            ErrorKind::kConfiguration,
            "saliency input " + std::to_string(x.height) + "x" + std::to_string(x.width) + " not divisible by " +
                std::to_string(config_.size_multiple()));
    const int depth = config_.depth;
    std::vector<Tensor> skips(static_cast<std::size_t>(depth));
    if (trace != nullptr) {
      trace->encoder.assign(static_cast<std::size_t>(depth), {});
      trace->pools.assign(static_cast<std::size_t>(depth > 1 ? depth - 1 : 0), {});
      trace->up_inputs.assign(static_cast<std::size_t>(depth - 1), {});
      trace->up_outputs.assign(static_cast<std::size_t>(depth - 1), {});
      trace->decoder.assign(static_cast<std::size_t>(depth - 1), {});
    }
    Tensor cur = x;
    for (int l = 0; l < depth; ++l) {
      if (l > 0) cur = nn::max_pool2(skips[static_cast<std::size_t>(l - 1)], trace ? &trace->pools[static_cast<std::size_t>(l - 1)] : nullptr);
      skips[static_cast<std::size_t>(l)] =
          encoder_[static_cast<std::size_t>(l)].forward(cur, trace ? &trace->encoder[static_cast<std::size_t>(l)] : nullptr);
    }
    Tensor y = skips.back();
    for (int l = depth - 2; l >= 0; --l) {
      const auto& skip = skips[static_cast<std::size_t>(l)];
      Tensor up_in = nn::upsample_nearest2(y, skip.height, skip.width);
      Tensor up = up_[static_cast<std::size_t>(l)].forward(up_in);
      nn::relu_inplace(up);
      Tensor cat = concat_channels(skip, up);
      y = decoder_[static_cast<std::size_t>(l)].forward(cat, trace ? &trace->decoder[static_cast<std::size_t>(l)] : nullptr);
      if (trace != nullptr) {
        trace->up_inputs[static_cast<std::size_t>(l)] = std::move(up_in);
        trace->up_outputs[static_cast<std::size_t>(l)] = std::move(up);
      }
    }
    Tensor z = head_.forward(y);
    if (trace != nullptr) {
      trace->head_input = y;
      trace->pre_activation = z;
    }
    for (double& v : z.data) v = nn::softplus(v);
    return z;
  }

  /// Accumulates parameter gradients; the input gradient is not needed by any
  /// caller and is not computed.
  void backward(const Trace& t, const Tensor& d_density, UNet* grads) const {
    const int depth = config_.depth;
    Tensor dz = d_density;
    for (std::size_t k = 0; k < dz.size(); ++k) dz.data[k] *= nn::sigmoid(t.pre_activation.data[k]);
    Tensor dy = head_.backward(t.head_input, dz, grads ? &grads->head_ : nullptr);
    std::vector<Tensor> d_skips(static_cast<std::size_t>(depth));
    for (int l = 0; l + 1 < depth; ++l) {
      const auto& enc_out = t.encoder[static_cast<std::size_t>(l)].output;
      d_skips[static_cast<std::size_t>(l)] = Tensor(enc_out.channels, enc_out.height, enc_out.width);
    }
    for (int l = 0; l + 1 < depth; ++l) {
      const auto lu = static_cast<std::size_t>(l);
      Tensor d_cat = decoder_[lu].backward(t.decoder[lu], dy, grads ? &grads->decoder_[lu] : nullptr);
      auto [d_skip, d_up] = nn::split_channels(d_cat, config_.channels_at(l));
      for (std::size_t k = 0; k < d_skip.size(); ++k) d_skips[lu].data[k] += d_skip.data[k];
      nn::relu_backward_inplace(t.up_outputs[lu], d_up);
      Tensor d_up_in = up_[lu].backward(t.up_inputs[lu], d_up, grads ? &grads->up_[lu] : nullptr);
      const auto& deeper = t.encoder[lu + 1].output;
      dy = nn::upsample_nearest2_backward(d_up_in, deeper.height, deeper.width);
    }
    // dy now holds the gradient of the bottleneck output.
    for (int l = depth - 1; l >= 0; --l) {
      const auto lu = static_cast<std::size_t>(l);
      if (l < depth - 1) {
        for (std::size_t k = 0; k < dy.size(); ++k) d_skips[lu].data[k] += dy.data[k];
        dy = std::move(d_skips[lu]);
      }
      Tensor d_in = encoder_[lu].backward(t.encoder[lu], dy, grads ? &grads->encoder_[lu] : nullptr, l > 0);
      if (l > 0) dy = nn::max_pool2_backward(t.pools[lu - 1], d_in);
    }
  }

  void visit_parameters(const nn::ParamVisitor& f) {
    for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l].visit("saliency.enc" + std::to_string(l), f);
    for (std::size_t l = 0; l < up_.size(); ++l) up_[l].visit("saliency.up" + std::to_string(l), f);
    for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].visit("saliency.dec" + std::to_string(l), f);
    head_.visit("saliency.head", f);
  }

  nn::Conv2d& head() noexcept { return head_; }

 private:
  UNetConfig config_;
  std::vector<ConvBlock> encoder_;
  std::vector<nn::Conv2d> up_;
  std::vector<ConvBlock> decoder_;
  nn::Conv2d head_;
};

}  // namespace fovealseg
