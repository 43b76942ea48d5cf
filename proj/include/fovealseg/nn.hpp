// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal layers with explicit backward passes. Layers are stateless with
// respect to activations: training forward passes return traces that the
// caller hands back to backward(), so a const model can serve several
// gradient computations at once. Gradients accumulate into a second object
// of the same layer type.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fovealseg/error.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg::nn {

using ParamVisitor = std::function<void(const std::string& name, std::vector<double>& values)>;
using ConstParamVisitor = std::function<void(const std::string& name, const std::vector<double>& values)>;

inline double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) noexcept { return x > 30 ? x : std::log1p(std::exp(x)); }

/// Square convolution, stride 1, zero "same" padding.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  std::vector<double> weight;  // out x in x k x k
  std::vector<double> bias;    // out

  Conv2d() = default;
  Conv2d(int in, int out, int k) : in_channels(in), out_channels(out), kernel(k) {
    require(k % 2 == 1, ErrorKind::kConfiguration, "conv kernel must be odd");
    weight.assign(static_cast<std::size_t>(out) * in * k * k, 0.0);
    bias.assign(static_cast<std::size_t>(out), 0.0);
  }

  template <class Rng>
  void init_he(Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_channels * kernel * kernel)));
    for (double& w : weight) w = dist(rng);
    std::fill(bias.begin(), bias.end(), 0.0);
  }

  double w(int o, int i, int a, int b) const noexcept {
    return weight[((static_cast<std::size_t>(o) * in_channels + i) * kernel + a) * kernel + b];
  }

  Tensor forward(const Tensor& x) const {
    require(x.channels == in_channels, ErrorKind::kShape,
            "conv expects " + std::to_string(in_channels) + " channels, got " + std::to_string(x.channels));
    const int H = x.height, W = x.width, p = kernel / 2;
    Tensor y(out_channels, H, W);
    for (int o = 0; o < out_channels; ++o) {
      auto out = y.plane(o);
      std::fill(out.begin(), out.end(), bias[static_cast<std::size_t>(o)]);
      for (int i = 0; i < in_channels; ++i) {
        const auto in = x.plane(i);
        for (int a = 0; a < kernel; ++a) {
          const int dy = a - p;
          const int r0 = std::max(0, -dy), r1 = std::min(H, H - dy);
          for (int b = 0; b < kernel; ++b) {
            const int dx = b - p;
            const int c0 = std::max(0, -dx), c1 = std::min(W, W - dx);
            const double wv = w(o, i, a, b);
            for (int r = r0; r < r1; ++r) {
              double* orow = &out[static_cast<std::size_t>(r) * W];
              const double* irow = &in[static_cast<std::size_t>(r + dy) * W + dx];
              for (int c = c0; c < c1; ++c) orow[c] += wv * irow[c];
            }
          }
        }
      }
    }
    return y;
  }

  /// Accumulates parameter gradients into `grads` (may be null when the layer
  /// is frozen) and returns d(loss)/d(x) when `want_input_grad` is set.
  Tensor backward(const Tensor& x, const Tensor& dy, Conv2d* grads, bool want_input_grad = true) const {
    const int H = x.height, W = x.width, p = kernel / 2;
    Tensor dx = want_input_grad ? Tensor(in_channels, H, W) : Tensor();
    for (int o = 0; o < out_channels; ++o) {
      const auto g = dy.plane(o);
      if (grads != nullptr) {
        double s = 0.0;
        for (double v : g) s += v;
        grads->bias[static_cast<std::size_t>(o)] += s;
      }
      for (int i = 0; i < in_channels; ++i) {
        const auto in = x.plane(i);
        for (int a = 0; a < kernel; ++a) {
          const int dyo = a - p;
          const int r0 = std::max(0, -dyo), r1 = std::min(H, H - dyo);
          for (int b = 0; b < kernel; ++b) {
            const int dxo = b - p;
            const int c0 = std::max(0, -dxo), c1 = std::min(W, W - dxo);
            const std::size_t widx = ((static_cast<std::size_t>(o) * in_channels + i) * kernel + a) * kernel + b;
            const double wv = weight[widx];
            double acc = 0.0;
            for (int r = r0; r < r1; ++r) {
              const double* grow = &g[static_cast<std::size_t>(r) * W];
              const double* irow = &in[static_cast<std::size_t>(r + dyo) * W + dxo];
              for (int c = c0; c < c1; ++c) acc += grow[c] * irow[c];
              if (want_input_grad) {
                double* drow = &dx.plane(i)[static_cast<std::size_t>(r + dyo) * W + dxo];
                for (int c = c0; c < c1; ++c) drow[c] += wv * grow[c];
              }
            }
            if (grads != nullptr) grads->weight[widx] += acc;
          }
        }
      }
    }
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

struct Linear {
  int in_features = 0;
  int out_features = 0;
  std::vector<double> weight;  // out x in
  std::vector<double> bias;

  Linear() = default;
  Linear(int in, int out)
      : in_features(in), out_features(out), weight(static_cast<std::size_t>(in) * out, 0.0),
        bias(static_cast<std::size_t>(out), 0.0) {}

  template <class Rng>
  void init_xavier(Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / in_features));
    for (double& w : weight) w = dist(rng);
    std::fill(bias.begin(), bias.end(), 0.0);
  }

  std::vector<double> forward(std::span<const double> x) const {
    std::vector<double> y(bias);
    for (int o = 0; o < out_features; ++o) {
      for (int i = 0; i < in_features; ++i) y[static_cast<std::size_t>(o)] += weight[static_cast<std::size_t>(o) * in_features + i] * x[static_cast<std::size_t>(i)];
    }
    return y;
  }

  std::vector<double> backward(std::span<const double> x, std::span<const double> dy, Linear* grads) const {
    std::vector<double> dx(static_cast<std::size_t>(in_features), 0.0);
    for (int o = 0; o < out_features; ++o) {
      const double g = dy[static_cast<std::size_t>(o)];
      if (grads != nullptr) grads->bias[static_cast<std::size_t>(o)] += g;
      for (int i = 0; i < in_features; ++i) {
        const std::size_t k = static_cast<std::size_t>(o) * in_features + i;
        dx[static_cast<std::size_t>(i)] += weight[k] * g;
        if (grads != nullptr) grads->weight[k] += g * x[static_cast<std::size_t>(i)];
      }
    }
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

inline void relu_inplace(Tensor& t) {
  for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

/// Zeroes gradient entries where the ReLU output was clipped.
inline void relu_backward_inplace(const Tensor& activated, Tensor& grad) {
  for (std::size_t k = 0; k < grad.size(); ++k) {
    if (!(activated.data[k] > 0.0)) grad.data[k] = 0.0;
  }
}

struct PoolTrace {
  std::vector<std::uint32_t> argmax;
  int in_height = 0;
  int in_width = 0;
};

inline Tensor max_pool2(const Tensor& x, PoolTrace* trace) {
  const int h = x.height / 2, w = x.width / 2;
  Tensor y(x.channels, h, w);
  if (trace != nullptr) {
    trace->argmax.resize(y.size());
    trace->in_height = x.height;
    trace->in_width = x.width;
  }
  for (int c = 0; c < x.channels; ++c) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        int best_r = 2 * i, best_c = 2 * j;
        double best = x(c, best_r, best_c);
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            const double v = x(c, 2 * i + a, 2 * j + b);
            if (v > best) {
              best = v;
              best_r = 2 * i + a;
              best_c = 2 * j + b;
            }
          }
        }
        y(c, i, j) = best;
        if (trace != nullptr) {
          trace->argmax[(static_cast<std::size_t>(c) * h + i) * w + j] =
              static_cast<std::uint32_t>((static_cast<std::size_t>(c) * x.height + best_r) * x.width + best_c);
        }
      }
    }
  }
  return y;
}

inline Tensor max_pool2_backward(const PoolTrace& trace, const Tensor& dy) {
  Tensor dx(dy.channels, trace.in_height, trace.in_width);
  for (std::size_t k = 0; k < dy.size(); ++k) dx.data[trace.argmax[k]] += dy.data[k];
  return dx;
}

inline Tensor upsample_nearest2(const Tensor& x, int out_h, int out_w) {
  Tensor y(x.channels, out_h, out_w);
  for (int c = 0; c < x.channels; ++c) {
    for (int i = 0; i < out_h; ++i) {
      for (int j = 0; j < out_w; ++j) y(c, i, j) = x(c, std::min(i / 2, x.height - 1), std::min(j / 2, x.width - 1));
    }
  }
  return y;
}

inline Tensor upsample_nearest2_backward(const Tensor& dy, int in_h, int in_w) {
  Tensor dx(dy.channels, in_h, in_w);
  for (int c = 0; c < dy.channels; ++c) {
    for (int i = 0; i < dy.height; ++i) {
      for (int j = 0; j < dy.width; ++j) dx(c, std::min(i / 2, in_h - 1), std::min(j / 2, in_w - 1)) += dy(c, i, j);
    }
  }
  return dx;
}

/// Splits a gradient on a channel-concatenated tensor back into its parts.
inline std::pair<Tensor, Tensor> split_channels(const Tensor& t, int first_channels) {
  Tensor a(first_channels, t.height, t.width);
  Tensor b(t.channels - first_channels, t.height, t.width);
  std::copy(t.data.begin(), t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
  std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(a.size()), t.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> d_probs) {
  double dot = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) dot += probs[k] * d_probs[k];
  std::vector<double> d(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) d[k] = probs[k] * (d_probs[k] - dot);
  return d;
}

/// Collects parameter vectors of a module in a fixed visiting order.
template <class Module>
std::vector<std::vector<double>*> parameter_list(Module& m) {
  std::vector<std::vector<double>*> out;
  m.visit_parameters([&](const std::string&, std::vector<double>& v) { out.push_back(&v); });
  return out;
}

template <class Module>
void zero_parameters(Module& m) {
  m.visit_parameters([](const std::string&, std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
}

template <class Module>
std::uint64_t parameter_checksum(Module& m) {
  // FNV-1a over the raw bytes of every parameter.
  std::uint64_t h = 1469598103934665603ull;
  m.visit_parameters([&](const std::string&, std::vector<double>& v) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t k = 0; k < v.size() * sizeof(double); ++k) {
      h ^= bytes[k];
      h *= 1099511628211ull;
    }
  });
  return h;
}

enum class OptimizerKind { kNAdam, kAdamW };

/// NAdam (L2-coupled weight decay, momentum-decay schedule) and AdamW
/// (decoupled weight decay).
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::vector<double>*>& params, const std::vector<std::vector<double>*>& grads, double lr) {
    require(params.size() == grads.size(), ErrorKind::kShape, "optimizer: parameter/gradient count mismatch");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    ++t_;
    if (lr == 0.0) return;
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    double mu_t = 0.0, mu_next = 0.0, bc1 = 1.0 - std::pow(beta1_, t_);
    if (kind_ == OptimizerKind::kNAdam) {
      constexpr double kMomentumDecay = 4e-3;
      mu_t = beta1_ * (1.0 - 0.5 * std::pow(0.96, t_ * kMomentumDecay));
      mu_next = beta1_ * (1.0 - 0.5 * std::pow(0.96, (t_ + 1) * kMomentumDecay));
      mu_product_ *= mu_t;
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      const auto& g = *grads[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t e = 0; e < p.size(); ++e) {
        double grad = g[e];
        if (kind_ == OptimizerKind::kNAdam) {
          grad += weight_decay_ * p[e];
        } else {
          p[e] -= lr * weight_decay_ * p[e];
        }
        m[e] = beta1_ * m[e] + (1 - beta1_) * grad;
        v[e] = beta2_ * v[e] + (1 - beta2_) * grad * grad;
        const double denom = std::sqrt(v[e] / bc2) + eps_;
        if (kind_ == OptimizerKind::kNAdam) {
          const double m_hat = mu_next * m[e] / (1.0 - mu_product_ * mu_next) + (1.0 - mu_t) * grad / (1.0 - mu_product_);
          p[e] -= lr * m_hat / denom;
        } else {
          p[e] -= lr * (m[e] / bc1) / denom;
        }
      }
    }
  }

 private:
  OptimizerKind kind_;
  double weight_decay_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
  double mu_product_ = 1.0;
  std::vector<std::vector<double>> m_, v_;
};

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement of the monitored loss.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor, int patience) : lr_(lr), factor_(factor), patience_(patience) {}

  double lr() const noexcept { return lr_; }

  void observe(double loss) {
    if (loss < best_ - 1e-12) {
      best_ = loss;
      bad_epochs_ = 0;
      return;
    }
    if (++bad_epochs_ > patience_) {
      lr_ *= factor_;
      bad_epochs_ = 0;
    }
  }

 private:
  double lr_, factor_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

}  // namespace fovealseg::nn
