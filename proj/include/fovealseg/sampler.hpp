// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Saliency-guided resampling: the Gaussian-kernel sampling grid, forward
// warping (nearest for inference, bilinear for training), the uniform
// baseline, and the reverse sampler that scatters low-resolution predictions
// back onto the source raster.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "fovealseg/error.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg {

/// Square Gaussian kernel of side 2*sigma+1, sigma in source pixels.
struct KernelSpec {
  int sigma = 16;

  int size() const noexcept { return 2 * sigma + 1; }
  void validate() const {
    require(sigma >= 1, ErrorKind::kInvalidKernel, "kernel sigma must be >= 1, got " + std::to_string(sigma));
  }
  bool operator==(const KernelSpec&) const = default;
};

struct Kernel2D {
  int size = 0;
  std::vector<double> values;  // row-major size x size

  double operator()(int a, int b) const noexcept { return values[static_cast<std::size_t>(a) * size + b]; }
};

/// Unnormalized kernel, centre value exp(0) = 1.
inline Kernel2D gaussian_kernel(const KernelSpec& spec) {
  spec.validate();
  Kernel2D k{spec.size(), {}};
  k.values.resize(static_cast<std::size_t>(k.size) * k.size);
  const double denom = 2.0 * spec.sigma * spec.sigma;
  for (int a = 0; a < k.size; ++a) {
    for (int b = 0; b < k.size; ++b) {
      const double da = a - spec.sigma;
      const double db = b - spec.sigma;
      k.values[static_cast<std::size_t>(a) * k.size + b] = std::exp(-(da * da + db * db) / denom);
    }
  }
  return k;
}

/// Nonnegative sampling density over the source raster (1 x H x W).
struct SaliencyMap {
  Tensor density;

  int height() const noexcept { return density.height; }
  int width() const noexcept { return density.width; }

  void validate() const {
    require(density.channels == 1 && density.height >= 1 && density.width >= 1, ErrorKind::kShape,
            "saliency map must be 1xHxW, got " + density.shape_string());
    bool any_positive = false;
    for (double v : density.data) {
      require(std::isfinite(v) && v >= 0.0, ErrorKind::kValidation, "saliency must be finite and nonnegative");
      any_positive = any_positive || v > 0.0;
    }
    require(any_positive, ErrorKind::kValidation, "saliency map is identically zero");
  }
};

/// Normalized source coordinates for every target pixel. A coordinate g maps
/// to source row round(g * H) in nearest mode and g * (H - 1) in bilinear mode.
struct SamplingGrid {
  int source_height = 0;
  int source_width = 0;
  int height = 0;
  int width = 0;
  std::vector<double> gh;  // row-major height x width
  std::vector<double> gw;

  std::size_t index(int i, int j) const noexcept { return static_cast<std::size_t>(i) * width + j; }
  std::size_t size() const noexcept { return gh.size(); }
  bool operator==(const SamplingGrid&) const = default;
};

inline void validate_target(int source_h, int source_w, int h, int w) {
  require(h >= 1 && w >= 1, ErrorKind::kInvalidDimension, "target dimensions must be positive");
  require(h <= source_h && w <= source_w, ErrorKind::kInvalidDimension,
          "target " + std::to_string(h) + "x" + std::to_string(w) + " exceeds source " + std::to_string(source_h) +
              "x" + std::to_string(source_w));
}

/// Source pixel on which the kernel for target index `i` is centred.
inline int kernel_center(int i, int target, int source) {
  return static_cast<int>(std::lround(static_cast<double>(i) * source / target));
}

inline SamplingGrid uniform_grid(int source_h, int source_w, int h, int w) {
  validate_target(source_h, source_w, h, w);
  SamplingGrid g{source_h, source_w, h, w, {}, {}};
  g.gh.resize(static_cast<std::size_t>(h) * w);
  g.gw.resize(g.gh.size());
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      g.gh[g.index(i, j)] = static_cast<double>(i) / h;
      g.gw[g.index(i, j)] = static_cast<double>(j) / w;
    }
  }
  return g;
}

struct GridStats {
  int fallback_pixels = 0;  // windows whose saliency summed to zero
};

namespace detail {

inline std::vector<double> gaussian_1d(const KernelSpec& spec) {
  std::vector<double> e(static_cast<std::size_t>(spec.size()));
  for (int a = 0; a < spec.size(); ++a) {
    const double d = a - spec.sigma;
    e[static_cast<std::size_t>(a)] = std::exp(-d * d / (2.0 * spec.sigma * spec.sigma));
  }
  return e;
}

struct Window {
  int center = 0;
  int lo = 0;  // inclusive; may extend past the raster into the padding
  int hi = 0;  // inclusive
};

inline Window window(int i, int target, int source, int sigma) {
  const int c = kernel_center(i, target, source);
  return {c, c - sigma, c + sigma};
}

/// Replicate padding: positions outside the raster read the nearest edge.
inline int clamp_index(int r, int extent) noexcept { return std::clamp(r, 0, extent - 1); }

/// Kernel-weighted sums over one footprint: total weight and the weighted
/// sums of (unclamped) row and column positions.
struct WindowSums {
  double sum = 0.0, sum_r = 0.0, sum_c = 0.0;
};

inline WindowSums window_sums(const Tensor& d, const std::vector<double>& e, const Window& rw, const Window& cw,
                              int sigma) {
  const int H = d.height, W = d.width;
  WindowSums s;
  for (int r = rw.lo; r <= rw.hi; ++r) {
    const double er = e[static_cast<std::size_t>(r - rw.center + sigma)];
    const double* row = &d.data[static_cast<std::size_t>(clamp_index(r, H)) * W];
    double row_sum = 0.0, row_c = 0.0;
    for (int c = cw.lo; c <= cw.hi; ++c) {
      const double wt = row[clamp_index(c, W)] * e[static_cast<std::size_t>(c - cw.center + sigma)];
      row_sum += wt;
      row_c += wt * c;
    }
    s.sum += er * row_sum;
    s.sum_r += er * row_sum * r;
    s.sum_c += er * row_c;
  }
  return s;
}

}  // namespace detail

/// Windowed evaluation of the saliency-weighted kernel mean of source
/// coordinates. The kernel has compact support (its 2*sigma+1 footprint), so
/// restricting the sum to the footprint is exact. The saliency map is padded
/// by sigma with edge replication and padded positions keep their own
/// (out-of-range) coordinates, so a constant map reproduces the window
/// centres; results are clamped to [0,1].
inline SamplingGrid compute_grid(const SaliencyMap& saliency, int h, int w, const KernelSpec& spec,
                                 GridStats* stats = nullptr) {
  spec.validate();
  saliency.validate();
  const int H = saliency.height();
  const int W = saliency.width();
  validate_target(H, W, h, w);
  const auto e = detail::gaussian_1d(spec);

  SamplingGrid g{H, W, h, w, {}, {}};
  g.gh.resize(static_cast<std::size_t>(h) * w);
  g.gw.resize(g.gh.size());
  int fallbacks = 0;
  for (int i = 0; i < h; ++i) {
    const auto rw = detail::window(i, h, H, spec.sigma);
    for (int j = 0; j < w; ++j) {
      const auto cw = detail::window(j, w, W, spec.sigma);
      const auto s = detail::window_sums(saliency.density, e, rw, cw, spec.sigma);
      const auto k = g.index(i, j);
      if (s.sum > 0.0) {
        g.gh[k] = std::clamp(s.sum_r / s.sum / H, 0.0, 1.0);
        g.gw[k] = std::clamp(s.sum_c / s.sum / W, 0.0, 1.0);
      } else {
        ++fallbacks;
        g.gh[k] = static_cast<double>(i) / h;
        g.gw[k] = static_cast<double>(j) / w;
      }
    }
  }
  if (stats != nullptr) stats->fallback_pixels += fallbacks;
  return g;
}

/// Accumulates d(loss)/d(density) into `d_density` (1 x H x W) given the
/// gradients of the loss with respect to every grid coordinate. Coordinates
/// held by the [0,1] clamp receive no gradient.
inline void compute_grid_backward(const SaliencyMap& saliency, const SamplingGrid& grid, const KernelSpec& spec,
                                  std::span<const double> d_gh, std::span<const double> d_gw, Tensor& d_density) {
  const int H = saliency.height();
  const int W = saliency.width();
  require(d_density.channels == 1 && d_density.height == H && d_density.width == W, ErrorKind::kShape,
          "compute_grid_backward: gradient buffer shape");
  require(d_gh.size() == grid.size() && d_gw.size() == grid.size(), ErrorKind::kShape,
          "compute_grid_backward: grid gradient size");
  const auto e = detail::gaussian_1d(spec);
  for (int i = 0; i < grid.height; ++i) {
    const auto rw = detail::window(i, grid.height, H, spec.sigma);
    for (int j = 0; j < grid.width; ++j) {
      const auto cw = detail::window(j, grid.width, W, spec.sigma);
      const auto k = grid.index(i, j);
      if (d_gh[k] == 0.0 && d_gw[k] == 0.0) continue;
      const auto s = detail::window_sums(saliency.density, e, rw, cw, spec.sigma);
      if (!(s.sum > 0.0)) continue;
      const double gh = s.sum_r / s.sum / H;
      const double gw = s.sum_c / s.sum / W;
      const double scale_h = gh >= 0.0 && gh <= 1.0 ? d_gh[k] / s.sum : 0.0;
      const double scale_w = gw >= 0.0 && gw <= 1.0 ? d_gw[k] / s.sum : 0.0;
      if (scale_h == 0.0 && scale_w == 0.0) continue;
      for (int r = rw.lo; r <= rw.hi; ++r) {
        const double er = e[static_cast<std::size_t>(r - rw.center + spec.sigma)];
        const double term_h = scale_h * (static_cast<double>(r) / H - gh);
        double* out = &d_density.data[static_cast<std::size_t>(detail::clamp_index(r, H)) * W];
        for (int c = cw.lo; c <= cw.hi; ++c) {
          const double kw = er * e[static_cast<std::size_t>(c - cw.center + spec.sigma)];
          out[detail::clamp_index(c, W)] += kw * (term_h + scale_w * (static_cast<double>(c) / W - gw));
        }
      }
    }
  }
}

enum class WarpMode { kNearest, kBilinear };

namespace detail {

struct BilinearTap {
  int i0, i1;
  double a;  // weight of i1
};

inline BilinearTap bilinear_tap(double g, int extent) {
  if (extent <= 1) return {0, 0, 0.0};
  const double y = std::clamp(g, 0.0, 1.0) * (extent - 1);
  int i0 = static_cast<int>(std::floor(y));
  i0 = std::clamp(i0, 0, extent - 2);
  return {i0, i0 + 1, y - i0};
}

inline int nearest_index(double g, int extent) {
  const long r = std::lround(std::clamp(g, 0.0, 1.0) * extent);
  return static_cast<int>(std::min<long>(r, extent - 1));
}

inline void check_grid_source(const Tensor& src, const SamplingGrid& grid, const char* what) {
  require(src.height == grid.source_height && src.width == grid.source_width, ErrorKind::kShape,
          std::string(what) + ": grid built for " + std::to_string(grid.source_height) + "x" +
              std::to_string(grid.source_width) + " source, image is " + std::to_string(src.height) + "x" +
              std::to_string(src.width));
  require(grid.gh.size() == static_cast<std::size_t>(grid.height) * grid.width && grid.gw.size() == grid.gh.size(),
          ErrorKind::kShape, std::string(what) + ": malformed grid");
}

}  // namespace detail

inline Tensor warp(const Tensor& src, const SamplingGrid& grid, WarpMode mode) {
  detail::check_grid_source(src, grid, "warp");
  Tensor out(src.channels, grid.height, grid.width);
  for (int i = 0; i < grid.height; ++i) {
    for (int j = 0; j < grid.width; ++j) {
      const auto k = grid.index(i, j);
      if (mode == WarpMode::kNearest) {
        const int r = detail::nearest_index(grid.gh[k], src.height);
        const int c = detail::nearest_index(grid.gw[k], src.width);
        for (int ch = 0; ch < src.channels; ++ch) out(ch, i, j) = src(ch, r, c);
      } else {
        const auto tr = detail::bilinear_tap(grid.gh[k], src.height);
        const auto tc = detail::bilinear_tap(grid.gw[k], src.width);
        const double w00 = (1 - tr.a) * (1 - tc.a), w01 = (1 - tr.a) * tc.a;
        const double w10 = tr.a * (1 - tc.a), w11 = tr.a * tc.a;
        for (int ch = 0; ch < src.channels; ++ch) {
          out(ch, i, j) = w00 * src(ch, tr.i0, tc.i0) + w01 * src(ch, tr.i0, tc.i1) + w10 * src(ch, tr.i1, tc.i0) +
                          w11 * src(ch, tr.i1, tc.i1);
        }
      }
    }
  }
  return out;
}

/// Gradient of a bilinear warp with respect to the grid coordinates. The
/// source image is treated as a constant.
inline void warp_bilinear_backward(const Tensor& src, const SamplingGrid& grid, const Tensor& d_out,
                                   std::vector<double>& d_gh, std::vector<double>& d_gw) {
  detail::check_grid_source(src, grid, "warp_bilinear_backward");
  require(d_out.channels == src.channels && d_out.height == grid.height && d_out.width == grid.width,
          ErrorKind::kShape, "warp_bilinear_backward: output gradient shape");
  d_gh.assign(grid.size(), 0.0);
  d_gw.assign(grid.size(), 0.0);
  const double sh = src.height > 1 ? src.height - 1 : 0.0;
  const double sw = src.width > 1 ? src.width - 1 : 0.0;
  for (int i = 0; i < grid.height; ++i) {
    for (int j = 0; j < grid.width; ++j) {
      const auto k = grid.index(i, j);
      const auto tr = detail::bilinear_tap(grid.gh[k], src.height);
      const auto tc = detail::bilinear_tap(grid.gw[k], src.width);
      double dy = 0.0, dx = 0.0;
      for (int ch = 0; ch < src.channels; ++ch) {
        const double g = d_out(ch, i, j);
        if (g == 0.0) continue;
        const double f00 = src(ch, tr.i0, tc.i0), f01 = src(ch, tr.i0, tc.i1);
        const double f10 = src(ch, tr.i1, tc.i0), f11 = src(ch, tr.i1, tc.i1);
        dy += g * ((1 - tc.a) * (f10 - f00) + tc.a * (f11 - f01));
        dx += g * ((1 - tr.a) * (f01 - f00) + tr.a * (f11 - f10));
      }
      d_gh[k] = dy * sh;
      d_gw[k] = dx * sw;
    }
  }
}

inline Tensor uniform_downsample(const Tensor& src, int h, int w) {
  validate_target(src.height, src.width, h, w);
  Tensor out(src.channels, h, w);
  for (int i = 0; i < h; ++i) {
    const int r = std::min(kernel_center(i, h, src.height), src.height - 1);
    for (int j = 0; j < w; ++j) {
      const int c = std::min(kernel_center(j, w, src.width), src.width - 1);
      for (int ch = 0; ch < src.channels; ++ch) out(ch, i, j) = src(ch, r, c);
    }
  }
  return out;
}

/// Bilinear resize with aligned corners, used to lift low-resolution
/// saliency to the source raster.
inline Tensor resize_bilinear(const Tensor& src, int h, int w) {
  require(h >= 1 && w >= 1, ErrorKind::kInvalidDimension, "resize target must be positive");
  Tensor out(src.channels, h, w);
  for (int i = 0; i < h; ++i) {
    const auto tr = detail::bilinear_tap(h > 1 ? static_cast<double>(i) / (h - 1) : 0.0, src.height);
    for (int j = 0; j < w; ++j) {
      const auto tc = detail::bilinear_tap(w > 1 ? static_cast<double>(j) / (w - 1) : 0.0, src.width);
      for (int ch = 0; ch < src.channels; ++ch) {
        out(ch, i, j) = (1 - tr.a) * ((1 - tc.a) * src(ch, tr.i0, tc.i0) + tc.a * src(ch, tr.i0, tc.i1)) +
                        tr.a * ((1 - tc.a) * src(ch, tr.i1, tc.i0) + tc.a * src(ch, tr.i1, tc.i1));
      }
    }
  }
  return out;
}

inline Tensor resize_bilinear_backward(const Tensor& d_out, int src_h, int src_w) {
  Tensor d_src(d_out.channels, src_h, src_w);
  const int h = d_out.height, w = d_out.width;
  for (int i = 0; i < h; ++i) {
    const auto tr = detail::bilinear_tap(h > 1 ? static_cast<double>(i) / (h - 1) : 0.0, src_h);
    for (int j = 0; j < w; ++j) {
      const auto tc = detail::bilinear_tap(w > 1 ? static_cast<double>(j) / (w - 1) : 0.0, src_w);
      for (int ch = 0; ch < d_out.channels; ++ch) {
        const double g = d_out(ch, i, j);
        d_src(ch, tr.i0, tc.i0) += g * (1 - tr.a) * (1 - tc.a);
        d_src(ch, tr.i0, tc.i1) += g * (1 - tr.a) * tc.a;
        d_src(ch, tr.i1, tc.i0) += g * tr.a * (1 - tc.a);
        d_src(ch, tr.i1, tc.i1) += g * tr.a * tc.a;
      }
    }
  }
  return d_src;
}

struct UnwarpStats {
  int uncovered_pixels = 0;  // filled from the nearest sample
  int degenerate = 0;        // no pixel received any scattered weight
};

/// Reverse sampler. Each target value is splatted with a unit tent kernel at
/// its source location (g * H, g * W); covered pixels take the normalized
/// weighted mean, uncovered pixels copy the nearest sample (ties go to the
/// lowest row-major target index).
inline Tensor unwarp(const Tensor& yhat, const SamplingGrid& grid, UnwarpStats* stats = nullptr) {
  require(yhat.height == grid.height && yhat.width == grid.width, ErrorKind::kShape,
          "unwarp: prediction is " + yhat.shape_string() + ", grid target is " + std::to_string(grid.height) + "x" +
              std::to_string(grid.width));
  const int H = grid.source_height;
  const int W = grid.source_width;
  const int K = yhat.channels;
  const std::size_t n = grid.size();

  std::vector<double> ys(n), xs(n);
  auto snap = [](double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
  };
  for (std::size_t t = 0; t < n; ++t) {
    ys[t] = std::clamp(snap(grid.gh[t] * H), 0.0, static_cast<double>(H - 1));
    xs[t] = std::clamp(snap(grid.gw[t] * W), 0.0, static_cast<double>(W - 1));
  }

  Tensor num(K, H, W);
  std::vector<double> den(static_cast<std::size_t>(H) * W, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const int i = static_cast<int>(t) / grid.width;
    const int j = static_cast<int>(t) % grid.width;
    const int r0 = static_cast<int>(std::floor(ys[t]));
    const int c0 = static_cast<int>(std::floor(xs[t]));
    const double a = ys[t] - r0;
    const double b = xs[t] - c0;
    const int rr[2] = {r0, r0 + 1};
    const int cc[2] = {c0, c0 + 1};
    const double wr[2] = {1 - a, a};
    const double wc[2] = {1 - b, b};
    for (int p = 0; p < 2; ++p) {
      if (rr[p] >= H || wr[p] == 0.0) continue;
      for (int q = 0; q < 2; ++q) {
        if (cc[q] >= W || wc[q] == 0.0) continue;
        const double wt = wr[p] * wc[q];
        den[static_cast<std::size_t>(rr[p]) * W + cc[q]] += wt;
        for (int ch = 0; ch < K; ++ch) num(ch, rr[p], cc[q]) += wt * yhat(ch, i, j);
      }
    }
  }

  // Bucket samples so the nearest-sample search only visits nearby cells.
  const int cell = std::max(1, static_cast<int>(std::ceil(std::max(static_cast<double>(H) / grid.height,
                                                                  static_cast<double>(W) / grid.width))));
  const int nby = (H + cell - 1) / cell;
  const int nbx = (W + cell - 1) / cell;
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(nby) * nbx);
  for (std::size_t t = 0; t < n; ++t) {
    const int by = std::min(nby - 1, static_cast<int>(ys[t]) / cell);
    const int bx = std::min(nbx - 1, static_cast<int>(xs[t]) / cell);
    buckets[static_cast<std::size_t>(by) * nbx + bx].push_back(static_cast<int>(t));
  }
  auto nearest_sample = [&](int p, int q) {
    const int pb = p / cell;
    const int qb = q / cell;
    double best = std::numeric_limits<double>::infinity();
    int best_t = -1;
    const int max_ring = std::max(nby, nbx);
    for (int ring = 0; ring <= max_ring; ++ring) {
      if (best_t >= 0 && static_cast<double>(ring - 1) * cell > std::sqrt(best)) break;
      for (int by = pb - ring; by <= pb + ring; ++by) {
        if (by < 0 || by >= nby) continue;
        for (int bx = qb - ring; bx <= qb + ring; ++bx) {
          if (bx < 0 || bx >= nbx) continue;
          if (std::max(std::abs(by - pb), std::abs(bx - qb)) != ring) continue;
          for (int t : buckets[static_cast<std::size_t>(by) * nbx + bx]) {
            const double dy = ys[static_cast<std::size_t>(t)] - p;
            const double dx = xs[static_cast<std::size_t>(t)] - q;
            const double dist = dy * dy + dx * dx;
            if (dist < best || (dist == best && t < best_t)) {
              best = dist;
              best_t = t;
            }
          }
        }
      }
    }
    return best_t;
  };

  Tensor out(K, H, W);
  int uncovered = 0;
  for (int p = 0; p < H; ++p) {
    for (int q = 0; q < W; ++q) {
      const double dn = den[static_cast<std::size_t>(p) * W + q];
      if (dn > 1e-9) {
        for (int ch = 0; ch < K; ++ch) out(ch, p, q) = num(ch, p, q) / dn;
      } else {
        ++uncovered;
        const int t = nearest_sample(p, q);
        const int i = t / grid.width;
        const int j = t % grid.width;
        for (int ch = 0; ch < K; ++ch) out(ch, p, q) = yhat(ch, i, j);
      }
    }
  }
  if (stats != nullptr) {
    stats->uncovered_pixels += uncovered;
    if (uncovered == H * W) ++stats->degenerate;
  }
  return out;
}

/// Nearest-mode resampling of a one-hot label volume; labels are never blended.
inline Tensor subsample_labels(const Tensor& one_hot, const SamplingGrid& grid) {
  for (int i = 0; i < one_hot.height; ++i) {
    for (int j = 0; j < one_hot.width; ++j) {
      int ones = 0;
      for (int c = 0; c < one_hot.channels; ++c) {
        const double v = one_hot(c, i, j);
        require(v == 0.0 || v == 1.0, ErrorKind::kValidation, "label volume is not one-hot");
        ones += v == 1.0;
      }
      require(ones == 1, ErrorKind::kValidation,
              "label volume is not one-hot at (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
  }
  return warp(one_hot, grid, WarpMode::kNearest);
}

/// Debug dump: gh then gw, row-major, 32-bit floats.
inline void write_grid_binary(std::ostream& out, const SamplingGrid& grid) {
  auto put = [&](const std::vector<double>& v) {
    for (double x : v) {
      const float f = static_cast<float>(x);
      out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  };
  put(grid.gh);
  put(grid.gw);
}

inline SamplingGrid read_grid_binary(std::istream& in, int source_h, int source_w, int h, int w) {
  SamplingGrid g{source_h, source_w, h, w, {}, {}};
  auto get = [&](std::vector<double>& v) {
    v.resize(static_cast<std::size_t>(h) * w);
    for (double& x : v) {
      float f = 0;
      in.read(reinterpret_cast<char*>(&f), sizeof f);
      require(static_cast<bool>(in), ErrorKind::kIo, "truncated grid dump");
      x = f;
    }
  };
  get(g.gh);
  get(g.gw);
  return g;
}

}  // namespace fovealseg
