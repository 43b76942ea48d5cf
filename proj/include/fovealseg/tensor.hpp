// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fovealseg/error.hpp"

namespace fovealseg {

/// Planar (channel-major) image / feature map. Element (c, i, j) lives at
/// data[(c * height + i) * width + j].
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
    require(c >= 0 && h >= 0 && w >= 0, ErrorKind::kInvalidDimension, "negative tensor dimension");
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.channels, other.height, other.width); }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  bool empty() const noexcept { return data.empty(); }

  double& operator()(int c, int i, int j) noexcept {
    return data[(static_cast<std::size_t>(c) * height + i) * width + j];
  }
  double operator()(int c, int i, int j) const noexcept {
    return data[(static_cast<std::size_t>(c) * height + i) * width + j];
  }

  std::span<double> plane(int c) noexcept { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const noexcept { return {data.data() + c * plane_size(), plane_size()}; }

  bool same_shape(const Tensor& other) const noexcept {
    return channels == other.channels && height == other.height && width == other.width;
  }

  void fill(double value) { std::fill(data.begin(), data.end(), value); }

  std::string shape_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  require(a.same_shape(b), ErrorKind::kShape,
          what + ": shape " + a.shape_string() + " vs " + b.shape_string());
}

/// Stack the channels of `a` and `b` (same spatial size) into one tensor.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.height == b.height && a.width == b.width, ErrorKind::kShape, "concat_channels: spatial mismatch");
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

/// Single-channel binary mask.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::uint8_t& operator()(int i, int j) noexcept { return data[static_cast<std::size_t>(i) * width + j]; }
  std::uint8_t operator()(int i, int j) const noexcept { return data[static_cast<std::size_t>(i) * width + j]; }

  bool in_bounds(int i, int j) const noexcept { return i >= 0 && j >= 0 && i < height && j < width; }

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
  }

  bool operator==(const Mask&) const = default;
};

/// Threshold channel `c` of a tensor at `level` (strictly greater counts as set).
inline Mask threshold(const Tensor& t, double level, int c = 0) {
  Mask m(t.height, t.width);
  const auto p = t.plane(c);
  for (std::size_t k = 0; k < p.size(); ++k) m.data[k] = p[k] > level ? 1 : 0;
  return m;
}

}  // namespace fovealseg
