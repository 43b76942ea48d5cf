// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Annotated scenes, gaze-conditioned IOI extraction, class-balanced gaze
// sampling, and the synthetic scene / sequence generators.
//
// Polygon vertices are (x, y) = (column, row) in continuous image
// coordinates; pixel (r, c) is covered when its centre (c + 0.5, r + 0.5)
// lies inside under the even-odd rule.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fovealseg/error.hpp"
#include "fovealseg/gaze.hpp"
#include "fovealseg/random.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using Polygon = std::vector<Point>;

/// Crossing-number test of the point (x, y).
inline bool point_in_polygon(const Polygon& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

/// Scanline fill; agrees with point_in_polygon at every pixel centre.
inline Mask rasterize_polygon(const Polygon& poly, int height, int width) {
  require(height >= 1 && width >= 1, ErrorKind::kInvalidDimension, "raster dims must be positive");
  Mask m(height, width);
  if (poly.size() < 3) return m;
  std::vector<double> xs;
  for (int r = 0; r < height; ++r) {
    const double y = r + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const Point& a = poly[i];
      const Point& b = poly[j];
      if ((a.y > y) != (b.y > y)) xs.push_back((b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x);
    }
    if (xs.empty()) continue;
    std::sort(xs.begin(), xs.end());
    for (int c = 0; c < width; ++c) {
      const double x = c + 0.5;
      const auto above = xs.end() - std::upper_bound(xs.begin(), xs.end(), x);
      // upper_bound counts crossings with x < crossing, the same strict test
      // as point_in_polygon.
      if (above % 2 == 1) m(r, c) = 1;
    }
  }
  return m;
}

struct Instance {
  int class_id = 0;
  Polygon polygon;
};

/// Image plus instances in depth order: later entries occlude earlier ones.
struct AnnotatedScene {
  Tensor image;  // 3 x H x W in [0,1]
  std::vector<Instance> instances;

  int height() const noexcept { return image.height; }
  int width() const noexcept { return image.width; }
};

/// Per-pixel index of the front-most covering instance, -1 on background.
inline std::vector<int> instance_owner(const AnnotatedScene& scene) {
  std::vector<int> owner(static_cast<std::size_t>(scene.height()) * scene.width(), -1);
  for (std::size_t k = 0; k < scene.instances.size(); ++k) {
    const Mask m = rasterize_polygon(scene.instances[k].polygon, scene.height(), scene.width());
    for (std::size_t p = 0; p < owner.size(); ++p) {
      if (m.data[p]) owner[p] = static_cast<int>(k);
    }
  }
  return owner;
}

inline Mask visible_region(const std::vector<int>& owner, int height, int width, int instance) {
  Mask m(height, width);
  for (std::size_t p = 0; p < owner.size(); ++p) m.data[p] = owner[p] == instance;
  return m;
}

struct FovealSample {
  Tensor image;
  GazePoint gaze;
  Mask y_binary;
  int class_id = 0;
  std::string source;
};

/// (C+1) x H x W one-hot volume; channel 0 is background.
inline Tensor one_hot_labels(const FovealSample& s, int num_classes) {
  require(s.class_id >= 0 && s.class_id < num_classes, ErrorKind::kValidation,
          "class id " + std::to_string(s.class_id) + " outside [0," + std::to_string(num_classes) + ")");
  Tensor t(num_classes + 1, s.y_binary.height, s.y_binary.width);
  for (int i = 0; i < s.y_binary.height; ++i) {
    for (int j = 0; j < s.y_binary.width; ++j) {
      t(s.y_binary(i, j) ? s.class_id + 1 : 0, i, j) = 1.0;
    }
  }
  return t;
}

/// The IOI is the visible region of the front-most instance under the gaze.
inline FovealSample gaze_to_ioi(const AnnotatedScene& scene, GazePoint gaze, const std::string& source = "synthetic") {
  require(gaze.valid(), ErrorKind::kValidation, "gaze outside [0,1]");
  const auto owner = instance_owner(scene);
  const PixelIndex px = to_pixel(gaze, scene.height(), scene.width());
  const int k = owner[static_cast<std::size_t>(px.row) * scene.width() + px.col];
  if (k < 0) {
    fail(ErrorKind::kNoInstance,
         "gaze pixel (" + std::to_string(px.row) + "," + std::to_string(px.col) + ") lies on background");
  }
  FovealSample s{scene.image, gaze, visible_region(owner, scene.height(), scene.width(), k),
                 scene.instances[static_cast<std::size_t>(k)].class_id, source};
  require(s.y_binary(px.row, px.col) == 1, ErrorKind::kValidation, "IOI mask does not contain the gaze pixel");
  return s;
}

/// Keeps per-class sample counts within one of each other: only classes at
/// the current minimum count may be drawn.
class ClassBalancer {
 public:
  explicit ClassBalancer(int num_classes) : counts_(static_cast<std::size_t>(num_classes), 0) {
    require(num_classes >= 1, ErrorKind::kConfiguration, "balancer needs >= 1 class");
  }

  bool eligible(int class_id) const {
    if (class_id < 0 || class_id >= num_classes()) return false;
    return counts_[static_cast<std::size_t>(class_id)] == *std::min_element(counts_.begin(), counts_.end());
  }
  void record(int class_id) { ++counts_.at(static_cast<std::size_t>(class_id)); }
  int num_classes() const noexcept { return static_cast<int>(counts_.size()); }
  const std::vector<int>& counts() const noexcept { return counts_; }

 private:
  std::vector<int> counts_;
};

/// Uniform visible pixel of a uniformly chosen instance of a most
/// under-quota class. Returns nullopt when the scene has no such instance.
template <class Rng>
std::optional<GazePoint> sample_gaze(const AnnotatedScene& scene, Rng& rng, ClassBalancer& balance) {
  const auto owner = instance_owner(scene);
  std::vector<int> candidates;
  for (std::size_t k = 0; k < scene.instances.size(); ++k) {
    if (!balance.eligible(scene.instances[k].class_id)) continue;
    if (std::find(owner.begin(), owner.end(), static_cast<int>(k)) != owner.end()) {
      candidates.push_back(static_cast<int>(k));
    }
  }
  if (candidates.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  const int k = candidates[pick(rng)];
  std::vector<std::size_t> pixels;
  for (std::size_t p = 0; p < owner.size(); ++p) {
    if (owner[p] == k) pixels.push_back(p);
  }
  std::uniform_int_distribution<std::size_t> pick_px(0, pixels.size() - 1);
  const std::size_t p = pixels[pick_px(rng)];
  balance.record(scene.instances[static_cast<std::size_t>(k)].class_id);
  const int w = scene.width();
  return from_pixel({static_cast<int>(p / static_cast<std::size_t>(w)), static_cast<int>(p % static_cast<std::size_t>(w))},
                    scene.height(), w);
}

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class ShapeKind { kRectangle = 0, kDisk = 1, kTriangle = 2 };
inline constexpr int kSyntheticClasses = 3;

struct SyntheticSpec {
  int height = 32;
  int width = 32;
  int min_shapes = 2;
  int max_shapes = 5;
  int min_size = 5;   // bounding extent in pixels
  int max_size = 12;
  double noise = 0.03;         // background / shape texture amplitude
  double color_jitter = 0.08;  // per-instance colour perturbation
  std::array<std::array<double, 3>, kSyntheticClasses> palette{{{0.85, 0.25, 0.20}, {0.20, 0.75, 0.30}, {0.25, 0.35, 0.90}}};

  void validate() const {
    require(height >= 8 && width >= 8, ErrorKind::kConfiguration, "synthetic canvas must be at least 8x8");
    require(min_shapes >= 1 && min_shapes <= max_shapes, ErrorKind::kConfiguration, "invalid shape count range");
    require(min_size >= 3 && min_size <= max_size && max_size < std::min(height, width), ErrorKind::kConfiguration,
            "invalid shape size range");
    require(noise >= 0.0 && color_jitter >= 0.0, ErrorKind::kConfiguration, "noise amplitudes must be >= 0");
  }
};

struct SceneGenStats {
  int requested_shapes = 0;
  int placed_shapes = 0;
  bool shortfall() const noexcept { return placed_shapes < requested_shapes; }
};

inline constexpr int kMaxPlacementAttempts = 100;
inline constexpr int kMinShapeArea = 9;

namespace detail {

template <class Rng>
Polygon random_shape(ShapeKind kind, double cx, double cy, int size, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double half = size / 2.0;
  Polygon p;
  switch (kind) {
    case ShapeKind::kRectangle: {
      const double hw = half * (0.6 + 0.4 * unit(rng));
      const double hh = half * (0.6 + 0.4 * unit(rng));
      p = {{cx - hw, cy - hh}, {cx + hw, cy - hh}, {cx + hw, cy + hh}, {cx - hw, cy + hh}};
      break;
    }
    case ShapeKind::kDisk: {
      constexpr int kSides = 24;
      for (int k = 0; k < kSides; ++k) {
        const double a = 2.0 * std::numbers::pi * k / kSides;
        p.push_back({cx + half * std::cos(a), cy + half * std::sin(a)});
      }
      break;
    }
    case ShapeKind::kTriangle: {
      const double phase = 2.0 * std::numbers::pi * unit(rng);
      const double r = half * 1.15;
      for (int k = 0; k < 3; ++k) {
        const double a = phase + 2.0 * std::numbers::pi * k / 3.0;
        p.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
      }
      break;
    }
  }
  return p;
}

inline bool touches(const Mask& occupied, const Mask& m) {
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      if (!m(r, c)) continue;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (occupied.in_bounds(r + dr, c + dc) && occupied(r + dr, c + dc)) return true;
        }
      }
    }
  }
  return false;
}

inline Polygon translated(const Polygon& p, double dx, double dy) {
  Polygon out = p;
  for (auto& v : out) {
    v.x += dx;
    v.y += dy;
  }
  return out;
}

}  // namespace detail

/// Paints background noise and instance colours; `colors` holds one RGB
/// triple per instance.
template <class Rng>
Tensor render_scene(int height, int width, const std::vector<Instance>& instances,
                    const std::vector<std::array<double, 3>>& colors, double background, double noise, Rng& rng) {
  std::uniform_real_distribution<double> jitter(-noise, noise);
  Tensor img(3, height, width);
  for (double& v : img.data) v = background + jitter(rng);
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const Mask m = rasterize_polygon(instances[k].polygon, height, width);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        if (!m(r, c)) continue;
        for (int ch = 0; ch < 3; ++ch) img(ch, r, c) = colors[k][static_cast<std::size_t>(ch)] + jitter(rng);
      }
    }
  }
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

struct SceneStyle {
  double background = 0.5;
  std::vector<std::array<double, 3>> colors;
};

/// Non-overlapping shapes on a noisy background; deterministic in (spec, seed).
inline AnnotatedScene generate_synthetic_scene(const SyntheticSpec& spec, std::uint64_t seed,
                                               SceneGenStats* stats = nullptr, SceneStyle* style_out = nullptr) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(spec.min_shapes, spec.max_shapes);
  std::uniform_int_distribution<int> size_dist(spec.min_size, spec.max_size);
  std::uniform_int_distribution<int> kind_dist(0, kSyntheticClasses - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> cj(-spec.color_jitter, spec.color_jitter);

  const int requested = count_dist(rng);
  AnnotatedScene scene;
  SceneStyle style;
  style.background = 0.35 + 0.25 * unit(rng);
  Mask occupied(spec.height, spec.width);
  for (int s = 0; s < requested; ++s) {
    const auto kind = static_cast<ShapeKind>(kind_dist(rng));
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      const int size = size_dist(rng);
      const double margin = size / 2.0 + 1.0;
      const double cx = margin + unit(rng) * (spec.width - 2.0 * margin);
      const double cy = margin + unit(rng) * (spec.height - 2.0 * margin);
      Polygon poly = detail::random_shape(kind, cx, cy, size, rng);
      const Mask m = rasterize_polygon(poly, spec.height, spec.width);
      if (static_cast<int>(m.count()) < kMinShapeArea || detail::touches(occupied, m)) continue;
      for (std::size_t p = 0; p < m.data.size(); ++p) occupied.data[p] |= m.data[p];
      scene.instances.push_back({static_cast<int>(kind), std::move(poly)});
      std::array<double, 3> color = spec.palette[static_cast<std::size_t>(kind)];
      for (double& v : color) v = std::clamp(v + cj(rng), 0.0, 1.0);
      style.colors.push_back(color);
      placed = true;
    }
  }
  scene.image = render_scene(spec.height, spec.width, scene.instances, style.colors, style.background, spec.noise, rng);
  if (stats != nullptr) *stats = {requested, static_cast<int>(scene.instances.size())};
  if (style_out != nullptr) *style_out = std::move(style);
  return scene;
}

/// Balanced FovealSamples from consecutive scene seeds; scenes without an
/// eligible instance are skipped.
inline std::vector<FovealSample> make_corpus(const SyntheticSpec& spec, int count, std::uint64_t seed,
                                             std::vector<std::uint64_t>* scene_seeds = nullptr) {
  require(count >= 0, ErrorKind::kConfiguration, "corpus size must be >= 0");
  ClassBalancer balance(kSyntheticClasses);
  std::mt19937_64 gaze_rng(derive_seed(seed, SeedStream::kGaze));
  std::vector<FovealSample> out;
  for (std::uint64_t k = 0; static_cast<int>(out.size()) < count; ++k) {
    require(k < static_cast<std::uint64_t>(count) * 100 + 100, ErrorKind::kConfiguration,
            "could not draw a balanced corpus");
    const std::uint64_t scene_seed = derive_seed(seed, {k});
    const AnnotatedScene scene = generate_synthetic_scene(spec, scene_seed);
    const auto gaze = sample_gaze(scene, gaze_rng, balance);
    if (!gaze) continue;
    out.push_back(gaze_to_ioi(scene, *gaze));
    if (scene_seeds != nullptr) scene_seeds->push_back(scene_seed);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic sequences

struct SequenceSpec {
  SyntheticSpec scene;
  int frames = 300;
  double fps = 30.0;
  double saccade_rate = 2.0;       // saccades per second
  double continue_prob = 0.35;     // probability a frame stays in the current segment
  double beta = 0.037;             // frame-difference threshold the boundaries must exceed
  double gaze_threshold = 0.1;     // saccades jump farther than this
  double fixation_jitter = 0.01;   // per-axis gaze jitter, normalized units
  double frame_noise = 0.01;       // per-frame pixel noise within a segment
  int max_shift = 2;               // scene translation at a boundary, pixels (Euclidean)
  double exposure_step = 0.06;     // brightness change at a boundary

  void validate() const {
    scene.validate();
    require(frames >= 1, ErrorKind::kConfiguration, "sequence needs >= 1 frame");
    require(fps > 0.0 && saccade_rate >= 0.0 && saccade_rate <= fps, ErrorKind::kConfiguration,
            "saccade rate must lie in [0, fps]");
    require(continue_prob >= 0.0 && continue_prob <= 1.0, ErrorKind::kConfiguration, "continue_prob outside [0,1]");
    require(beta > 0.0 && gaze_threshold > 0.0, ErrorKind::kConfiguration, "thresholds must be > 0");
    require(fixation_jitter >= 0.0 && frame_noise >= 0.0 && max_shift >= 0, ErrorKind::kConfiguration,
            "noise parameters must be >= 0");
  }
};

struct SyntheticSequence {
  std::vector<Tensor> frames;
  GazeTrace trace;
  std::vector<int> segment_boundaries;  // first frame of every segment, starting at 0
  std::vector<int> saccade_frames;      // frames whose gaze jumped from the previous frame
  double fixation_fraction = 1.0;       // within-segment consecutive pairs below gaze_threshold
  std::vector<AnnotatedScene> scenes;   // per-frame annotation (translated with the scene)
};

inline double mean_abs_difference(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "frame difference");
  require(!a.empty(), ErrorKind::kShape, "frame difference of empty frames");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a.data[k] - b.data[k]);
  return s / static_cast<double>(a.size());
}

/// Piecewise-static frame segments with fixation jitter and Poisson
/// saccades. Boundary frames differ from the previous segment's first frame
/// by more than beta; frames inside a segment stay below it.
inline SyntheticSequence generate_synthetic_sequence(const SequenceSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int H = spec.scene.height, W = spec.scene.width;
  std::mt19937_64 rng(derive_seed(seed, SeedStream::kSequence));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-spec.fixation_jitter, spec.fixation_jitter);
  std::uniform_real_distribution<double> pixel_noise(-spec.frame_noise, spec.frame_noise);

  AnnotatedScene base;
  SceneStyle style;
  for (std::uint64_t k = 0;; ++k) {
    base = generate_synthetic_scene(spec.scene, derive_seed(seed, {k}), nullptr, &style);
    if (base.instances.size() >= 2) break;
    require(k < 1000, ErrorKind::kConfiguration, "cannot generate a scene with two instances");
  }

  double dx = 0.0, dy = 0.0, exposure = 0.0;
  auto current_scene = [&]() {
    AnnotatedScene s;
    for (const auto& inst : base.instances) s.instances.push_back({inst.class_id, detail::translated(inst.polygon, dx, dy)});
    std::vector<std::array<double, 3>> colors = style.colors;
    for (auto& c : colors) {
      for (double& v : c) v = std::clamp(v + exposure, 0.0, 1.0);
    }
    s.image = render_scene(H, W, s.instances, colors, std::clamp(style.background + exposure, 0.0, 1.0),
                           spec.scene.noise, rng);
    return s;
  };
  auto noisy = [&](const Tensor& t) {
    Tensor out = t;
    for (double& v : out.data) v = std::clamp(v + pixel_noise(rng), 0.0, 1.0);
    return out;
  };
  auto interior_point = [&](const AnnotatedScene& s, int instance) {
    const auto owner = instance_owner(s);
    std::vector<std::size_t> core, all;
    for (std::size_t p = 0; p < owner.size(); ++p) {
      if (owner[p] != instance) continue;
      all.push_back(p);
      const int r = static_cast<int>(p / W), c = static_cast<int>(p % W);
      bool inner = true;
      for (int a = -1; a <= 1 && inner; ++a) {
        for (int b = -1; b <= 1 && inner; ++b) {
          const int rr = r + a, cc = c + b;
          inner = rr >= 0 && rr < H && cc >= 0 && cc < W && owner[static_cast<std::size_t>(rr) * W + cc] == instance;
        }
      }
      if (inner) core.push_back(p);
    }
    const auto& pool = core.empty() ? all : core;
    const std::size_t p = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    return from_pixel({static_cast<int>(p / W), static_cast<int>(p % W)}, H, W);
  };
  auto clamp_gaze = [](GazePoint g) { return GazePoint{std::clamp(g.u, 0.0, 1.0), std::clamp(g.v, 0.0, 1.0)}; };

  SyntheticSequence seq;
  AnnotatedScene scene = current_scene();
  Tensor segment_base = scene.image;
  Tensor segment_first;
  int fixated = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, base.instances.size() - 1)(rng));
  GazePoint fixation = interior_point(scene, fixated);
  GazePoint previous{};
  std::vector<GazeSample> samples;
  int within_pairs = 0, within_fixations = 0;
  const double saccade_prob = spec.saccade_rate / spec.fps;

  for (int t = 0; t < spec.frames; ++t) {
    bool boundary = t == 0;
    if (t > 0 && unit(rng) >= spec.continue_prob) {
      boundary = true;
      // Shift the scene and exposure; retry until the new frame clears beta.
      for (int attempt = 0;; ++attempt) {
        require(attempt < 1000, ErrorKind::kConfiguration, "cannot produce a segment change above beta");
        const double old_dx = dx, old_dy = dy, old_exposure = exposure;
        std::uniform_int_distribution<int> step(-spec.max_shift, spec.max_shift);
        int sx = step(rng), sy = step(rng);
        while (sx * sx + sy * sy > spec.max_shift * spec.max_shift) {
          sx = step(rng);
          sy = step(rng);
        }
        dx = std::clamp(dx + sx, -4.0, 4.0);
        dy = std::clamp(dy + sy, -4.0, 4.0);
        bool in_bounds = true;
        for (const auto& inst : base.instances) {
          for (const auto& v : inst.polygon) {
            in_bounds = in_bounds && v.x + dx >= 0.0 && v.x + dx <= W && v.y + dy >= 0.0 && v.y + dy <= H;
          }
        }
        exposure = std::clamp(exposure + (unit(rng) < 0.5 ? -1.0 : 1.0) * spec.exposure_step, -0.15, 0.15);
        AnnotatedScene candidate = current_scene();
        Tensor first = noisy(candidate.image);
        if (in_bounds && mean_abs_difference(first, segment_first) > spec.beta) {
          fixation = clamp_gaze({fixation.u + (dy - old_dy) / (H - 1), fixation.v + (dx - old_dx) / (W - 1)});
          scene = std::move(candidate);
          segment_base = scene.image;
          segment_first = std::move(first);
          break;
        }
        dx = old_dx;
        dy = old_dy;
        exposure = old_exposure;
      }
    }
    Tensor frame;
    if (t == 0) {
      segment_first = noisy(segment_base);
      frame = segment_first;
    } else if (boundary) {
      frame = segment_first;
    } else {
      for (int attempt = 0;; ++attempt) {
        require(attempt < 1000, ErrorKind::kConfiguration, "frame noise too large for beta");
        frame = noisy(segment_base);
        if (mean_abs_difference(frame, segment_first) <= spec.beta) break;
      }
    }

    bool saccade = false;
    if (t > 0 && unit(rng) < saccade_prob) {
      for (int attempt = 0; attempt < 1000 && !saccade; ++attempt) {
        int other = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, base.instances.size() - 1)(rng));
        if (other == fixated && attempt < 500) continue;
        const GazePoint target = interior_point(scene, other);
        if (gaze_distance(target, previous) > spec.gaze_threshold + 2.0 * spec.fixation_jitter * std::numbers::sqrt2) {
          fixated = other;
          fixation = target;
          saccade = true;
        }
      }
    }
    GazePoint g = clamp_gaze({fixation.u + jitter(rng), fixation.v + jitter(rng)});
    if (saccade) {
      // The jitter must not pull a jump back under the threshold.
      g = gaze_distance(g, previous) > spec.gaze_threshold ? g : fixation;
      seq.saccade_frames.push_back(t);
    }
    if (boundary) {
      seq.segment_boundaries.push_back(t);
    } else {
      ++within_pairs;
      within_fixations += gaze_distance(g, previous) < spec.gaze_threshold;
    }
    samples.push_back({t / spec.fps, g});
    seq.frames.push_back(std::move(frame));
    seq.scenes.push_back(scene);
    previous = g;
  }
  seq.trace = GazeTrace::make(std::move(samples));
  seq.fixation_fraction = within_pairs > 0 ? static_cast<double>(within_fixations) / within_pairs : 1.0;
  return seq;
}

// ---------------------------------------------------------------------------
// Image and annotation IO

/// Binary PPM (P6), 8 bits per channel.
inline void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  require(image.channels == 3, ErrorKind::kShape, "PPM needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (int i = 0; i < image.height; ++i) {
    for (int j = 0; j < image.width; ++j) {
      for (int c = 0; c < 3; ++c) {
        out.put(static_cast<char>(std::lround(std::clamp(image(c, i, j), 0.0, 1.0) * 255.0)));
      }
    }
  }
}

inline Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  require(magic == "P6" && w > 0 && h > 0 && maxval == 255, ErrorKind::kParse, path.string() + ": unsupported PPM");
  in.get();
  Tensor img(3, h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int c = 0; c < 3; ++c) {
        const int v = in.get();
        require(v != EOF, ErrorKind::kParse, path.string() + ": truncated pixel data");
        img(c, i, j) = v / 255.0;
      }
    }
  }
  return img;
}

/// Grayscale PGM (P5) of values in [0,1].
inline void write_pgm(const std::filesystem::path& path, const std::vector<double>& values, int height, int width) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  for (double v : values) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

using ImageLoader = std::function<Tensor(const std::filesystem::path&)>;

inline nlohmann::json scene_to_json(const AnnotatedScene& scene, const std::string& image_path) {
  nlohmann::json j;
  j["image"] = image_path;
  j["instances"] = nlohmann::json::array();
  for (const auto& inst : scene.instances) {
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& v : inst.polygon) poly.push_back({v.x, v.y});
    j["instances"].push_back({{"class", inst.class_id}, {"polygon", poly}});
  }
  return j;
}

struct SceneAnnotation {
  std::string image;
  std::vector<Instance> instances;
};

inline SceneAnnotation annotation_from_json(const nlohmann::json& j, const std::string& where) {
  SceneAnnotation a;
  try {
    a.image = j.at("image").get<std::string>();
    for (const auto& inst : j.at("instances")) {
      Instance out{inst.at("class").get<int>(), {}};
      for (const auto& v : inst.at("polygon")) {
        require(v.is_array() && v.size() == 2, ErrorKind::kParse, where + ": polygon vertex must be [x, y]");
        out.polygon.push_back({v[0].get<double>(), v[1].get<double>()});
      }
      require(out.polygon.size() >= 3, ErrorKind::kParse, where + ": polygon needs >= 3 vertices");
      a.instances.push_back(std::move(out));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, where + ": " + e.what());
  }
  return a;
}

/// Reference adapter for an `images/ + annotations/` dataset directory.
/// Annotation image paths are relative to the dataset root.
inline std::vector<AnnotatedScene> load_dataset_dir(const std::filesystem::path& root, const ImageLoader& load_image,
                                                    int num_classes) {
  const auto ann_dir = root / "annotations";
  require(std::filesystem::is_directory(ann_dir), ErrorKind::kIo, "missing annotation directory " + ann_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(ann_dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<AnnotatedScene> scenes;
  std::vector<std::filesystem::path> referenced;
  for (const auto& f : files) {
    std::ifstream in(f);
    require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + f.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, f.string() + ": " + e.what());
    }
    SceneAnnotation a = annotation_from_json(j, f.string());
    const auto image_path = root / a.image;
    require(std::filesystem::exists(image_path), ErrorKind::kIo, "missing image " + image_path.string());
    AnnotatedScene s{load_image(image_path), std::move(a.instances)};
    for (const auto& inst : s.instances) {
      require(inst.class_id >= 0 && inst.class_id < num_classes, ErrorKind::kValidation,
              f.string() + ": class id " + std::to_string(inst.class_id) + " out of range");
    }
    scenes.push_back(std::move(s));
    referenced.push_back(std::filesystem::weakly_canonical(image_path));
  }
  // Every image under images/ needs an annotation.
  if (const auto img_dir = root / "images"; std::filesystem::is_directory(img_dir)) {
    std::sort(referenced.begin(), referenced.end());
    std::vector<std::filesystem::path> images;
    for (const auto& e : std::filesystem::directory_iterator(img_dir)) {
      if (e.is_regular_file()) images.push_back(e.path());
    }
    std::sort(images.begin(), images.end());
    for (const auto& img : images) {
      require(std::binary_search(referenced.begin(), referenced.end(), std::filesystem::weakly_canonical(img)),
              ErrorKind::kIo,
              "missing annotation " + (ann_dir / img.stem()).string() + ".json for image " + img.string());
    }
  }
  return scenes;
}

}  // namespace fovealseg
