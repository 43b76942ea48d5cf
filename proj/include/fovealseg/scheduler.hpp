// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Per-frame FovealSeg decisions: skip during saccades, rerun on scene
// change, reuse the buffered mask while the gaze stays on its IOI, rerun
// when the gaze leaves it.

#pragma once

#include <array>
#include <concepts>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fovealseg/data.hpp"
#include "fovealseg/error.hpp"
#include "fovealseg/flops.hpp"
#include "fovealseg/fsnet.hpp"
#include "fovealseg/gaze.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg {

template <class S>
concept Segmenter = requires(const S& s, const Tensor& frame, GazePoint g) {
  { s.segment(frame, g) } -> std::convertible_to<FullResPrediction>;
};

struct SchedulerConfig {
  double alpha = 0.01;   // squared normalized gaze displacement
  double beta = 0.037;   // mean absolute frame difference
  int mask_tolerance = 2;
  CostModel costs = CostModel::from(DeploymentSpec{});

  void validate() const {
    require(alpha > 0.0, ErrorKind::kInvalidThreshold, "alpha must be > 0");
    require(beta > 0.0, ErrorKind::kInvalidThreshold, "beta must be > 0");
    require(mask_tolerance >= 0, ErrorKind::kConfiguration, "mask tolerance must be >= 0");
  }
};

enum class Decision { kRunInitial, kSkipSaccade, kRunNewSegment, kReuse, kRunNewGaze };

inline constexpr std::array<std::string_view, 5> kDecisionNames{"RUN_INITIAL", "SKIP_SACCADE", "RUN_NEW_SEGMENT",
                                                                "REUSE", "RUN_NEW_GAZE"};

inline std::string_view to_string(Decision d) { return kDecisionNames[static_cast<std::size_t>(d)]; }

inline bool runs_model(Decision d) {
  return d == Decision::kRunInitial || d == Decision::kRunNewSegment || d == Decision::kRunNewGaze;
}

struct FrameDecision {
  Decision kind = Decision::kRunInitial;
  Flops flops = 0;
};

struct SchedulerState {
  std::optional<Tensor> f_init;
  std::optional<GazePoint> g_last;
  std::optional<FullResPrediction> m_last;

  bool consistent() const noexcept { return !m_last || g_last; }
};

struct StepResult {
  FrameDecision decision;
  std::optional<FullResPrediction> mask;  // empty on SKIP_SACCADE
};

/// Mean absolute difference over pixels and channels.
inline double frame_difference(const Tensor& a, const Tensor& b) { return mean_abs_difference(a, b); }

/// True when the mask is set at the gaze pixel or anywhere within
/// `tolerance` pixels (Euclidean) of it.
inline bool gaze_in_mask(GazePoint g, const Mask& m, int tolerance = 2) {
  if (m.height < 1 || m.width < 1) return false;
  const PixelIndex p = to_pixel(g, m.height, m.width);
  for (int dr = -tolerance; dr <= tolerance; ++dr) {
    for (int dc = -tolerance; dc <= tolerance; ++dc) {
      if (dr * dr + dc * dc > tolerance * tolerance) continue;
      if (m.in_bounds(p.row + dr, p.col + dc) && m(p.row + dr, p.col + dc)) return true;
    }
  }
  return false;
}

/// One frame of the decision procedure. `state` is only modified after the
/// model call (if any) has succeeded.
template <Segmenter Model>
StepResult step(SchedulerState& state, const Tensor& frame, GazePoint gaze, const Model& model,
                const SchedulerConfig& cfg) {
  require(gaze.valid(), ErrorKind::kValidation, "gaze outside [0,1]");
  const CostModel& cost = cfg.costs;
  if (!state.m_last || !state.f_init) {
    FullResPrediction m = model.segment(frame, gaze);
    state.f_init = frame;
    state.g_last = gaze;
    state.m_last = m;
    return {{Decision::kRunInitial, cost.fsnet}, std::move(m)};
  }
  Flops charged = cost.displacement_check;
  if (gaze_displacement_sq(gaze, *state.g_last) > cfg.alpha) {
    state.g_last = gaze;
    return {{Decision::kSkipSaccade, charged}, std::nullopt};
  }
  charged += cost.frame_difference;
  if (frame_difference(frame, *state.f_init) > cfg.beta) {
    FullResPrediction m = model.segment(frame, gaze);
    state.f_init = frame;
    state.g_last = gaze;
    state.m_last = m;
    return {{Decision::kRunNewSegment, charged + cost.fsnet}, std::move(m)};
  }
  charged += cost.mask_lookup;
  if (gaze_in_mask(gaze, state.m_last->mask, cfg.mask_tolerance)) {
    return {{Decision::kReuse, charged}, *state.m_last};
  }
  FullResPrediction m = model.segment(frame, gaze);
  state.g_last = gaze;
  state.m_last = m;
  return {{Decision::kRunNewGaze, charged + cost.fsnet}, std::move(m)};
}

struct ScheduleReport {
  std::vector<FrameDecision> frames;
  Flops total = 0;
  Flops no_skip = 0;        // NS: FSNet every frame
  Flops no_downsample = 0;  // ND: full-resolution backbone every frame

  double ns_ratio() const { return total > 0 ? static_cast<double>(no_skip) / static_cast<double>(total) : 0.0; }
  double nd_ratio() const {
    return total > 0 ? static_cast<double>(no_downsample) / static_cast<double>(total) : 0.0;
  }
  int count(Decision d) const {
    int n = 0;
    for (const auto& f : frames) n += f.kind == d;
    return n;
  }
  std::vector<Decision> decisions() const {
    std::vector<Decision> out;
    for (const auto& f : frames) out.push_back(f.kind);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["frames"] = nlohmann::json::array();
    for (std::size_t t = 0; t < frames.size(); ++t) {
      j["frames"].push_back({{"t", t}, {"decision", to_string(frames[t].kind)}, {"flops", frames[t].flops}});
    }
    nlohmann::json counts;
    for (std::size_t d = 0; d < kDecisionNames.size(); ++d) {
      counts[std::string(kDecisionNames[d])] = count(static_cast<Decision>(d));
    }
    j["counts"] = counts;
    j["total_flops"] = total;
    j["ns_flops"] = no_skip;
    j["nd_flops"] = no_downsample;
    j["ns_ratio"] = ns_ratio();
    j["nd_ratio"] = nd_ratio();
    return j;
  }
};

/// Optional per-frame observer, e.g. to collect the returned masks.
using StepObserver = std::function<void(std::size_t t, const StepResult&)>;

template <Segmenter Model>
ScheduleReport run_trace(const std::vector<Tensor>& frames, const GazeTrace& trace, const Model& model,
                         const SchedulerConfig& cfg, const StepObserver& observe = {}) {
  cfg.validate();
  require(frames.size() == trace.size(), ErrorKind::kShape,
          "run_trace: " + std::to_string(frames.size()) + " frames but " + std::to_string(trace.size()) +
              " gaze samples");
  ScheduleReport report;
  SchedulerState state;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const StepResult r = step(state, frames[t], trace.gaze(t), model, cfg);
    report.frames.push_back(r.decision);
    report.total += r.decision.flops;
    if (observe) observe(t, r);
  }
  const auto T = static_cast<Flops>(frames.size());
  report.no_skip = T * cfg.costs.fsnet;
  report.no_downsample = T * cfg.costs.fullres_backbone;
  return report;
}

/// Colour-tolerance flood fill from the gaze pixel. A cheap, deterministic
/// stand-in segmenter for scheduling experiments on synthetic frames.
struct FloodFillSegmenter {
  double tolerance = 0.15;  // max per-channel deviation from the seed colour

  FullResPrediction segment(const Tensor& frame, GazePoint gaze) const {
    const int H = frame.height, W = frame.width;
    const PixelIndex s = to_pixel(gaze, H, W);
    std::array<double, 3> seed{};
    for (int c = 0; c < std::min(3, frame.channels); ++c) seed[static_cast<std::size_t>(c)] = frame(c, s.row, s.col);
    FullResPrediction out{Mask(H, W), 0};
    std::deque<PixelIndex> queue{s};
    out.mask(s.row, s.col) = 1;
    auto close = [&](int r, int c) {
      for (int ch = 0; ch < std::min(3, frame.channels); ++ch) {
        if (std::abs(frame(ch, r, c) - seed[static_cast<std::size_t>(ch)]) > tolerance) return false;
      }
      return true;
    };
    constexpr std::array<std::pair<int, int>, 4> kSteps{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    while (!queue.empty()) {
      const PixelIndex p = queue.front();
      queue.pop_front();
      for (const auto& [dr, dc] : kSteps) {
        const int r = p.row + dr, c = p.col + dc;
        if (!out.mask.in_bounds(r, c) || out.mask(r, c) || !close(r, c)) continue;
        out.mask(r, c) = 1;
        queue.push_back({r, c});
      }
    }
    return out;
  }
};

/// Counts segment() calls of the wrapped segmenter.
template <Segmenter Inner>
struct CountingSegmenter {
  const Inner& inner;
  mutable int calls = 0;

  FullResPrediction segment(const Tensor& frame, GazePoint gaze) const {
    ++calls;
    return inner.segment(frame, gaze);
  }
};

static_assert(Segmenter<FloodFillSegmenter>);
static_assert(Segmenter<FSNet>);

}  // namespace fovealseg
