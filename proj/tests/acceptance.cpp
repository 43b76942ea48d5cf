// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion. Optional arguments select
// a subset of criteria by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fovealseg/fovealseg.hpp"
#include "oracles.hpp"

namespace fovealseg {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

SaliencyMap random_saliency(std::mt19937_64& rng, int H, int W, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  SaliencyMap s{Tensor(1, H, W)};
  for (auto& v : s.density.data) v = u(rng);
  return s;
}

// 1. compute_grid against the dense evaluation.
Outcome sampler_matches_dense_oracle() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_saliency(rng, 16, 16, 0.0, 1.0);
    const auto g = compute_grid(s, 4, 4, {4});
    const auto d = oracle::dense_grid(s.density.data, 16, 16, 4, 4, 4);
    for (std::size_t k = 0; k < g.size(); ++k) {
      worst = std::max({worst, std::abs(g.gh[k] - d.gh[k]), std::abs(g.gw[k] - d.gw[k])});
    }
  }
  return {worst <= 1e-3, fmt("max coordinate error %.3g over 50 maps (limit 1e-3)", worst)};
}

// 2. Finite differences through grid + bilinear warp.
Outcome pipeline_gradient_matches_fd() {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> unit(0.0, 1.0), sal(0.2, 1.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int H = 16, W = 16, h = 8, w = 8, sigma = 2 + trial % 3;
    auto s = random_saliency(rng, H, W, 0.2, 1.5);
    Tensor img(3, H, W);
    for (auto& v : img.data) v = unit(rng);
    Tensor weights(3, h, w);
    for (auto& v : weights.data) v = normal(rng);
    auto objective = [&](const SaliencyMap& m) {
      const Tensor out = warp(img, compute_grid(m, h, w, {sigma}), WarpMode::kBilinear);
      double acc = 0.0;
      for (std::size_t k = 0; k < out.size(); ++k) acc += out.data[k] * weights.data[k];
      return acc;
    };
    const auto grid = compute_grid(s, h, w, {sigma});
    std::vector<double> d_gh, d_gw;
    warp_bilinear_backward(img, grid, weights, d_gh, d_gw);
    Tensor d_density(1, H, W);
    compute_grid_backward(s, grid, {sigma}, d_gh, d_gw, d_density);
    for (std::size_t k = 0; k < s.density.size(); ++k) {
      const double orig = s.density.data[k];
      const double step = 1e-4;
      s.density.data[k] = orig + step;
      const double up = objective(s);
      s.density.data[k] = orig - step;
      const double down = objective(s);
      s.density.data[k] = orig;
      const double fd = (up - down) / (2 * step);
      const double an = d_density.data[k];
      const double scale = std::max(std::abs(fd), std::abs(an));
      if (scale <= 1e-6) continue;
      ++checked;
      worst = std::max(worst, std::abs(fd - an) / scale);
    }
  }
  return {worst <= 1e-4 && checked > 0,
          fmt("max relative error %.3g over %d saliency entries in 20 cases (limit 1e-4)", worst, checked)};
}

// 3. Constant saliency reproduces the uniform grid.
Outcome uniform_saliency_identity() {
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<int> src(8, 48), sig(1, 16);
  double worst = 0.0;  // in source pixels
  for (int trial = 0; trial < 20; ++trial) {
    const int H = src(rng), W = src(rng);
    const int h = std::uniform_int_distribution<int>(2, H)(rng);
    const int w = std::uniform_int_distribution<int>(2, W)(rng);
    const double c = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
    const auto g = compute_grid({Tensor(1, H, W, c)}, h, w, {sig(rng)});
    const auto u = uniform_grid(H, W, h, w);
    for (int i = 1; i + 1 < h; ++i) {
      for (int j = 1; j + 1 < w; ++j) {
        const auto k = g.index(i, j);
        worst = std::max({worst, std::abs(g.gh[k] - u.gh[k]) * H, std::abs(g.gw[k] - u.gw[k]) * W});
      }
    }
  }
  return {worst <= 1.0, fmt("max interior deviation %.3g source pixels over 20 shapes (limit 1)", worst)};
}

// 4. Losses against per-pixel summation.
Outcome losses_match_oracle() {
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution on(0.3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int C = 1 + trial % 3;
    Tensor p(C, 8, 8), t(C, 8, 8);
    const int cls = std::uniform_int_distribution<int>(0, C - 1)(rng);
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        const double mask = 0.02 + 0.93 * u(rng);
        std::vector<double> share(static_cast<std::size_t>(C));
        double total = 0.0;
        for (auto& v : share) total += v = u(rng) + 0.05;
        for (int c = 0; c < C; ++c) p(c, i, j) = mask * share[static_cast<std::size_t>(c)] / total;
        t(cls, i, j) = on(rng) ? 1.0 : 0.0;
      }
    }
    worst = std::max(worst, std::abs(dice_loss(p, t, 1e-6) - oracle::dice(p, t, 1e-6)));
    worst = std::max(worst, std::abs(area_weighted_focal_loss(p, t, 2.0) - oracle::focal(p, t, 2.0)));
  }
  Tensor t(1, 4, 4);
  for (int k : {0, 5, 10, 15}) t(0, k / 4, k % 4) = 1.0;
  const double example = area_weighted_focal_loss(Tensor(1, 4, 4, 0.5), t, 2.0);
  return {worst <= 1e-6 && std::abs(example - 0.3466) <= 1e-3,
          fmt("max deviation %.3g over 100 cases (limit 1e-6); worked example %.4f (expected 0.3466)", worst,
              example)};
}

int worker_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("FOVEALSEG_THREADS"); env != nullptr && *env != '\0') {
    n = std::min(n, std::max(1, std::atoi(env)));
  }
  return std::min(n, 8);
}

// 5. Toy-scale learning effect.
Outcome toy_learning_effect() {
  RunConfig cfg;
  cfg.set("threads", std::to_string(worker_threads()));
  const auto data = synthetic_experiment_data(cfg);
  const auto r = run_experiment(cfg, data);
  const double avg = r.baseline->iou;
  const double gap = std::abs(r.fsnet.iou - r.fsnet.iou_prime);
  const bool pass = r.fsnet.iou >= avg + 0.05 && gap <= 0.05;
  return {pass, fmt("FSNet IoU %.3f IoU' %.3f vs Avg IoU %.3f IoU' %.3f; need IoU >= Avg + 0.05 (%.3f) and "
                    "|IoU - IoU'| <= 0.05 (%.3f)",
                    r.fsnet.iou, r.fsnet.iou_prime, avg, r.baseline->iou_prime, avg + 0.05, gap)};
}

// 6. Scheduler fixtures.
Tensor square_frame(double background, double object) {
  Tensor f(3, 16, 16, background);
  for (int c = 0; c < 3; ++c) {
    for (int i = 4; i < 10; ++i) {
      for (int j = 4; j < 10; ++j) f(c, i, j) = object;
    }
  }
  return f;
}

GazeTrace trace_of(const std::vector<GazePoint>& points) {
  std::vector<GazeSample> s;
  for (std::size_t k = 0; k < points.size(); ++k) s.push_back({static_cast<double>(k) / 30.0, points[k]});
  return GazeTrace::make(std::move(s));
}

Outcome scheduler_fixtures() {
  const FloodFillSegmenter flood;
  const SchedulerConfig cfg;
  const GazePoint on_square{0.45, 0.45};
  std::vector<std::string> failures;
  using D = Decision;

  CountingSegmenter<FloodFillSegmenter> counted{flood};
  const auto reuse = run_trace(std::vector<Tensor>(10, square_frame(0.1, 0.9)),
                               trace_of(std::vector<GazePoint>(10, on_square)), counted, cfg);
  std::vector<D> expect(10, D::kReuse);
  expect[0] = D::kRunInitial;
  if (reuse.decisions() != expect || counted.calls != 1) failures.push_back("all-reuse");

  std::vector<GazePoint> jumps;
  for (int t = 0; t < 10; ++t) jumps.push_back(t % 2 ? GazePoint{0.9, 0.9} : GazePoint{0.1, 0.1});
  const auto skip = run_trace(std::vector<Tensor>(10, square_frame(0.1, 0.9)), trace_of(jumps), flood, cfg);
  expect.assign(10, D::kSkipSaccade);
  expect[0] = D::kRunInitial;
  if (skip.decisions() != expect || skip.total != cfg.costs.fsnet + 9 * cfg.costs.displacement_check) {
    failures.push_back("all-saccade");
  }

  const Tensor a = square_frame(0.1, 0.9), b = square_frame(0.15, 0.95);  // difference 0.05
  const auto change = run_trace({a, a, b, b}, trace_of(std::vector<GazePoint>(4, on_square)), flood, cfg);
  if (change.decisions() != std::vector<D>{D::kRunInitial, D::kReuse, D::kRunNewSegment, D::kReuse}) {
    failures.push_back("segment-change");
  }

  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  std::vector<Tensor> frames;
  std::vector<GazePoint> gaze;
  for (int seg = 0; seg < 5; ++seg) {
    const Tensor f = square_frame(0.1 + 0.1 * seg, 0.9);
    for (int k = 0; k < 8; ++k) {
      frames.push_back(f);
      gaze.push_back({0.45 + jitter(rng), 0.45 + jitter(rng)});
    }
  }
  int reused = 0, mismatched = 0;
  run_trace(frames, trace_of(gaze), flood, cfg, [&](std::size_t t, const StepResult& r) {
    if (r.decision.kind != D::kReuse) return;
    ++reused;
    const auto fresh = flood.segment(frames[t], gaze[t]);
    mismatched += !(r.mask->mask == fresh.mask && r.mask->label == fresh.label);
  });
  if (reused == 0 || mismatched != 0) failures.push_back("reuse-equality");

  std::string detail = "fixtures all-reuse, all-saccade, segment-change; " + std::to_string(reused) +
                       " REUSE masks compared, " + std::to_string(mismatched) + " mismatched";
  if (!failures.empty()) {
    detail += "; failed:";
    for (const auto& f : failures) detail += " " + f;
  }
  return {failures.empty(), detail};
}

// 7. FLOP savings on the synthetic sequence.
Outcome flop_savings() {
  const RunConfig cfg;
  const auto seq = generate_synthetic_sequence(cfg.sequence, cfg.seed_for(SeedStream::kSequence));
  const auto pairs = consecutive_frame_diffs(seq.frames);
  const double below = fraction_below(pairs, cfg.scheduler.beta);
  const auto report = run_trace(seq.frames, seq.trace, FloodFillSegmenter{}, cfg.scheduler);
  const bool pass = report.ns_ratio() >= 1.3 && report.nd_ratio() >= 20.0;
  return {pass, fmt("NS/FovealSeg %.3f (limit 1.3), ND/FovealSeg %.1f (limit 20); %.1f%% of consecutive pairs "
                    "below beta over %zu frames",
                    report.ns_ratio(), report.nd_ratio(), 100.0 * below, seq.frames.size())};
}

// 8. Grid FLOPs across kernel sizes.
Outcome kernel_ablation_scaling() {
  const std::vector<std::pair<int, double>> table{{17, 2.38e6}, {25, 5.12e6}, {33, 8.92e6}, {41, 13.77e6}};
  double worst = 0.0;
  std::string detail;
  for (const auto& [k, reported] : table) {
    const double f = static_cast<double>(grid_flops(64, 128, k));
    worst = std::max(worst, std::abs(f / reported - 1.0));
    detail += fmt("%d:%.2fM ", k, f / 1e6);
  }
  return {worst <= 0.02, detail + fmt("max deviation %.2f%% (limit 2%%)", 100.0 * worst)};
}

// 9. Bundled trace analysis.
Outcome bundled_trace_analysis() {
  const std::string dir = std::string(FOVEALSEG_DATA_DIR) + "/synthetic_trace/";
  const auto trace = load_trace(dir + "trace.csv");
  const auto diffs = load_frame_diffs(dir + "frame_diffs.csv");
  std::ifstream in(dir + "ground_truth.json");
  const auto gt = nlohmann::json::parse(in);
  const double beta = gt.at("beta");
  const auto p = partition_segments(diffs.segment, beta);
  const auto s = gaze_stats(trace, p, gt.at("gaze_threshold"), diffs.consecutive, beta);
  const auto expected = gt.at("segment_boundaries").get<std::vector<int>>();
  const double truth = gt.at("fixation_fraction");
  const double deviation = std::abs(s.fraction_below_gaze_threshold - truth);
  const bool pass = p.boundaries == expected && deviation <= 0.02 * truth;
  return {pass, fmt("%zu/%zu boundaries (%s), fixation fraction %.4f vs %.4f", p.boundaries.size(), expected.size(),
                    p.boundaries == expected ? "exact" : "mismatch", s.fraction_below_gaze_threshold, truth)};
}

// 10. IoU and IoU' against set arithmetic.
Outcome metrics_match_oracle() {
  std::mt19937_64 rng(110);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int H = 12 + trial % 5, W = 10 + trial % 7;
    const double density = trial % 10 == 0 ? 0.0 : u(rng);
    const Mask a = oracle::random_mask(rng, H, W, density);
    const Mask b = oracle::random_mask(rng, H, W, u(rng));
    mismatches += mask_iou(a, b) != oracle::iou(a, b);
    mismatches += ioi_iou(a, 1, b, 1) != oracle::iou(a, b);
    const bool both_empty = std::count(a.data.begin(), a.data.end(), 1) + std::count(b.data.begin(), b.data.end(), 1) == 0;
    mismatches += ioi_iou(a, 0, b, 1) != (both_empty ? 1.0 : 0.0);

    // IoU' in the warped space of a random saliency grid.
    const int h = H / 2, w = W / 2;
    FovealSample s{Tensor(3, H, W), {0.5, 0.5}, b, static_cast<int>(trial % 3), "acceptance"};
    FSNetOutput out;
    out.grid = compute_grid(random_saliency(rng, H, W, 0.01, 1.0), h, w, {2});
    out.y_bm = Tensor(1, h, w);
    Mask pred_prime(h, w), gt_prime(h, w);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const bool on = u(rng) < 0.5;
        out.y_bm(0, i, j) = on ? 0.9 : 0.1;
        pred_prime(i, j) = on;
        const auto k = out.grid.index(i, j);
        const int r = std::min(static_cast<int>(std::lround(out.grid.gh[k] * H)), H - 1);
        const int c = std::min(static_cast<int>(std::lround(out.grid.gw[k] * W)), W - 1);
        gt_prime(i, j) = b(r, c);
      }
    }
    out.y_cls.assign(3, 0.0);
    out.y_cls[static_cast<std::size_t>(s.class_id)] = 1.0;
    mismatches += score_prediction(out, s, 3).iou_prime != oracle::iou(pred_prime, gt_prime);
  }
  return {mismatches == 0, fmt("%d mismatches over 100 mask pairs (IoU, class rule, IoU')", mismatches)};
}

}  // namespace
}  // namespace fovealseg

int main(int argc, char** argv) {
  using namespace fovealseg;
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"sampler matches dense oracle", sampler_matches_dense_oracle},
      {"grid + warp gradient matches finite differences", pipeline_gradient_matches_fd},
      {"uniform saliency reproduces uniform grid", uniform_saliency_identity},
      {"losses match brute-force oracle", losses_match_oracle},
      {"toy-scale learning effect", toy_learning_effect},
      {"scheduler semantics", scheduler_fixtures},
      {"FLOP savings", flop_savings},
      {"kernel ablation FLOP scaling", kernel_ablation_scaling},
      {"trace analysis on bundled trace", bundled_trace_analysis},
      {"IoU metrics match set arithmetic", metrics_match_oracle},
  };
  std::set<int> selected;
  for (int k = 1; k < argc; ++k) selected.insert(std::atoi(argv[k]));
  int failed = 0;
  for (std::size_t n = 0; n < criteria.size(); ++n) {
    const int id = static_cast<int>(n) + 1;
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[n].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("CRITERION %2d %s  %s: %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", criteria[n].first,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
