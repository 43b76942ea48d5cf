// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// Frame-segment partitioning by pixel difference and within-segment gaze
// statistics.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fovealseg/data.hpp"
#include "fovealseg/error.hpp"
#include "fovealseg/gaze.hpp"

namespace fovealseg {

struct SegmentPartition {
  std::vector<int> boundaries;  // first frame of every segment
  int length = 0;               // number of frames

  /// Half-open [begin, end) frame ranges.
  std::vector<std::pair<int, int>> ranges() const {
    std::vector<std::pair<int, int>> out;
    for (std::size_t k = 0; k < boundaries.size(); ++k) {
      out.emplace_back(boundaries[k], k + 1 < boundaries.size() ? boundaries[k + 1] : length);
    }
    return out;
  }
};

/// Opens a segment at t whenever diffs[t] > beta; diffs[t] is the difference
/// to the current segment's first frame. Frame 0 always opens a segment.
inline SegmentPartition partition_segments(std::span<const double> diffs, double beta) {
  require(!diffs.empty(), ErrorKind::kValidation, "partition_segments: empty sequence");
  SegmentPartition p{{0}, static_cast<int>(diffs.size())};
  for (std::size_t t = 1; t < diffs.size(); ++t) {
    if (diffs[t] > beta) p.boundaries.push_back(static_cast<int>(t));
  }
  return p;
}

/// Difference of every frame to the first frame of the segment it falls in,
/// following the same rule as partition_segments.
inline std::vector<double> segment_frame_diffs(const std::vector<Tensor>& frames, double beta) {
  std::vector<double> diffs;
  if (frames.empty()) return diffs;
  std::size_t anchor = 0;
  diffs.push_back(0.0);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const double d = mean_abs_difference(frames[t], frames[anchor]);
    diffs.push_back(d);
    if (d > beta) anchor = t;
  }
  return diffs;
}

inline std::vector<double> consecutive_frame_diffs(const std::vector<Tensor>& frames) {
  std::vector<double> diffs;
  for (std::size_t t = 1; t < frames.size(); ++t) diffs.push_back(mean_abs_difference(frames[t], frames[t - 1]));
  return diffs;
}

/// Per-frame differences as stored in frame_diffs.csv
/// (frame,segment_diff,consecutive_diff).
struct FrameDiffs {
  std::vector<double> segment;      // one per frame
  std::vector<double> consecutive;  // one per pair (t-1, t), t >= 1
};

inline FrameDiffs parse_frame_diffs_csv(std::istream& in, const std::string& name = "frame_diffs.csv") {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kParse, name + ": missing header");
  FrameDiffs d;
  int line_no = 1;
  auto number = [&](std::string field) {
    field.erase(0, field.find_first_not_of(" \t\r"));
    field.erase(field.find_last_not_of(" \t\r") + 1);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    require(ec == std::errc() && end == field.data() + field.size() && !field.empty(), ErrorKind::kParse,
            name + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream row(line);
    std::string f[3];
    for (auto& x : f) std::getline(row, x, ',');
    const double seg = number(f[1]);
    const double cons = number(f[2]);
    if (!d.segment.empty()) d.consecutive.push_back(cons);
    d.segment.push_back(seg);
  }
  require(!d.segment.empty(), ErrorKind::kParse, name + ": no rows");
  return d;
}

inline FrameDiffs load_frame_diffs(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path);
  return parse_frame_diffs_csv(in, path);
}

inline double fraction_below(std::span<const double> values, double threshold) {
  if (values.empty()) return 0.0;
  const auto n = std::count_if(values.begin(), values.end(), [&](double v) { return v < threshold; });
  return static_cast<double>(n) / static_cast<double>(values.size());
}

/// Nearest-rank percentile: the ceil(q * n)-th smallest value.
inline double nearest_rank(std::vector<double> values, double q) {
  require(!values.empty(), ErrorKind::kValidation, "percentile of an empty set");
  require(q > 0.0 && q <= 1.0, ErrorKind::kValidation, "percentile must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

inline constexpr int kHistogramBins = 50;

struct TraceStats {
  std::vector<double> histogram;  // normalized mass per bin on [0, sqrt(2)]
  double q95 = 0.0;
  double fraction_below_gaze_threshold = 0.0;
  double fraction_pairs_below_beta = 0.0;
  int pairs = 0;  // pooled within-segment consecutive gaze pairs
  int segments = 0;

  nlohmann::json to_json() const {
    return {{"q95", q95},
            {"fraction_below_gaze_threshold", fraction_below_gaze_threshold},
            {"fraction_pairs_below_beta", fraction_pairs_below_beta},
            {"pairs", pairs},
            {"segments", segments},
            {"histogram_range", {0.0, std::numbers::sqrt2}},
            {"histogram", histogram}};
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "segments                       " << segments << '\n'
       << "within-segment gaze pairs      " << pairs << '\n'
       << "q95 gaze difference            " << q95 << '\n'
       << "fraction below gaze threshold  " << fraction_below_gaze_threshold << '\n'
       << "fraction of pairs below beta   " << fraction_pairs_below_beta << '\n';
    return os.str();
  }
};

/// Pools consecutive gaze distances inside every segment.
inline std::vector<double> within_segment_gaze_differences(const GazeTrace& trace, const SegmentPartition& p) {
  require(static_cast<std::size_t>(p.length) == trace.size(), ErrorKind::kShape,
          "trace has " + std::to_string(trace.size()) + " samples, partition covers " + std::to_string(p.length));
  std::vector<double> d;
  for (const auto& [begin, end] : p.ranges()) {
    for (int t = begin + 1; t < end; ++t) {
      d.push_back(gaze_distance(trace.gaze(static_cast<std::size_t>(t)), trace.gaze(static_cast<std::size_t>(t - 1))));
    }
  }
  return d;
}

/// `consecutive_diffs` (frame t vs t-1) feeds fraction_pairs_below_beta and
/// may be empty.
inline TraceStats gaze_stats(const GazeTrace& trace, const SegmentPartition& partition, double gaze_threshold,
                             std::span<const double> consecutive_diffs = {}, double beta = 0.037) {
  const auto d = within_segment_gaze_differences(trace, partition);
  TraceStats s;
  s.segments = static_cast<int>(partition.boundaries.size());
  s.pairs = static_cast<int>(d.size());
  s.histogram.assign(kHistogramBins, 0.0);
  if (!d.empty()) {
    s.q95 = nearest_rank(d, 0.95);
    s.fraction_below_gaze_threshold = fraction_below(d, gaze_threshold);
    for (double v : d) {
      const int bin = std::clamp(static_cast<int>(v / std::numbers::sqrt2 * kHistogramBins), 0, kHistogramBins - 1);
      s.histogram[static_cast<std::size_t>(bin)] += 1.0 / static_cast<double>(d.size());
    }
  }
  s.fraction_pairs_below_beta = fraction_below(consecutive_diffs, beta);
  return s;
}

}  // namespace fovealseg
