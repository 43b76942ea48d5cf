// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fovealseg/error.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg {

/// Normalized gaze location: u is the vertical (row) coordinate, v the
/// horizontal (column) coordinate, both in [0, 1].
struct GazePoint {
  double u = 0.0;
  double v = 0.0;

  bool valid() const noexcept { return u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0; }
  bool operator==(const GazePoint&) const = default;
};

struct PixelIndex {
  int row = 0;
  int col = 0;
  bool operator==(const PixelIndex&) const = default;
};

/// Pixel of an H x W image under the gaze. std::lround rounds half away from zero.
inline PixelIndex to_pixel(GazePoint g, int height, int width) {
  return {static_cast<int>(std::lround(g.u * (height - 1))), static_cast<int>(std::lround(g.v * (width - 1)))};
}

/// Inverse of to_pixel for pixel centres.
inline GazePoint from_pixel(PixelIndex p, int height, int width) {
  return {height > 1 ? static_cast<double>(p.row) / (height - 1) : 0.0,
          width > 1 ? static_cast<double>(p.col) / (width - 1) : 0.0};
}

/// Per-pixel normalized inverse distance to the gaze pixel.
struct GazeMap {
  Tensor values;  // 1 x H x W

  int height() const noexcept { return values.height; }
  int width() const noexcept { return values.width; }
  double operator()(int i, int j) const noexcept { return values(0, i, j); }
};

inline GazeMap build_gaze_map(int height, int width, GazePoint gaze) {
  require(height >= 1 && width >= 1, ErrorKind::kInvalidDimension,
          "gaze map needs positive dimensions, got " + std::to_string(height) + "x" + std::to_string(width));
  require(gaze.valid(), ErrorKind::kValidation, "gaze outside [0,1]^2");
  const PixelIndex g = to_pixel(gaze, height, width);
  const double d_max = std::sqrt(static_cast<double>(height) * height + static_cast<double>(width) * width);
  GazeMap map{Tensor(1, height, width)};
  for (int i = 0; i < height; ++i) {
    const double di = i - g.row;
    for (int j = 0; j < width; ++j) {
      const double dj = j - g.col;
      map.values(0, i, j) = 1.0 - std::sqrt(di * di + dj * dj) / d_max;
    }
  }
  return map;
}

inline double gaze_displacement_sq(GazePoint a, GazePoint b) noexcept {
  const double du = a.u - b.u;
  const double dv = a.v - b.v;
  return du * du + dv * dv;
}

inline double gaze_distance(GazePoint a, GazePoint b) noexcept { return std::sqrt(gaze_displacement_sq(a, b)); }

/// Saccade predicate on the squared displacement. The default threshold 0.01
/// is the 0.1 gaze-distance threshold squared.
inline bool is_saccade(GazePoint current, GazePoint last, double alpha = 0.01) {
  require(alpha > 0.0, ErrorKind::kInvalidThreshold, "saccade threshold must be positive");
  return gaze_displacement_sq(current, last) > alpha;
}

struct GazeSample {
  double timestamp = 0.0;  // seconds
  GazePoint gaze;
};

/// Time-ordered gaze samples. Construct through make() to get validation.
class GazeTrace {
 public:
  GazeTrace() = default;

  static GazeTrace make(std::vector<GazeSample> entries) {
    require(!entries.empty(), ErrorKind::kValidation, "gaze trace is empty");
    for (std::size_t k = 0; k < entries.size(); ++k) {
      require(entries[k].gaze.valid(), ErrorKind::kValidation,
              "gaze sample " + std::to_string(k) + " outside [0,1]^2");
      if (k > 0) {
        require(entries[k].timestamp > entries[k - 1].timestamp, ErrorKind::kValidation,
                "timestamps must be strictly increasing at sample " + std::to_string(k));
      }
    }
    GazeTrace t;
    t.entries_ = std::move(entries);
    return t;
  }

  const std::vector<GazeSample>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const GazeSample& operator[](std::size_t k) const noexcept { return entries_[k]; }
  GazePoint gaze(std::size_t k) const noexcept { return entries_[k].gaze; }

 private:
  std::vector<GazeSample> entries_;
};

/// Parses the `timestamp,u,v` CSV format (one header line). Errors name the
/// 1-based line number of the offending row.
inline GazeTrace parse_trace_csv(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kParse, "line 1: missing header");
  std::vector<GazeSample> entries;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string fields[3];
    std::string extra;
    for (auto& f : fields) {
      if (!std::getline(row, f, ',')) fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": expected 3 fields");
    }
    if (std::getline(row, extra, ',')) fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": expected 3 fields");
    double values[3];
    for (int k = 0; k < 3; ++k) {
      std::size_t used = 0;
      try {
        values[k] = std::stod(fields[k], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      const auto rest = fields[k].find_first_not_of(" \t", used);
      if (used == 0 || rest != std::string::npos) {
        fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": malformed number '" + fields[k] + "'");
      }
    }
    GazeSample s{values[0], {values[1], values[2]}};
    if (!s.gaze.valid()) {
      fail(ErrorKind::kValidation, "line " + std::to_string(line_no) + ": gaze coordinate out of range [0,1]");
    }
    if (!entries.empty() && !(s.timestamp > entries.back().timestamp)) {
      fail(ErrorKind::kValidation, "line " + std::to_string(line_no) + ": timestamp not strictly increasing");
    }
    entries.push_back(s);
  }
  require(!entries.empty(), ErrorKind::kValidation, "gaze trace has no rows");
  return GazeTrace::make(std::move(entries));
}

inline GazeTrace load_trace(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open trace file " + path);
  return parse_trace_csv(in);
}

inline void write_trace_csv(std::ostream& out, const GazeTrace& trace) {
  out << "timestamp,u,v\n";
  out << std::setprecision(17);
  for (const auto& s : trace.entries()) out << s.timestamp << ',' << s.gaze.u << ',' << s.gaze.v << '\n';
}

}  // namespace fovealseg
