// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fovealseg {

enum class ErrorKind {
  kInvalidDimension,
  kInvalidThreshold,
  kInvalidKernel,
  kShape,
  kValidation,
  kConfiguration,
  kParse,
  kNoInstance,
  kUnknownComponent,
  kIo,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidDimension: return "invalid-dimension";
    case ErrorKind::kInvalidThreshold: return "invalid-threshold";
    case ErrorKind::kInvalidKernel: return "invalid-kernel";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kNoInstance: return "no-instance";
    case ErrorKind::kUnknownComponent: return "unknown-component";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace fovealseg
