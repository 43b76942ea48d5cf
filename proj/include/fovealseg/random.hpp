// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>

namespace fovealseg {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Counter-based child seed: the same (seed, path) always yields the same
/// stream, and distinct paths yield unrelated streams.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = splitmix64(seed);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ull));
  return s;
}

/// Well-known stream identifiers.
enum class SeedStream : std::uint64_t { kModel = 1, kTrainData, kValData, kShuffle, kSequence, kGaze };

inline constexpr std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream, std::uint64_t index = 0) noexcept {
  return derive_seed(seed, {static_cast<std::uint64_t>(stream), index});
}

}  // namespace fovealseg
