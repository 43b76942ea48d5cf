// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// 8-bit PNG read/write through libpng.

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "fovealseg/error.hpp"
#include "fovealseg/tensor.hpp"

namespace fovealseg::tools {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Reads any 8/16-bit PNG as a 3-channel image in [0,1]. Grey images are
/// replicated, alpha is dropped.
inline Tensor read_png(const std::filesystem::path& path) {
  detail::FilePtr file(std::fopen(path.string().c_str(), "rb"));
  require(file != nullptr, ErrorKind::kIo, "cannot open " + path.string());
  png_byte sig[8];
  require(std::fread(sig, 1, 8, file.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0, ErrorKind::kParse,
          path.string() + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  require(png != nullptr && info != nullptr, ErrorKind::kIo, "libpng init failed");
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kParse, path.string() + ": corrupt PNG");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const auto stride = png_get_rowbytes(png, info);
  pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = pixels.data() + r * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor img(3, static_cast<int>(height), static_cast<int>(width));
  for (int i = 0; i < img.height; ++i) {
    for (int j = 0; j < img.width; ++j) {
      for (int c = 0; c < 3; ++c) img(c, i, j) = rows[static_cast<std::size_t>(i)][3 * j + c] / 255.0;
    }
  }
  return img;
}

/// Writes 1-channel (grey) or 3-channel (RGB) images clamped to [0,1].
inline void write_png(const std::filesystem::path& path, const Tensor& image) {
  require(image.channels == 1 || image.channels == 3, ErrorKind::kShape, "PNG needs 1 or 3 channels");
  detail::FilePtr file(std::fopen(path.string().c_str(), "wb"));
  require(file != nullptr, ErrorKind::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  require(png != nullptr && info != nullptr, ErrorKind::kIo, "libpng init failed");
  const int C = image.channels;
  std::vector<png_byte> pixels(static_cast<std::size_t>(image.height) * image.width * C);
  for (int i = 0; i < image.height; ++i) {
    for (int j = 0; j < image.width; ++j) {
      for (int c = 0; c < C; ++c) {
        pixels[(static_cast<std::size_t>(i) * image.width + j) * C + c] =
            static_cast<png_byte>(std::lround(std::clamp(image(c, i, j), 0.0, 1.0) * 255.0));
      }
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int i = 0; i < image.height; ++i) rows[static_cast<std::size_t>(i)] = pixels.data() + i * image.width * C;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kIo, "failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace fovealseg::tools
