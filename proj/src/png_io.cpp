// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/png_io.hpp"

#include <png.h>

#include <array>
#include <cstdio>
#include <memory>

#include "tcd/errors.hpp"

namespace tcd::png {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError(std::string(*mode == 'r' ? "missing file " : "cannot write ") + path.string());
  return f;
}

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::array<char, 256>*>(png_get_error_ptr(png));
  std::snprintf(buf->data(), buf->size(), "%s", msg);
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Decodes rows after the caller-selected transforms. Returns false on a
// libpng error; no objects with destructors live across the setjmp.
bool decode(std::FILE* f, bool keep_indices, Image& out, std::vector<png_bytep>& rows, std::array<char, 256>& err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (depth < 8 && !(keep_indices && color == PNG_COLOR_TYPE_PALETTE)) png_set_expand(png);
  if (depth < 8 && keep_indices && color == PNG_COLOR_TYPE_PALETTE) png_set_packing(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (!keep_indices) {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
  } else if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA) {
    err = {};
    std::snprintf(err.data(), err.size(), "label image must be single-channel (gray or indexed)");
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_read_update_info(png, info);
  out.height = png_get_image_height(png, info);
  out.width = png_get_image_width(png, info);
  out.channels = png_get_channels(png, info);
  out.data.assign(static_cast<std::size_t>(out.height * out.width * out.channels), 0);
  rows.resize(static_cast<std::size_t>(out.height));
  for (std::int64_t y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.data.data() + y * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

Image read_any(const std::filesystem::path& path, bool keep_indices) {
  FilePtr f = open_file(path, "rb");
  Image img;
  std::vector<png_bytep> rows;
  std::array<char, 256> err{};
  if (!decode(f.get(), keep_indices, img, rows, err)) throw DataError("cannot decode PNG " + path.string() + ": " + err.data());
  return img;
}

bool encode(std::FILE* f, const std::uint8_t* data, std::int64_t h, std::int64_t w, int color, std::int64_t channels,
            const png_color* palette, int palette_size, std::array<char, 256>& err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (palette) png_set_PLTE(png, info, palette, palette_size);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < h; ++y) png_write_row(png, data + y * w * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace

Image read_rgb(const std::filesystem::path& path) { return read_any(path, false); }

LabelMap read_labels(const std::filesystem::path& path) {
  Image img = read_any(path, true);
  if (img.channels != 1) throw DataError("label image " + path.string() + " must be single-channel");
  LabelMap m(img.height, img.width);
  m.data = std::move(img.data);
  return m;
}

void write_rgb(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw InputError("write_rgb expects 3 channels");
  FilePtr f = open_file(path, "wb");
  std::array<char, 256> err{};
  if (!encode(f.get(), image.data.data(), image.height, image.width, PNG_COLOR_TYPE_RGB, 3, nullptr, 0, err)) {
    throw DataError("cannot encode PNG " + path.string() + ": " + err.data());
  }
}

void write_labels(const std::filesystem::path& path, const LabelMap& labels) {
  std::array<png_color, 256> palette{};
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kBase{{{0, 0, 0},
                                                                      {255, 255, 255},
                                                                      {0, 128, 0},
                                                                      {128, 128, 128},
                                                                      {0, 0, 255},
                                                                      {255, 0, 0},
                                                                      {0, 255, 0},
                                                                      {128, 0, 0}}};
  for (std::size_t i = 0; i < palette.size(); ++i) {
    const auto& c = kBase[i % kBase.size()];
    palette[i] = {static_cast<png_byte>(c[0]), static_cast<png_byte>(c[1]), static_cast<png_byte>(c[2])};
  }
  palette[kIgnoreLabel] = {255, 255, 0};
  FilePtr f = open_file(path, "wb");
  std::array<char, 256> err{};
  if (!encode(f.get(), labels.data.data(), labels.height, labels.width, PNG_COLOR_TYPE_PALETTE, 1, palette.data(), 256,
              err)) {
    throw DataError("cannot encode PNG " + path.string() + ": " + err.data());
  }
}

}  // namespace tcd::png
