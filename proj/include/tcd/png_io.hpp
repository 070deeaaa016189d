// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tcd/labels.hpp"

namespace tcd::png {

/// 8-bit interleaved image.
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  std::vector<std::uint8_t> data;
};

/// Reads any 8/16-bit PNG as 8-bit RGB.
Image read_rgb(const std::filesystem::path& path);
/// Reads a single-channel label PNG: palette indices or gray values.
LabelMap read_labels(const std::filesystem::path& path);

void write_rgb(const std::filesystem::path& path, const Image& image);
/// Writes labels as an indexed PNG with a fixed palette.
void write_labels(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace tcd::png
