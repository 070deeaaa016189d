// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace tcd {

using Label = std::uint8_t;
/// Pixels with this label are excluded from losses and metrics.
inline constexpr Label kIgnoreLabel = 255;

/// Single-channel integer label grid, row-major.
struct LabelMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<Label> data;

  LabelMap() = default;
  LabelMap(std::int64_t h, std::int64_t w, Label fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h * w), fill) {}

  Label at(std::int64_t y, std::int64_t x) const { return data[static_cast<std::size_t>(y * width + x)]; }
  Label& at(std::int64_t y, std::int64_t x) { return data[static_cast<std::size_t>(y * width + x)]; }
  std::int64_t size() const { return height * width; }
  bool operator==(const LabelMap&) const = default;
};

}  // namespace tcd
