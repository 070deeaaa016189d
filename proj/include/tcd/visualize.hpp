// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "tcd/data.hpp"
#include "tcd/png_io.hpp"
#include "tcd/train.hpp"

namespace tcd {

enum class VisualKind { DiffFeatures, ReconSimilarity };

std::string to_string(VisualKind kind);
VisualKind parse_visual_kind(const std::string& s);

/// Pinned color-scale ranges, shared by every image of a kind.
inline constexpr double kDiffScaleMin = 0.0;
inline constexpr double kDiffScaleMax = 2.0;
inline constexpr double kSimilarityScaleMin = -1.0;
inline constexpr double kSimilarityScaleMax = 1.0;

/// Channel mean of the CD decoder's deepest |r4_1 - r4_2| map, [h4, w4].
Tensor diff_feature_map(const ChangeModel& model, const BiTemporalSample& sample);

/// Per-token cosine between a phase's stage-4 tokens and their
/// reconstruction from the other phase, [h4, w4]. With `true_difference`
/// the transition feature is replaced by the exact token difference.
Tensor recon_similarity_map(const Trainer& trainer, const BiTemporalSample& sample, Phase phase,
                            bool true_difference = false);

/// Maps `values` [h, w] through a fixed colormap on [lo, hi] and upsamples by
/// nearest neighbour to out_h x out_w.
png::Image render_heatmap(const Tensor& values, double lo, double hi, std::int64_t out_h, std::int64_t out_w);

/// Renders the requested figure for one sample into `out_dir`; returns the
/// written files.
std::vector<std::filesystem::path> write_visualization(const Trainer& trainer, const BiTemporalSample& sample,
                                                       VisualKind kind, const std::filesystem::path& out_dir,
                                                       bool true_difference = false);

}  // namespace tcd
