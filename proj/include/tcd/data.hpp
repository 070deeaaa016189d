// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tcd/labels.hpp"
#include "tcd/tensor.hpp"

namespace tcd {

/// Co-registered raster pair with labels. Rasters are [C, H, W] in [0, 1].
struct BiTemporalSample {
  std::string id;
  Tensor image_t1, image_t2;
  std::optional<LabelMap> sem_t1, sem_t2;  // SCD only
  LabelMap change;                         // 1 = changed

  std::int64_t height() const { return change.height; }
  std::int64_t width() const { return change.width; }
  /// Fraction of labelled pixels marked changed.
  double change_ratio() const;
};

enum class DatasetLayout {
  Bcd,  // A/, B/, label/
  Scd,  // A/, B/, labelA/, labelB/, optional change/
};

std::string to_string(DatasetLayout layout);
DatasetLayout parse_layout(const std::string& s);

/// Directory dataset. Split files are `<root>/<split>.txt` unless listed in
/// `splits`; each holds one sample id per line, files are `<dir>/<id>.png`.
struct DatasetSpec {
  std::filesystem::path root;
  DatasetLayout layout = DatasetLayout::Scd;
  std::int64_t patch_size = 256;
  std::vector<std::string> class_names;
  std::map<std::string, std::filesystem::path> splits;
  /// Samples whose change ratio is below this are dropped when listing.
  double min_change_ratio = 0.0;
};

std::vector<std::string> list_split(const DatasetSpec& spec, const std::string& split);
/// Throws DataError for missing files, mismatched sizes or labels >= K.
BiTemporalSample load_sample(const DatasetSpec& spec, const std::string& id);
/// Checks that every id of `split` loads cleanly; returns the id count.
std::size_t validate_split(const DatasetSpec& spec, const std::string& split);

enum class ShapeKind { Rectangle, Blob };

struct SynthSpec {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t num_classes = 4;
  double change_ratio_target = 0.25;
  /// When above the target, dataset generation draws each sample's target
  /// uniformly from [change_ratio_target, change_ratio_max].
  double change_ratio_max = 0.0;
  std::set<ShapeKind> shapes{ShapeKind::Rectangle, ShapeKind::Blob};
  /// Magnitude of the global brightness/offset jitter applied to phase 2.
  double pseudo_change_noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Phase 1 is a scene of class-colored regions; phase 2 repaints selected
/// regions with another class and applies global jitter. The realized change
/// ratio lies within +-20% of the target or DataError after 100 attempts.
BiTemporalSample synth_pair(const SynthSpec& spec);

/// Sample `index` of a named synthetic split.
BiTemporalSample synth_dataset_sample(const SynthSpec& spec, const std::string& split, std::int64_t index);

/// Same random window (from `seed`) applied to both rasters and all masks.
BiTemporalSample crop_augment(const BiTemporalSample& sample, std::int64_t out_size, std::uint64_t seed);

/// Stable per-class RGB colors used by the generator.
std::vector<std::array<double, 3>> class_palette(std::int64_t num_classes);

/// Writes samples in the SCD layout plus `<split>.txt`.
void write_scd_dataset(const std::filesystem::path& root, const std::vector<BiTemporalSample>& samples,
                       const std::string& split);

}  // namespace tcd
