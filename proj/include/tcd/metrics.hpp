// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tcd/labels.hpp"

namespace tcd {

/// Pixel counts, rows = ground truth, columns = prediction. Mergeable.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::int64_t classes);

  std::int64_t classes() const { return classes_; }
  std::int64_t at(std::int64_t gt, std::int64_t pred) const { return counts_[static_cast<std::size_t>(gt * classes_ + pred)]; }
  std::int64_t& at(std::int64_t gt, std::int64_t pred) { return counts_[static_cast<std::size_t>(gt * classes_ + pred)]; }
  std::int64_t total() const;
  std::int64_t row_sum(std::int64_t gt) const;
  std::int64_t col_sum(std::int64_t pred) const;

  ConfusionMatrix& merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::int64_t classes_ = 0;
  std::vector<std::int64_t> counts_;
};

/// Adds every pixel whose ground truth is not `ignore`; throws InputError on
/// out-of-range labels or mismatched shapes.
ConfusionMatrix& accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt, Label ignore = kIgnoreLabel);

/// Percentages. Metrics whose denominator vanishes are 0 and listed in `flagged`.
struct BcdMetrics {
  double f1 = 0.0;
  double iou = 0.0;
  double oa = 0.0;
  std::set<std::string> flagged;
};

struct ScdMetrics {
  double miou = 0.0;
  double sek = 0.0;
  double fscd = 0.0;
  std::set<std::string> flagged;
};

BcdMetrics bcd_metrics(const ConfusionMatrix& cm);

/// Semantic-change scores on a (K+1)-class matrix where index 0 is no-change
/// and index k+1 is category k inside changed regions:
///   mIoU = mean of no-change IoU and change IoU on the collapsed 2x2 matrix
///   SeK  = kappa(matrix with [0,0] zeroed) * exp(IoU_change - 1)
///   Fscd = harmonic mean of semantic precision and recall on changed pixels.
ScdMetrics scd_metrics(const ConfusionMatrix& cm);

/// Semantic-change map: 0 where unchanged, class + 1 where changed.
LabelMap scd_change_map(const LabelMap& semantic, const LabelMap& change);

enum class Stratum { Small, Large, All };
std::string to_string(Stratum s);
inline constexpr double kSmallChangeRatio = 0.05;
inline constexpr double kLargeChangeRatio = 0.25;
/// Strata a sample with this change ratio belongs to ("all" included).
std::vector<Stratum> strata_for(double change_ratio);

struct StratifiedSample {
  LabelMap pred;
  LabelMap gt;
  double change_ratio = 0.0;
};

struct ClassAccuracy {
  std::string class_name;
  std::optional<double> base;   // percent; absent when the class has no pixels
  std::optional<double> other;
  std::optional<double> delta;  // other - base
};

struct StratumEntry {
  Stratum stratum = Stratum::All;
  std::size_t samples = 0;
  std::vector<ClassAccuracy> classes;
};

struct StratumReport {
  std::vector<StratumEntry> strata;
  std::vector<std::string> notes;
};

/// Per-class overall accuracy per change-ratio stratum. `other` (optional)
/// holds a second run's predictions on the same samples; deltas are
/// other - base. Empty strata are omitted with a note.
StratumReport stratified_report(std::span<const StratifiedSample> base, std::span<const StratifiedSample> other,
                                const std::vector<std::string>& class_names);

/// Two-decimal aligned tables.
std::string format_bcd(const BcdMetrics& m);
std::string format_scd(const ScdMetrics& m);
std::string format_strata(const StratumReport& r);

}  // namespace tcd
