// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tcd/errors.hpp"

namespace tcd {

ConfusionMatrix::ConfusionMatrix(std::int64_t classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes * classes), 0) {
  if (classes < 1) throw InputError("confusion matrix needs at least one class");
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::row_sum(std::int64_t gt) const {
  std::int64_t s = 0;
  for (std::int64_t p = 0; p < classes_; ++p) s += at(gt, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(std::int64_t pred) const {
  std::int64_t s = 0;
  for (std::int64_t g = 0; g < classes_; ++g) s += at(g, pred);
  return s;
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix& accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt, Label ignore) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw ShapeError("accumulate: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  const std::int64_t c = cm.classes();
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const Label g = gt.data[i];
    if (g == ignore) continue;
    const Label p = pred.data[i];
    if (g >= c || p >= c) {
      throw InputError("accumulate: label " + std::to_string(g >= c ? g : p) + " out of range for " + std::to_string(c) +
                       " classes");
    }
    ++cm.at(g, p);
  }
  return cm;
}

namespace {

double ratio_or_flag(double num, double den, const char* name, std::set<std::string>& flagged) {
  if (den == 0.0) {
    flagged.insert(name);
    return 0.0;
  }
  return num / den;
}

}  // namespace

BcdMetrics bcd_metrics(const ConfusionMatrix& cm) {
  if (cm.classes() != 2) throw InputError("bcd_metrics needs a 2x2 matrix");
  BcdMetrics m;
  const auto tp = static_cast<double>(cm.at(1, 1));
  const auto fp = static_cast<double>(cm.at(0, 1));
  const auto fn = static_cast<double>(cm.at(1, 0));
  const auto tn = static_cast<double>(cm.at(0, 0));
  m.f1 = 100.0 * ratio_or_flag(2.0 * tp, 2.0 * tp + fp + fn, "F1", m.flagged);
  m.iou = 100.0 * ratio_or_flag(tp, tp + fp + fn, "IoU", m.flagged);
  m.oa = 100.0 * ratio_or_flag(tp + tn, tp + tn + fp + fn, "OA", m.flagged);
  return m;
}

ScdMetrics scd_metrics(const ConfusionMatrix& cm) {
  const std::int64_t c = cm.classes();
  if (c < 2) throw InputError("scd_metrics needs at least two classes (no-change + one category)");
  ScdMetrics m;
  const auto total = static_cast<double>(cm.total());
  const auto nn = static_cast<double>(cm.at(0, 0));
  const double gt_nc = static_cast<double>(cm.row_sum(0));
  const double pred_nc = static_cast<double>(cm.col_sum(0));
  // Collapsed binary matrix.
  const double c01 = gt_nc - nn;    // unchanged, predicted changed
  const double c10 = pred_nc - nn;  // changed, predicted unchanged
  const double c11 = total - gt_nc - pred_nc + nn;
  std::set<std::string> scratch;
  const double iou_nc = ratio_or_flag(nn, nn + c01 + c10, "mIoU", m.flagged);
  const double iou_c = ratio_or_flag(c11, c11 + c01 + c10, "mIoU", scratch);
  if (!scratch.empty()) m.flagged.insert("mIoU");
  m.miou = 100.0 * (iou_nc + iou_c) / 2.0;

  // Kappa with the no-change/no-change cell removed.
  const double sum0 = total - nn;
  double kappa = 0.0;
  if (sum0 == 0.0) {
    m.flagged.insert("SeK");
  } else {
    double diag = 0.0;
    double pe = 0.0;
    for (std::int64_t k = 0; k < c; ++k) {
      const double row = static_cast<double>(cm.row_sum(k)) - (k == 0 ? nn : 0.0);
      const double col = static_cast<double>(cm.col_sum(k)) - (k == 0 ? nn : 0.0);
      diag += k == 0 ? 0.0 : static_cast<double>(cm.at(k, k));
      pe += row * col;
    }
    const double po = diag / sum0;
    pe /= sum0 * sum0;
    if (pe == 1.0) {
      m.flagged.insert("SeK");
    } else {
      kappa = (po - pe) / (1.0 - pe);
    }
  }
  m.sek = m.flagged.count("SeK") ? 0.0 : 100.0 * kappa * std::exp(iou_c - 1.0);

  double tp = 0.0;
  for (std::int64_t k = 1; k < c; ++k) tp += static_cast<double>(cm.at(k, k));
  std::set<std::string> fl;
  const double precision = ratio_or_flag(tp, total - pred_nc, "Fscd", fl);
  const double recall = ratio_or_flag(tp, total - gt_nc, "Fscd", fl);
  if (!fl.empty() || precision + recall == 0.0) {
    m.flagged.insert("Fscd");
    m.fscd = 0.0;
  } else {
    m.fscd = 100.0 * 2.0 * precision * recall / (precision + recall);
  }
  return m;
}

LabelMap scd_change_map(const LabelMap& semantic, const LabelMap& change) {
  if (semantic.height != change.height || semantic.width != change.width) {
    throw ShapeError("scd_change_map: semantic and change maps differ in size");
  }
  LabelMap out(semantic.height, semantic.width, 0);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const Label ch = change.data[i];
    const Label s = semantic.data[i];
    if (ch == kIgnoreLabel || (ch != 0 && s == kIgnoreLabel)) {
      out.data[i] = kIgnoreLabel;
    } else if (ch != 0) {
      if (s >= kIgnoreLabel - 1) throw InputError("scd_change_map: class label too large");
      out.data[i] = static_cast<Label>(s + 1);
    }
  }
  return out;
}

std::string to_string(Stratum s) {
  switch (s) {
    case Stratum::Small: return "small";
    case Stratum::Large: return "large";
    case Stratum::All: return "all";
  }
  return "all";
}

std::vector<Stratum> strata_for(double change_ratio) {
  if (change_ratio < 0.0 || change_ratio > 1.0) throw InputError("change ratio outside [0, 1]");
  std::vector<Stratum> out;
  if (change_ratio < kSmallChangeRatio) out.push_back(Stratum::Small);
  if (change_ratio > kLargeChangeRatio) out.push_back(Stratum::Large);
  out.push_back(Stratum::All);
  return out;
}

namespace {

// Per-class (correct, total) pixel counts within one stratum.
std::vector<std::pair<std::int64_t, std::int64_t>> class_counts(std::span<const StratifiedSample> samples,
                                                                Stratum stratum, std::size_t classes,
                                                                std::size_t& members) {
  std::vector<std::pair<std::int64_t, std::int64_t>> counts(classes, {0, 0});
  members = 0;
  for (const auto& s : samples) {
    const auto st = strata_for(s.change_ratio);
    if (std::find(st.begin(), st.end(), stratum) == st.end()) continue;
    ++members;
    if (s.pred.height != s.gt.height || s.pred.width != s.gt.width) throw ShapeError("stratified_report: map size mismatch");
    for (std::size_t i = 0; i < s.gt.data.size(); ++i) {
      const Label g = s.gt.data[i];
      if (g == kIgnoreLabel) continue;
      if (g >= classes) throw InputError("stratified_report: label " + std::to_string(g) + " out of range");
      ++counts[g].second;
      if (s.pred.data[i] == g) ++counts[g].first;
    }
  }
  return counts;
}

}  // namespace

StratumReport stratified_report(std::span<const StratifiedSample> base, std::span<const StratifiedSample> other,
                                const std::vector<std::string>& class_names) {
  if (!other.empty() && other.size() != base.size()) throw InputError("stratified_report: runs differ in sample count");
  for (std::size_t i = 0; i < other.size(); ++i) {
    if (other[i].change_ratio != base[i].change_ratio) throw InputError("stratified_report: runs disagree on change ratios");
  }
  StratumReport report;
  const std::size_t classes = class_names.size();
  for (Stratum st : {Stratum::Small, Stratum::Large, Stratum::All}) {
    std::size_t members = 0;
    const auto cb = class_counts(base, st, classes, members);
    if (members == 0) {
      report.notes.push_back("stratum '" + to_string(st) + "' has no samples; omitted");
      continue;
    }
    StratumEntry entry;
    entry.stratum = st;
    entry.samples = members;
    std::size_t other_members = 0;
    const auto co = other.empty() ? cb : class_counts(other, st, classes, other_members);
    for (std::size_t k = 0; k < classes; ++k) {
      ClassAccuracy acc;
      acc.class_name = class_names[k];
      if (cb[k].second > 0) {
        acc.base = 100.0 * static_cast<double>(cb[k].first) / static_cast<double>(cb[k].second);
        if (!other.empty()) {
          acc.other = 100.0 * static_cast<double>(co[k].first) / static_cast<double>(co[k].second);
          acc.delta = *acc.other - *acc.base;
        }
      }
      entry.classes.push_back(acc);
    }
    report.strata.push_back(std::move(entry));
  }
  return report;
}

namespace {
std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
std::string fmt_opt(const std::optional<double>& v, bool sign = false) {
  if (!v) return "-";
  std::string s = fmt2(*v);
  return (sign && *v >= 0.0 ? "+" : "") + s;
}
std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; }
std::string padr(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }
}  // namespace

std::string format_bcd(const BcdMetrics& m) {
  std::ostringstream os;
  os << pad("F1", 8) << pad("IoU", 8) << pad("OA", 8) << '\n'
     << pad(fmt2(m.f1), 8) << pad(fmt2(m.iou), 8) << pad(fmt2(m.oa), 8) << '\n';
  return os.str();
}

std::string format_scd(const ScdMetrics& m) {
  std::ostringstream os;
  os << pad("mIoU", 8) << pad("SeK", 8) << pad("Fscd", 8) << '\n'
     << pad(fmt2(m.miou), 8) << pad(fmt2(m.sek), 8) << pad(fmt2(m.fscd), 8) << '\n';
  return os.str();
}

std::string format_strata(const StratumReport& r) {
  std::ostringstream os;
  for (const auto& e : r.strata) {
    os << "stratum " << to_string(e.stratum) << " (" << e.samples << " samples)\n";
    os << padr("Category", 18) << pad("Base", 9) << pad("Other", 9) << pad("Delta", 9) << '\n';
    for (const auto& c : e.classes) {
      os << padr(c.class_name, 18) << pad(fmt_opt(c.base), 9) << pad(fmt_opt(c.other), 9) << pad(fmt_opt(c.delta, true), 9)
         << '\n';
    }
  }
  for (const auto& n : r.notes) os << "note: " << n << '\n';
  return os.str();
}

}  // namespace tcd
