// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "tcd/metrics.hpp"

namespace tcd::testing {

inline double safe(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

// Pixel-enumeration oracles that never build a confusion matrix.
inline BcdMetrics bcd_oracle(const LabelMap& pred, const LabelMap& gt) {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const bool p = pred.data[i] == 1, g = gt.data[i] == 1;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
    tn += !p && !g;
  }
  BcdMetrics m;
  m.f1 = 100 * safe(2 * tp, 2 * tp + fp + fn);
  m.iou = 100 * safe(tp, tp + fp + fn);
  m.oa = 100 * safe(tp + tn, tp + fp + fn + tn);
  return m;
}

inline ScdMetrics scd_oracle(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int classes) {
  double both_nc = 0, either_nc = 0, both_c = 0, either_c = 0, hit = 0, pred_c = 0, gt_c = 0;
  double kept = 0, agree = 0;
  std::vector<double> gt_freq(classes, 0), pred_freq(classes, 0);
  for (std::size_t s = 0; s < gts.size(); ++s) {
    for (std::size_t i = 0; i < gts[s].data.size(); ++i) {
      const int g = gts[s].data[i], p = preds[s].data[i];
      both_nc += g == 0 && p == 0;
      either_nc += g == 0 || p == 0;
      both_c += g != 0 && p != 0;
      either_c += g != 0 || p != 0;
      hit += g != 0 && g == p;
      pred_c += p != 0;
      gt_c += g != 0;
      if (g == 0 && p == 0) continue;
      ++kept;
      agree += g == p;
      ++gt_freq[g];
      ++pred_freq[p];
    }
  }
  ScdMetrics m;
  const double iou_c = safe(both_c, either_c);
  m.miou = 100 * (safe(both_nc, either_nc) + iou_c) / 2;
  if (kept > 0) {
    const double po = agree / kept;
    double pe = 0;
    for (int k = 0; k < classes; ++k) pe += (gt_freq[k] / kept) * (pred_freq[k] / kept);
    m.sek = pe == 1.0 ? 0.0 : 100 * (po - pe) / (1 - pe) * std::exp(iou_c - 1);
  }
  const double precision = safe(hit, pred_c), recall = safe(hit, gt_c);
  m.fscd = precision + recall == 0 ? 0.0 : 100 * 2 * precision * recall / (precision + recall);
  return m;
}

}  // namespace tcd::testing
