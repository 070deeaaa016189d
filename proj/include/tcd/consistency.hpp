// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tcd/autograd.hpp"
#include "tcd/labels.hpp"
#include "tcd/model.hpp"

namespace tcd {

/// Which reconstruction mappings are trained.
enum class Directionality {
  Forward,   // phase-2 features rebuilt from phase 1: I1 + D2 -> I2
  Backward,  // phase-1 features rebuilt from phase 2: I2 + D1 -> I1
  TwoWay,
};

std::string to_string(Directionality d);
Directionality parse_directionality(const std::string& s);
Directionality default_directionality(Task task);

/// Per-token change labels at a coarse grid: +1 unchanged, -1 changed.
/// Batched labels are concatenated sample by sample.
struct TokenLabels {
  std::vector<int> y;
  double change_fraction = 0.0;
  std::int64_t grid_h = 0;
  std::int64_t grid_w = 0;
};

struct LossWeights {
  double lambda1 = 0.1;
  double lambda2 = 1.0;
  double tau = 0.07;

  void validate() const;
};

/// Itemized scalar losses of one step.
struct LossReport {
  double l_change = 0.0;
  double l_sem = 0.0;
  double l_sa = 0.0;
  double l_cd = 0.0;
  double l_recon = 0.0;
  double l_trans = 0.0;
  double total = 0.0;
  std::set<std::string> active_terms;
};

/// Differentiable loss terms; absent terms are disabled.
struct LossTerms {
  std::optional<ag::Var> change, sem, sa, recon, trans;
};

struct WeightedLoss {
  ag::Var total;
  LossReport report;
};

struct Reconstruction {
  std::optional<ag::Var> hat1;  // rebuilt phase-1 tokens, I2 + D1
  std::optional<ag::Var> hat2;  // rebuilt phase-2 tokens, I1 + D2
};

/// Additive reconstruction of one phase's tokens from the other's.
Reconstruction reconstruct(const ag::Var& i1, const ag::Var& i2, const ag::Var& d1, const ag::Var& d2,
                           Directionality directionality);

/// Majority rule: a token is changed when more than half of its patch is.
TokenLabels token_labels_from_mask(const LabelMap& change_mask, std::int64_t grid_h, std::int64_t grid_w);
TokenLabels token_labels_from_masks(std::span<const LabelMap> change_masks, std::int64_t grid_h, std::int64_t grid_w);

/// Mean pixel-wise cross-entropy of logits [B, C, H, W]; ignored pixels are
/// skipped and an empty reduction is 0.
ag::Var cross_entropy(const ag::Var& logits, std::span<const LabelMap> targets, Label ignore = kIgnoreLabel);

ag::Var loss_change(const ag::Var& change_logits, std::span<const LabelMap> change_masks);
ag::Var loss_sem(const ag::Var& sem_logits_t1, const ag::Var& sem_logits_t2, std::span<const LabelMap> gt_t1,
                 std::span<const LabelMap> gt_t2);
/// Mean of 1 - cos(f1, f2) over unchanged positions of features [B, C, h, w];
/// masks at full resolution are reduced to the feature grid by majority.
ag::Var loss_sa(const ag::Var& f1, const ag::Var& f2, std::span<const LabelMap> change_masks);
/// Token InfoNCE: anchors from `original`, candidates are every reconstructed
/// token in the batch with the same-position token as positive.
ag::Var loss_recon(const ag::Var& original, const ag::Var& reconstructed, double tau);
/// Transition constraint over tokens [B, L, D] with labels of length B*L.
ag::Var loss_trans(const ag::Var& d1, const ag::Var& d2, const TokenLabels& labels);

WeightedLoss loss_total(const LossTerms& terms, const LossWeights& weights, Task task);

}  // namespace tcd
