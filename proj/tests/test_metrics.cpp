// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "tcd/errors.hpp"
#include "tcd/metrics.hpp"
#include "tcd/rng.hpp"
#include "metric_oracle.hpp"

namespace tcd {
namespace {

using testing::bcd_oracle;
using testing::scd_oracle;

ConfusionMatrix binary(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
  ConfusionMatrix cm(2);
  cm.at(1, 1) = tp;
  cm.at(0, 1) = fp;
  cm.at(1, 0) = fn;
  cm.at(0, 0) = tn;
  return cm;
}

LabelMap random_map(Rng& rng, std::int64_t h, std::int64_t w, int classes) {
  LabelMap m(h, w);
  for (auto& v : m.data) v = static_cast<Label>(rng.below(classes));
  return m;
}

TEST(ConfusionMatrix, AccumulateBasics) {
  LabelMap a(10, 10);
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = i % 3 == 0;
  ConfusionMatrix cm(2);
  accumulate(cm, a, a);
  EXPECT_EQ(cm.at(0, 0) + cm.at(1, 1), 100);
  EXPECT_EQ(cm.total(), 100);

  ConfusionMatrix empty(2);
  accumulate(empty, LabelMap(0, 0), LabelMap(0, 0));
  EXPECT_EQ(empty, ConfusionMatrix(2));
}

TEST(ConfusionMatrix, HandEnumeratedFourPixels) {
  LabelMap pred(2, 2), gt(2, 2);
  pred.data = {0, 1, 1, 0};
  gt.data = {0, 1, 0, kIgnoreLabel};
  ConfusionMatrix cm(2);
  accumulate(cm, pred, gt);
  EXPECT_EQ(cm.at(0, 0), 1);
  EXPECT_EQ(cm.at(1, 1), 1);
  EXPECT_EQ(cm.at(0, 1), 1);
  EXPECT_EQ(cm.at(1, 0), 0);
  EXPECT_EQ(cm.total(), 3);
}

TEST(ConfusionMatrix, Errors) {
  ConfusionMatrix cm(2);
  LabelMap bad(1, 1, 2);
  EXPECT_THROW(accumulate(cm, bad, LabelMap(1, 1)), InputError);
  EXPECT_THROW(accumulate(cm, LabelMap(1, 2), LabelMap(1, 1)), ShapeError);
  EXPECT_THROW(cm.merge(ConfusionMatrix(3)), ShapeError);
}

TEST(ConfusionMatrix, AccumulationIsAssociative) {
  Rng rng(1);
  ConfusionMatrix whole(3), merged(3);
  LabelMap all_p(16, 8), all_g(16, 8);
  for (int part = 0; part < 2; ++part) {
    const LabelMap p = random_map(rng, 8, 8, 3), g = random_map(rng, 8, 8, 3);
    std::copy(p.data.begin(), p.data.end(), all_p.data.begin() + part * 64);
    std::copy(g.data.begin(), g.data.end(), all_g.data.begin() + part * 64);
    ConfusionMatrix shard(3);
    accumulate(shard, p, g);
    merged.merge(shard);
  }
  accumulate(whole, all_p, all_g);
  EXPECT_EQ(whole, merged);
}

TEST(BcdMetrics, Examples) {
  const BcdMetrics perfect = bcd_metrics(binary(5, 0, 0, 95));
  EXPECT_EQ(perfect.f1, 100.0);
  EXPECT_EQ(perfect.iou, 100.0);
  EXPECT_EQ(perfect.oa, 100.0);

  const BcdMetrics m = bcd_metrics(binary(8, 2, 2, 88));
  EXPECT_NEAR(m.f1, 80.0, 1e-12);
  EXPECT_NEAR(m.iou, 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.oa, 96.0, 1e-12);
  EXPECT_TRUE(m.flagged.empty());

  const BcdMetrics none = bcd_metrics(binary(0, 0, 0, 50));
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_TRUE(none.flagged.count("F1"));
  EXPECT_TRUE(none.flagged.count("IoU"));
  EXPECT_EQ(none.oa, 100.0);
  EXPECT_THROW(bcd_metrics(ConfusionMatrix(3)), InputError);
}

TEST(ScdMetrics, PerfectAgreement) {
  ConfusionMatrix cm(4);
  cm.at(0, 0) = 50;
  cm.at(1, 1) = 10;
  cm.at(2, 2) = 5;
  cm.at(3, 3) = 7;
  const ScdMetrics m = scd_metrics(cm);
  EXPECT_NEAR(m.sek, 100.0, 1e-12);  // kappa 1, change IoU 1
  EXPECT_NEAR(m.miou, 100.0, 1e-12);
  EXPECT_NEAR(m.fscd, 100.0, 1e-12);

  ConfusionMatrix nc(4);
  nc.at(0, 0) = 64;
  const ScdMetrics d = scd_metrics(nc);
  EXPECT_EQ(d.sek, 0.0);
  EXPECT_TRUE(d.flagged.count("SeK"));
  EXPECT_TRUE(d.flagged.count("Fscd"));
}

TEST(ScdMetrics, CraftedSixPixels) {
  LabelMap pred(1, 6), gt(1, 6);
  gt.data = {0, 0, 1, 1, 2, 2};
  pred.data = {0, 1, 1, 2, 2, 0};
  ConfusionMatrix cm(3);
  accumulate(cm, pred, gt);
  const ScdMetrics m = scd_metrics(cm), o = scd_oracle({pred}, {gt}, 3);
  EXPECT_NEAR(m.miou, o.miou, 1e-9);
  EXPECT_NEAR(m.sek, o.sek, 1e-9);
  EXPECT_NEAR(m.fscd, o.fscd, 1e-9);
  // By hand: change IoU 3/5; no-change IoU 1/3; two of three changed pixels right.
  EXPECT_NEAR(m.miou, 100.0 * (1.0 / 3.0 + 3.0 / 5.0) / 2.0, 1e-12);
  EXPECT_NEAR(m.fscd, 50.0, 1e-12);
}

TEST(Metrics, MatchPixelOracleOnRandomPairs) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const LabelMap pc = random_map(rng, 8, 8, 2), gc = random_map(rng, 8, 8, 2);
    ConfusionMatrix cm2(2);
    accumulate(cm2, pc, gc);
    const BcdMetrics b = bcd_metrics(cm2), bo = bcd_oracle(pc, gc);
    EXPECT_NEAR(b.f1, bo.f1, 1e-9);
    EXPECT_NEAR(b.iou, bo.iou, 1e-9);
    EXPECT_NEAR(b.oa, bo.oa, 1e-9);

    const int k = 2 + static_cast<int>(rng.below(3));  // K in [2, 4]
    const LabelMap ps = scd_change_map(random_map(rng, 8, 8, k), pc);
    const LabelMap gs = scd_change_map(random_map(rng, 8, 8, k), gc);
    ConfusionMatrix cm(k + 1);
    accumulate(cm, ps, gs);
    const ScdMetrics s = scd_metrics(cm), so = scd_oracle({ps}, {gs}, k + 1);
    EXPECT_NEAR(s.miou, so.miou, 1e-9);
    EXPECT_NEAR(s.sek, so.sek, 1e-9);
    EXPECT_NEAR(s.fscd, so.fscd, 1e-9);
    for (double v : {b.f1, b.iou, b.oa, s.miou, s.fscd}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 100.0);
    }
    EXPECT_LE(s.sek, 100.0);
  }
}

TEST(Metrics, PixelOrderDoesNotMatter) {
  Rng rng(3);
  const LabelMap p = random_map(rng, 8, 8, 4), g = random_map(rng, 8, 8, 4);
  LabelMap pr(8, 8), gr(8, 8);
  for (std::size_t i = 0; i < 64; ++i) {
    pr.data[63 - i] = p.data[i];
    gr.data[63 - i] = g.data[i];
  }
  ConfusionMatrix a(4), b(4);
  accumulate(a, p, g);
  accumulate(b, pr, gr);
  EXPECT_EQ(a, b);
}

TEST(Metrics, BinaryScdMatchesBcd) {
  Rng rng(4);
  const LabelMap p = random_map(rng, 8, 8, 2), g = random_map(rng, 8, 8, 2);
  ConfusionMatrix cm(2);
  accumulate(cm, p, g);
  const BcdMetrics b = bcd_metrics(cm);
  const ScdMetrics s = scd_metrics(cm);
  // With one category, the semantic F score is the change F1.
  EXPECT_NEAR(s.fscd, b.f1, 1e-12);
}

TEST(ScdChangeMap, Encoding) {
  LabelMap sem(1, 4), change(1, 4);
  sem.data = {0, 1, 2, 3};
  change.data = {0, 1, 1, kIgnoreLabel};
  const LabelMap m = scd_change_map(sem, change);
  EXPECT_EQ(m.data, (std::vector<Label>{0, 2, 3, kIgnoreLabel}));
}

StratifiedSample sample(double ratio, Label pred, Label gt) {
  return {LabelMap(2, 2, pred), LabelMap(2, 2, gt), ratio};
}

TEST(Stratified, Thresholds) {
  EXPECT_EQ(strata_for(0.049), (std::vector<Stratum>{Stratum::Small, Stratum::All}));
  EXPECT_EQ(strata_for(0.05), (std::vector<Stratum>{Stratum::All}));
  EXPECT_EQ(strata_for(0.25), (std::vector<Stratum>{Stratum::All}));
  EXPECT_EQ(strata_for(0.2501), (std::vector<Stratum>{Stratum::Large, Stratum::All}));
  EXPECT_THROW(strata_for(1.5), InputError);

  const std::vector<StratifiedSample> two{sample(0.01, 0, 0), sample(0.6, 1, 1)};
  const StratumReport r = stratified_report(two, {}, {"a", "b"});
  ASSERT_EQ(r.strata.size(), 3u);
  EXPECT_EQ(r.strata[0].stratum, Stratum::Small);
  EXPECT_EQ(r.strata[0].samples, 1u);
  EXPECT_EQ(*r.strata[0].classes[0].base, 100.0);
  EXPECT_FALSE(r.strata[0].classes[1].base.has_value());
  EXPECT_EQ(r.strata[1].stratum, Stratum::Large);
  EXPECT_EQ(r.strata[2].samples, 2u);
}

TEST(Stratified, MidRatiosLeaveOnlyAll) {
  const std::vector<StratifiedSample> s{sample(0.15, 0, 0), sample(0.15, 1, 0)};
  const StratumReport r = stratified_report(s, {}, {"a", "b"});
  ASSERT_EQ(r.strata.size(), 1u);
  EXPECT_EQ(r.strata[0].stratum, Stratum::All);
  EXPECT_EQ(r.notes.size(), 2u);
  EXPECT_NEAR(*r.strata[0].classes[0].base, 50.0, 1e-12);
}

TEST(Stratified, IdenticalRunsHaveZeroDeltas) {
  const std::vector<StratifiedSample> s{sample(0.01, 0, 1), sample(0.3, 1, 1), sample(0.1, 0, 0)};
  const StratumReport r = stratified_report(s, s, {"a", "b"});
  for (const auto& e : r.strata)
    for (const auto& c : e.classes)
      if (c.delta) EXPECT_EQ(*c.delta, 0.0);
  EXPECT_NE(format_strata(r).find("small"), std::string::npos);
}

TEST(Stratified, DeltasAreOtherMinusBase) {
  const std::vector<StratifiedSample> base{sample(0.4, 0, 1)}, other{sample(0.4, 1, 1)};
  const StratumReport r = stratified_report(base, other, {"a", "b"});
  ASSERT_EQ(r.strata.size(), 2u);
  EXPECT_EQ(*r.strata[0].classes[1].delta, 100.0);
  const std::vector<StratifiedSample> mismatched{sample(0.3, 1, 1)};
  EXPECT_THROW(stratified_report(base, mismatched, {"a", "b"}), InputError);
}

TEST(Formatting, TwoDecimals) {
  const std::string s = format_bcd(bcd_metrics(binary(8, 2, 2, 88)));
  EXPECT_NE(s.find("80.00"), std::string::npos);
  EXPECT_NE(s.find("66.67"), std::string::npos);
  EXPECT_NE(s.find("96.00"), std::string::npos);
}

}  // namespace
}  // namespace tcd
