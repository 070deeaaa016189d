// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/visualize.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "tcd/errors.hpp"
#include "tcd/ops.hpp"

namespace tcd {

std::string to_string(VisualKind kind) {
  return kind == VisualKind::DiffFeatures ? "diff_features" : "recon_similarity";
}

VisualKind parse_visual_kind(const std::string& s) {
  if (s == "diff_features") return VisualKind::DiffFeatures;
  if (s == "recon_similarity") return VisualKind::ReconSimilarity;
  throw ConfigError("unknown visualization '" + s + "' (expected diff_features or recon_similarity)");
}

namespace {

ag::Var single(const Tensor& image) {
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  return ag::constant(image.reshaped(s));
}

// Dark blue through cyan and yellow to dark red.
std::array<std::uint8_t, 3> colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 5> kStops{{{0.0, 0.0, 0.5},
                                                               {0.0, 0.6, 1.0},
                                                               {0.5, 1.0, 0.5},
                                                               {1.0, 0.8, 0.0},
                                                               {0.5, 0.0, 0.0}}};
  t = std::clamp(t, 0.0, 1.0) * (kStops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), kStops.size() - 2);
  const double f = t - static_cast<double>(i);
  std::array<std::uint8_t, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    const double v = kStops[i][c] * (1.0 - f) + kStops[i + 1][c] * f;
    out[c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

}  // namespace

Tensor diff_feature_map(const ChangeModel& model, const BiTemporalSample& sample) {
  ag::NoGradGuard guard;
  const ForwardResult f = model.forward(single(sample.image_t1), single(sample.image_t2));
  const Tensor& d = f.cd.deep_diff.value();  // [1, C, h, w]
  const std::int64_t c = d.dim(1), h = d.dim(2), w = d.dim(3);
  Tensor out({h, w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < h * w; ++p) out[p] += d[ch * h * w + p];
  for (auto& v : out.data()) v /= static_cast<double>(c);
  return out;
}

Tensor recon_similarity_map(const Trainer& trainer, const BiTemporalSample& sample, Phase phase, bool true_difference) {
  ag::NoGradGuard guard;
  const ChangeModel& model = trainer.model();
  const FeaturePyramid p1 = model.encode(single(sample.image_t1), Phase::T1);
  const FeaturePyramid p2 = model.encode(single(sample.image_t2), Phase::T2);
  const std::int64_t h = p1.stages[3].dim(2), w = p1.stages[3].dim(3);
  const ag::Var i1 = ag::nchw_to_tokens(p1.stages[3]);
  const ag::Var i2 = ag::nchw_to_tokens(p2.stages[3]);
  // Phase-i target is rebuilt from the other phase with the phase-i transition.
  const ag::Var& target = phase == Phase::T1 ? i1 : i2;
  const ag::Var& source = phase == Phase::T1 ? i2 : i1;
  ag::Var delta;
  if (true_difference) {
    delta = ag::sub(target, source);
  } else {
    const ag::Var z = trainer.generator().semantic_embedding(ag::constant(trainer.embeddings().embeddings));
    delta = trainer.generator().cross_modal_fusion(target, z, h, w);
  }
  const Reconstruction rec = reconstruct(i1, i2, phase == Phase::T1 ? delta : ag::constant(Tensor(i1.shape())),
                                         phase == Phase::T2 ? delta : ag::constant(Tensor(i1.shape())),
                                         Directionality::TwoWay);
  const Tensor& a = target.value();
  const Tensor& b = (phase == Phase::T1 ? *rec.hat1 : *rec.hat2).value();
  const std::int64_t d = a.dim(2);
  Tensor out({h, w});
  for (std::int64_t t = 0; t < h * w; ++t) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t k = 0; k < d; ++k) {
      const double x = a[t * d + k], y = b[t * d + k];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    out[t] = na > 0.0 && nb > 0.0 ? std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0) : 0.0;
  }
  return out;
}

png::Image render_heatmap(const Tensor& values, double lo, double hi, std::int64_t out_h, std::int64_t out_w) {
  if (values.rank() != 2) throw ShapeError("render_heatmap expects [h, w], got " + to_string(values.shape()));
  if (!(hi > lo)) throw InputError("render_heatmap: empty color range");
  const std::int64_t h = values.dim(0), w = values.dim(1);
  png::Image img;
  img.height = out_h;
  img.width = out_w;
  img.channels = 3;
  img.data.resize(static_cast<std::size_t>(out_h * out_w * 3));
  for (std::int64_t y = 0; y < out_h; ++y) {
    for (std::int64_t x = 0; x < out_w; ++x) {
      const double v = values[(y * h / out_h) * w + x * w / out_w];
      const auto rgb = colormap((v - lo) / (hi - lo));
      std::copy(rgb.begin(), rgb.end(), img.data.begin() + (y * out_w + x) * 3);
    }
  }
  return img;
}

std::vector<std::filesystem::path> write_visualization(const Trainer& trainer, const BiTemporalSample& sample,
                                                       VisualKind kind, const std::filesystem::path& out_dir,
                                                       bool true_difference) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> files;
  const std::int64_t oh = sample.height(), ow = sample.width();
  if (kind == VisualKind::DiffFeatures) {
    const auto path = out_dir / (sample.id + "_diff_features.png");
    png::write_rgb(path, render_heatmap(diff_feature_map(trainer.model(), sample), kDiffScaleMin, kDiffScaleMax, oh, ow));
    files.push_back(path);
    return files;
  }
  for (Phase phase : {Phase::T1, Phase::T2}) {
    const auto path = out_dir / (sample.id + (phase == Phase::T1 ? "_recon_similarity_t1.png" : "_recon_similarity_t2.png"));
    const Tensor map = recon_similarity_map(trainer, sample, phase, true_difference);
    png::write_rgb(path, render_heatmap(map, kSimilarityScaleMin, kSimilarityScaleMax, oh, ow));
    files.push_back(path);
  }
  return files;
}

}  // namespace tcd
