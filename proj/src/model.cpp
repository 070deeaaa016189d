// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/model.hpp"

#include "tcd/errors.hpp"
#include "tcd/ops.hpp"

namespace tcd {

std::string to_string(Task task) { return task == Task::BCD ? "bcd" : "scd"; }

Task parse_task(const std::string& s) {
  if (s == "bcd" || s == "BCD") return Task::BCD;
  if (s == "scd" || s == "SCD") return Task::SCD;
  throw ConfigError("unknown task '" + s + "' (expected bcd or scd)");
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
  if (stage_strides != std::array<std::int64_t, 4>{4, 8, 16, 32}) {
    throw ConfigError("model.stage_strides must be exactly [4, 8, 16, 32]");
  }
  for (std::size_t s = 0; s < 4; ++s) {
    if (stage_channels[s] < 1) throw ConfigError("model.stage_channels must be positive");
    if (s > 0 && stage_channels[s] <= stage_channels[s - 1]) {
      throw ConfigError("model.stage_channels must be strictly increasing");
    }
    if (attention_heads[s] < 1 || stage_channels[s] % attention_heads[s] != 0) {
      throw ConfigError("model.attention_heads[" + std::to_string(s) + "] must divide stage_channels[" +
                        std::to_string(s) + "]");
    }
    if (sr_ratios[s] < 1) throw ConfigError("model.sr_ratios must be >= 1");
  }
  if (task == Task::SCD && num_classes < 2) throw ConfigError("model.num_classes must be >= 2 for SCD");
  if (task == Task::BCD && num_classes < 1) throw ConfigError("model.num_classes must be >= 1 for BCD");
  if (decoder_width < 1) throw ConfigError("model.decoder_width must be >= 1");
  if (blocks_per_stage < 0) throw ConfigError("model.blocks_per_stage must be >= 0");
  if (mlp_ratio < 1) throw ConfigError("model.mlp_ratio must be >= 1");
}

ChangeModel::ChangeModel(const ModelConfig& config, std::uint64_t seed) : config_(config), built_(true) {
  config_.validate();
  Rng rng(mix_seed(seed, fnv1a("model_core")));
  const auto& ch = config_.stage_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    Stage& st = stages_[s];
    const std::int64_t in = s == 0 ? config_.in_channels : ch[s - 1];
    // Overlapping patch embedding: 7x7/4 for the first stage, 3x3/2 after.
    st.embed = s == 0 ? nn::Conv2d(in, ch[s], 7, 4, 3, rng) : nn::Conv2d(in, ch[s], 3, 2, 1, rng);
    st.embed_norm = nn::LayerNorm(ch[s]);
    for (int b = 0; b < config_.blocks_per_stage; ++b) {
      Block blk;
      blk.norm1 = nn::LayerNorm(ch[s]);
      blk.norm2 = nn::LayerNorm(ch[s]);
      blk.attn.heads = config_.attention_heads[s];
      blk.attn.sr = config_.sr_ratios[s];
      blk.attn.q = nn::Linear(ch[s], ch[s], rng);
      blk.attn.k = nn::Linear(ch[s], ch[s], rng);
      blk.attn.v = nn::Linear(ch[s], ch[s], rng);
      blk.attn.o = nn::Linear(ch[s], ch[s], rng);
      if (blk.attn.sr > 1) {
        blk.attn.reduce = nn::Conv2d(ch[s], ch[s], blk.attn.sr, blk.attn.sr, 0, rng);
        blk.attn.reduce_norm = nn::LayerNorm(ch[s]);
      }
      blk.fc1 = nn::Linear(ch[s], ch[s] * config_.mlp_ratio, rng);
      blk.fc2 = nn::Linear(ch[s] * config_.mlp_ratio, ch[s], rng);
      st.blocks.push_back(std::move(blk));
    }
    st.out_norm = nn::LayerNorm(ch[s]);
  }

  const std::int64_t dw = config_.decoder_width;
  seg_.fuse34 = nn::ConvNormAct(ch[3] + ch[2], dw, 1, 1, rng);
  seg_.fuse2 = nn::ConvNormAct(dw + ch[1], dw, 1, 1, rng);
  seg_.fuse1 = nn::ConvNormAct(dw + ch[0], dw, 1, 1, rng);
  seg_.refine4 = nn::Conv2d(dw, ch[3], 3, 2, 1, rng);
  seg_.has_head = config_.task == Task::SCD;
  if (seg_.has_head) {
    seg_.head_conv = nn::ConvNormAct(dw, dw, 3, 1, rng);
    seg_.head_out = nn::Conv2d(dw, config_.num_classes, 1, 1, 0, rng);
  }

  cd_.deep = nn::ConvNormAct(3 * ch[3], dw, 3, 1, rng);
  cd_.fuse2 = nn::ConvNormAct(2 * dw, dw, 1, 1, rng);
  cd_.fuse1 = nn::ConvNormAct(2 * dw, dw, 1, 1, rng);
  cd_.head_conv = nn::ConvNormAct(dw, dw, 3, 1, rng);
  cd_.head_out = nn::Conv2d(dw, 2, 1, 1, 0, rng);
}

ag::Var ChangeModel::SrAttention::operator()(const ag::Var& tokens, std::int64_t h, std::int64_t w) const {
  ag::Var context = tokens;
  if (sr > 1) {
    // Keys and values come from a strided reduction of the map; grids
    // smaller than the reduction factor fall back to full attention.
    if (h % sr == 0 && w % sr == 0) {
      ag::Var reduced = reduce(ag::tokens_to_nchw(tokens, h, w));
      context = reduce_norm(ag::nchw_to_tokens(reduced));
    }
  }
  return o(ag::attention(q(tokens), k(context), v(context), heads));
}

void ChangeModel::SrAttention::collect(nn::ParamList& out, const std::string& prefix) const {
  q.collect(out, prefix + "q.");
  k.collect(out, prefix + "k.");
  v.collect(out, prefix + "v.");
  o.collect(out, prefix + "o.");
  if (sr > 1) {
    reduce.collect(out, prefix + "reduce.");
    reduce_norm.collect(out, prefix + "reduce_norm.");
  }
}

ag::Var ChangeModel::Block::operator()(const ag::Var& tokens, std::int64_t h, std::int64_t w) const {
  ag::Var x = ag::add(tokens, attn(norm1(tokens), h, w));
  return ag::add(x, fc2(ag::gelu(fc1(norm2(x)))));
}

void ChangeModel::Block::collect(nn::ParamList& out, const std::string& prefix) const {
  norm1.collect(out, prefix + "norm1.");
  attn.collect(out, prefix + "attn.");
  norm2.collect(out, prefix + "norm2.");
  fc1.collect(out, prefix + "fc1.");
  fc2.collect(out, prefix + "fc2.");
}

ag::Var ChangeModel::as_batch(const ag::Var& images) const {
  if (images.value().rank() == 3) {
    const Shape& s = images.shape();
    return ag::reshape(images, {1, s[0], s[1], s[2]});
  }
  if (images.value().rank() != 4) throw ShapeError("encode: expected [C,H,W] or [B,C,H,W], got " + to_string(images.shape()));
  return images;
}

FeaturePyramid ChangeModel::encode(const ag::Var& images, Phase phase) const {
  if (!built_) throw ConfigError("encode on an empty model");
  ag::Var x = as_batch(images);
  if (x.dim(1) != config_.in_channels) {
    throw ShapeError("encode: expected " + std::to_string(config_.in_channels) + " input channels, got " +
                     std::to_string(x.dim(1)));
  }
  if (x.dim(2) % 32 != 0) throw ConfigError("input height " + std::to_string(x.dim(2)) + " is not divisible by 32");
  if (x.dim(3) % 32 != 0) throw ConfigError("input width " + std::to_string(x.dim(3)) + " is not divisible by 32");

  FeaturePyramid pyr;
  pyr.phase = phase;
  for (std::size_t s = 0; s < 4; ++s) {
    const Stage& st = stages_[s];
    ag::Var map = st.embed(x);
    const std::int64_t h = map.dim(2);
    const std::int64_t w = map.dim(3);
    ag::Var tokens = st.embed_norm(ag::nchw_to_tokens(map));
    for (const auto& blk : st.blocks) tokens = blk(tokens, h, w);
    x = ag::tokens_to_nchw(st.out_norm(tokens), h, w);
    pyr.stages[s] = x;
  }
  return pyr;
}

namespace {
ag::Var up_to(const ag::Var& x, const ag::Var& like) { return ag::upsample_bilinear(x, like.dim(2), like.dim(3)); }
}  // namespace

SegOutput ChangeModel::seg_decode(const FeaturePyramid& pyr, std::int64_t out_h, std::int64_t out_w) const {
  const auto& s = pyr.stages;
  SegOutput out;
  ag::Var f34 = seg_.fuse34(ag::concat_channels({up_to(s[3], s[2]), s[2]}));
  ag::Var f2 = seg_.fuse2(ag::concat_channels({up_to(f34, s[1]), s[1]}));
  ag::Var f1 = seg_.fuse1(ag::concat_channels({up_to(f2, s[0]), s[0]}));
  out.refined.r1 = f1;
  out.refined.r2 = f2;
  out.refined.r4 = ag::add(s[3], seg_.refine4(f34));
  if (seg_.has_head) {
    ag::Var logits = seg_.head_out(seg_.head_conv(f1));
    out.sem_logits = ag::upsample_bilinear(logits, out_h, out_w);
  }
  return out;
}

CdOutput ChangeModel::cd_decode(const RefinedFeatures& ref1, const RefinedFeatures& ref2, std::int64_t out_h,
                                std::int64_t out_w) const {
  for (auto [a, b] : {std::pair{&ref1.r1, &ref2.r1}, std::pair{&ref1.r2, &ref2.r2}, std::pair{&ref1.r4, &ref2.r4}}) {
    if (a->shape() != b->shape()) {
      throw ShapeError("cd_decode: refined feature mismatch " + to_string(a->shape()) + " vs " + to_string(b->shape()));
    }
  }
  CdOutput out;
  out.deep_diff = ag::abs(ag::sub(ref1.r4, ref2.r4));
  out.diff2 = ag::abs(ag::sub(ref1.r2, ref2.r2));
  out.diff1 = ag::abs(ag::sub(ref1.r1, ref2.r1));
  ag::Var deep = cd_.deep(ag::concat_channels({ref1.r4, ref2.r4, out.deep_diff}));
  ag::Var x = cd_.fuse2(ag::concat_channels({up_to(deep, out.diff2), out.diff2}));
  x = cd_.fuse1(ag::concat_channels({up_to(x, out.diff1), out.diff1}));
  out.change_logits = ag::upsample_bilinear(cd_.head_out(cd_.head_conv(x)), out_h, out_w);
  return out;
}

ForwardResult ChangeModel::forward(const ag::Var& x1, const ag::Var& x2) const {
  ForwardResult r;
  r.pyr1 = encode(x1, Phase::T1);
  r.pyr2 = encode(x2, Phase::T2);
  const ag::Var b1 = as_batch(x1);
  const ag::Var b2 = as_batch(x2);
  if (b1.shape() != b2.shape()) {
    throw ShapeError("forward: phase rasters differ " + to_string(b1.shape()) + " vs " + to_string(b2.shape()));
  }
  const std::int64_t h = b1.dim(2);
  const std::int64_t w = b1.dim(3);
  r.seg1 = seg_decode(r.pyr1, h, w);
  r.seg2 = seg_decode(r.pyr2, h, w);
  r.cd = cd_decode(r.seg1.refined, r.seg2.refined, h, w);
  return r;
}

PredictionSet ChangeModel::forward_inference(const Tensor& x1, const Tensor& x2) const {
  ag::NoGradGuard guard;
  ForwardResult r = forward(ag::constant(x1), ag::constant(x2));
  PredictionSet p;
  p.change_logits = r.cd.change_logits.value();
  if (r.seg1.sem_logits) p.sem_logits_t1 = r.seg1.sem_logits->value();
  if (r.seg2.sem_logits) p.sem_logits_t2 = r.seg2.sem_logits->value();
  return p;
}

nn::ParamList ChangeModel::parameters() const {
  nn::ParamList out;
  if (!built_) return out;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string p = "encoder.stage" + std::to_string(s + 1) + ".";
    stages_[s].embed.collect(out, p + "embed.");
    stages_[s].embed_norm.collect(out, p + "embed_norm.");
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      stages_[s].blocks[b].collect(out, p + "block" + std::to_string(b) + ".");
    }
    stages_[s].out_norm.collect(out, p + "out_norm.");
  }
  seg_.fuse34.collect(out, "seg.fuse34.");
  seg_.fuse2.collect(out, "seg.fuse2.");
  seg_.fuse1.collect(out, "seg.fuse1.");
  seg_.refine4.collect(out, "seg.refine4.");
  if (seg_.has_head) {
    seg_.head_conv.collect(out, "seg.head_conv.");
    seg_.head_out.collect(out, "seg.head_out.");
  }
  cd_.deep.collect(out, "cd.deep.");
  cd_.fuse2.collect(out, "cd.fuse2.");
  cd_.fuse1.collect(out, "cd.fuse1.");
  cd_.head_conv.collect(out, "cd.head_conv.");
  cd_.head_out.collect(out, "cd.head_out.");
  return out;
}

}  // namespace tcd
