// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tcd/autograd.hpp"
#include "tcd/nn.hpp"

namespace tcd {

enum class Task { BCD, SCD };
enum class Phase { T1, T2 };

std::string to_string(Task task);
Task parse_task(const std::string& s);

struct ModelConfig {
  std::int64_t in_channels = 3;
  std::array<std::int64_t, 4> stage_channels{16, 32, 64, 128};
  std::array<std::int64_t, 4> stage_strides{4, 8, 16, 32};
  std::int64_t num_classes = 6;
  Task task = Task::SCD;
  /// Unified width of the Seg and CD decoders.
  std::int64_t decoder_width = 64;
  std::array<int, 4> attention_heads{1, 2, 4, 8};
  /// Spatial-reduction factor of the key/value path per stage.
  std::array<int, 4> sr_ratios{8, 4, 2, 1};
  int blocks_per_stage = 2;
  int mlp_ratio = 2;

  /// Throws ConfigError on the first violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Four encoder stages, stage s shaped [B, stage_channels[s], H/stride[s], W/stride[s]].
struct FeaturePyramid {
  std::array<ag::Var, 4> stages;
  Phase phase = Phase::T1;
};

/// Seg-decoder outputs: r1 and r2 at stage-1/2 resolution with decoder_width
/// channels, r4 shaped like the encoder's stage-4 map.
struct RefinedFeatures {
  ag::Var r1, r2, r4;
};

struct SegOutput {
  RefinedFeatures refined;
  std::optional<ag::Var> sem_logits;  // [B, K, H, W], SCD only
};

struct CdOutput {
  ag::Var change_logits;  // [B, 2, H, W]
  ag::Var deep_diff;      // |r4_1 - r4_2|
  ag::Var diff2;          // |r2_1 - r2_2|
  ag::Var diff1;          // |r1_1 - r1_2|
};

/// Full training-time forward record.
struct ForwardResult {
  FeaturePyramid pyr1, pyr2;
  SegOutput seg1, seg2;
  CdOutput cd;
};

struct PredictionSet {
  Tensor change_logits;  // [B, 2, H, W]
  std::optional<Tensor> sem_logits_t1, sem_logits_t2;
};

/// Siamese encoder, weight-shared Seg decoder and the CD decoder. Holds no
/// transition-generator state.
class ChangeModel {
 public:
  ChangeModel() = default;
  ChangeModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  bool empty() const { return !built_; }

  /// images [B, C, H, W] or a single raster [C, H, W].
  FeaturePyramid encode(const ag::Var& images, Phase phase = Phase::T1) const;
  SegOutput seg_decode(const FeaturePyramid& pyr, std::int64_t out_h, std::int64_t out_w) const;
  CdOutput cd_decode(const RefinedFeatures& ref1, const RefinedFeatures& ref2, std::int64_t out_h,
                     std::int64_t out_w) const;

  ForwardResult forward(const ag::Var& x1, const ag::Var& x2) const;
  /// Gradient-free forward through encoder, Seg decoders and CD decoder.
  PredictionSet forward_inference(const Tensor& x1, const Tensor& x2) const;

  nn::ParamList parameters() const;

 private:
  struct SrAttention {
    int heads = 1;
    int sr = 1;
    nn::Linear q, k, v, o;
    nn::Conv2d reduce;
    nn::LayerNorm reduce_norm;
    ag::Var operator()(const ag::Var& tokens, std::int64_t h, std::int64_t w) const;
    void collect(nn::ParamList& out, const std::string& prefix) const;
  };
  struct Block {
    nn::LayerNorm norm1, norm2;
    SrAttention attn;
    nn::Linear fc1, fc2;
    ag::Var operator()(const ag::Var& tokens, std::int64_t h, std::int64_t w) const;
    void collect(nn::ParamList& out, const std::string& prefix) const;
  };
  struct Stage {
    nn::Conv2d embed;
    nn::LayerNorm embed_norm;
    std::vector<Block> blocks;
    nn::LayerNorm out_norm;
  };
  struct SegDecoder {
    nn::ConvNormAct fuse34, fuse2, fuse1;
    nn::Conv2d refine4;
    bool has_head = false;
    nn::ConvNormAct head_conv;
    nn::Conv2d head_out;
  };
  struct CdDecoder {
    nn::ConvNormAct deep, fuse2, fuse1, head_conv;
    nn::Conv2d head_out;
  };

  ag::Var as_batch(const ag::Var& images) const;

  ModelConfig config_;
  bool built_ = false;
  std::array<Stage, 4> stages_;
  SegDecoder seg_;
  CdDecoder cd_;
};

}  // namespace tcd
