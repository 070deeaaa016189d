// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tcd/autograd.hpp"
#include "tcd/nn.hpp"

namespace tcd {

enum class EmbeddingSource { FileImport, SeededSynthetic };

/// One frozen text vector per label category, rows in class order.
struct ClassEmbeddingSet {
  Tensor embeddings;  // [K, D_t]
  EmbeddingSource source = EmbeddingSource::SeededSynthetic;
  std::vector<std::string> class_names;

  std::int64_t num_classes() const { return embeddings.rank() == 2 ? embeddings.dim(0) : 0; }
  std::int64_t dim() const { return embeddings.rank() == 2 ? embeddings.dim(1) : 0; }
};

/// Prompt template used for every category.
std::string class_prompt(const std::string& class_name);

/// Loads embeddings from `path` when given, otherwise derives unit-norm
/// pseudo-embeddings from a hash of (prompt, seed). Throws DataError when the
/// file disagrees with `class_names` or `text_dim`.
ClassEmbeddingSet text_provider_load(const std::optional<std::filesystem::path>& path,
                                     const std::vector<std::string>& class_names, std::uint64_t seed,
                                     std::int64_t text_dim);

/// Writes the textual embedding format read by text_provider_load.
void write_embedding_file(const std::filesystem::path& path, const ClassEmbeddingSet& set);

struct TTGConfig {
  int num_experts = 6;
  std::int64_t fusion_dim = 256;
  int decoder_layers = 6;
  int attention_heads = 4;
  bool asi_enabled = true;
  std::int64_t text_dim = 512;
  /// Side of the learned positional-embedding grid; resized bilinearly to
  /// the actual stage-4 grid.
  std::int64_t pos_grid = 8;

  void validate() const;
  bool operator==(const TTGConfig&) const = default;
};

/// Text-guided transition generator. Maps class embeddings into the fusion
/// space (soft mixture of experts, or a single linear map when ASI is off)
/// and lets stage-4 visual tokens attend to them to produce transition
/// features with the visual token shape.
class TransitionGenerator {
 public:
  struct Expert {
    nn::Linear in, out;  // D_t -> D -> D with GELU in between
  };

  TransitionGenerator() = default;
  TransitionGenerator(const TTGConfig& config, std::int64_t visual_dim, std::uint64_t seed);

  const TTGConfig& config() const { return config_; }
  std::int64_t visual_dim() const { return visual_dim_; }

  /// Z [K, D] through whichever integration path is configured.
  ag::Var semantic_embedding(const ag::Var& t_class) const;
  /// alpha = softmax(LN(T) W_alpha), [K, M].
  ag::Var expert_weights(const ag::Var& t_class) const;
  ag::Var adaptive_semantic_integration(const ag::Var& t_class) const;
  ag::Var bypass_projection(const ag::Var& t_class) const;
  /// tokens [B, N, D_v] on an h x w grid -> transition features [B, N, D_v].
  ag::Var cross_modal_fusion(const ag::Var& tokens, const ag::Var& z, std::int64_t h, std::int64_t w) const;

  nn::ParamList parameters() const;

  // Exposed for tests and ablations.
  nn::LayerNorm text_norm;
  nn::Linear gate;  // D_t -> M, no bias
  std::vector<Expert> experts;
  nn::Linear bypass;
  nn::Linear visual_in;   // P_v: D_v -> D
  ag::Var pos_embedding;  // [pos_grid^2, D]
  struct Layer {
    nn::MultiHeadAttention self_attn, cross_attn;
  };
  std::vector<Layer> layers;
  nn::Linear visual_out;  // D -> D_v

 private:
  TTGConfig config_;
  std::int64_t visual_dim_ = 0;
  bool built_ = false;
};

}  // namespace tcd
