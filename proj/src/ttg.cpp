// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/ttg.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tcd/errors.hpp"
#include "tcd/ops.hpp"
#include "tcd/rng.hpp"

namespace tcd {

std::string class_prompt(const std::string& class_name) { return "a photo of " + class_name; }

namespace {

constexpr const char* kEmbeddingMagic = "TCD-EMBEDDINGS";

ClassEmbeddingSet read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kEmbeddingMagic || version != 1) {
    throw DataError("embedding file " + path.string() + " has no '" + kEmbeddingMagic + " 1' header");
  }
  std::int64_t k = 0, d = 0;
  if (!(in >> k >> d) || k < 1 || d < 1) throw DataError("embedding file " + path.string() + ": bad K/D_t header");
  std::string line;
  std::getline(in, line);
  ClassEmbeddingSet set;
  set.source = EmbeddingSource::FileImport;
  for (std::int64_t i = 0; i < k; ++i) {
    if (!std::getline(in, line)) throw DataError("embedding file " + path.string() + ": missing class name " + std::to_string(i));
    set.class_names.push_back(line);
  }
  set.embeddings = Tensor({k, d});
  for (std::int64_t i = 0; i < k * d; ++i) {
    if (!(in >> set.embeddings[i])) {
      throw DataError("embedding file " + path.string() + ": expected " + std::to_string(k * d) + " values, found " +
                      std::to_string(i));
    }
  }
  if (!all_finite(set.embeddings)) throw DataError("embedding file " + path.string() + " contains non-finite values");
  return set;
}

}  // namespace

ClassEmbeddingSet text_provider_load(const std::optional<std::filesystem::path>& path,
                                     const std::vector<std::string>& class_names, std::uint64_t seed,
                                     std::int64_t text_dim) {
  const auto k = static_cast<std::int64_t>(class_names.size());
  if (k == 0) throw ConfigError("text provider: no class names");
  if (text_dim < 1) throw ConfigError("text provider: text_dim must be >= 1");
  if (path) {
    ClassEmbeddingSet set = read_embedding_file(*path);
    if (set.num_classes() != k || set.dim() != text_dim) {
      throw DataError("embedding file " + path->string() + ": expected " + std::to_string(k) + " rows x " +
                      std::to_string(text_dim) + " dims, found " + std::to_string(set.num_classes()) + " rows x " +
                      std::to_string(set.dim()) + " dims");
    }
    for (std::int64_t i = 0; i < k; ++i) {
      if (set.class_names[static_cast<std::size_t>(i)] != class_names[static_cast<std::size_t>(i)]) {
        throw DataError("embedding file " + path->string() + ": row " + std::to_string(i) + " is '" +
                        set.class_names[static_cast<std::size_t>(i)] + "', expected '" +
                        class_names[static_cast<std::size_t>(i)] + "'");
      }
    }
    return set;
  }

  ClassEmbeddingSet set;
  set.source = EmbeddingSource::SeededSynthetic;
  set.class_names = class_names;
  set.embeddings = Tensor({k, text_dim});
  for (std::int64_t i = 0; i < k; ++i) {
    Rng rng(mix_seed(seed, fnv1a(class_prompt(class_names[static_cast<std::size_t>(i)]))));
    double norm = 0.0;
    double* row = set.embeddings.ptr() + i * text_dim;
    for (std::int64_t j = 0; j < text_dim; ++j) {
      row[j] = rng.normal();
      norm += row[j] * row[j];
    }
    norm = std::sqrt(norm);
    for (std::int64_t j = 0; j < text_dim; ++j) row[j] /= norm;
  }
  return set;
}

void write_embedding_file(const std::filesystem::path& path, const ClassEmbeddingSet& set) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding file " + path.string());
  out << kEmbeddingMagic << " 1\n" << set.num_classes() << ' ' << set.dim() << '\n';
  for (const auto& n : set.class_names) out << n << '\n';
  out << std::setprecision(17);
  for (std::int64_t i = 0; i < set.num_classes(); ++i) {
    for (std::int64_t j = 0; j < set.dim(); ++j) out << (j ? " " : "") << set.embeddings[i * set.dim() + j];
    out << '\n';
  }
}

void TTGConfig::validate() const {
  if (num_experts < 1) throw ConfigError("ttg.num_experts must be >= 1");
  if (fusion_dim < 1) throw ConfigError("ttg.fusion_dim must be >= 1");
  if (decoder_layers < 0) throw ConfigError("ttg.decoder_layers must be >= 0");
  if (attention_heads < 1 || fusion_dim % attention_heads != 0) {
    throw ConfigError("ttg.fusion_dim must be divisible by ttg.attention_heads");
  }
  if (text_dim < 1) throw ConfigError("ttg.text_dim must be >= 1");
  if (pos_grid < 1) throw ConfigError("ttg.pos_grid must be >= 1");
}

TransitionGenerator::TransitionGenerator(const TTGConfig& config, std::int64_t visual_dim, std::uint64_t seed)
    : config_(config), visual_dim_(visual_dim), built_(true) {
  config_.validate();
  if (visual_dim < 1) throw ConfigError("ttg: visual dimension must be >= 1");
  Rng rng(mix_seed(seed, fnv1a("ttg")));
  const std::int64_t dt = config_.text_dim;
  const std::int64_t d = config_.fusion_dim;
  if (config_.asi_enabled) {
    text_norm = nn::LayerNorm(dt);
    gate = nn::Linear(dt, config_.num_experts, rng, false);
    for (int m = 0; m < config_.num_experts; ++m) experts.push_back({nn::Linear(dt, d, rng), nn::Linear(d, d, rng)});
  } else {
    bypass = nn::Linear(dt, d, rng);
  }
  visual_in = nn::Linear(visual_dim, d, rng);
  Tensor pos({config_.pos_grid * config_.pos_grid, d});
  for (auto& v : pos.data()) v = 0.02 * rng.normal();
  pos_embedding = nn::make_param(std::move(pos));
  for (int l = 0; l < config_.decoder_layers; ++l) {
    layers.push_back({nn::MultiHeadAttention(d, config_.attention_heads, rng),
                      nn::MultiHeadAttention(d, config_.attention_heads, rng)});
  }
  visual_out = nn::Linear(d, visual_dim, rng);
}

ag::Var TransitionGenerator::expert_weights(const ag::Var& t_class) const {
  if (!config_.asi_enabled) throw ConfigError("expert weights requested with ASI disabled");
  return ag::softmax_last(gate(text_norm(t_class)));
}

ag::Var TransitionGenerator::adaptive_semantic_integration(const ag::Var& t_class) const {
  if (experts.empty()) throw ConfigError("adaptive semantic integration needs at least one expert");
  ag::Var alpha = expert_weights(t_class);
  std::vector<ag::Var> outs;
  outs.reserve(experts.size());
  for (const auto& e : experts) outs.push_back(e.out(ag::gelu(e.in(t_class))));
  return ag::mix_experts(alpha, outs);
}

ag::Var TransitionGenerator::bypass_projection(const ag::Var& t_class) const {
  if (config_.asi_enabled) throw ConfigError("bypass projection requested with ASI enabled");
  return bypass(t_class);
}

ag::Var TransitionGenerator::semantic_embedding(const ag::Var& t_class) const {
  if (!built_) throw ConfigError("transition generator is not built");
  if (t_class.value().rank() != 2 || t_class.dim(1) != config_.text_dim) {
    throw ShapeError("class embeddings " + to_string(t_class.shape()) + " do not match text_dim " +
                     std::to_string(config_.text_dim));
  }
  return config_.asi_enabled ? adaptive_semantic_integration(t_class) : bypass_projection(t_class);
}

ag::Var TransitionGenerator::cross_modal_fusion(const ag::Var& tokens, const ag::Var& z, std::int64_t h,
                                                std::int64_t w) const {
  if (tokens.value().rank() != 3 || tokens.dim(2) != visual_dim_) {
    throw ShapeError("cross_modal_fusion: tokens " + to_string(tokens.shape()) + " vs visual dim " +
                     std::to_string(visual_dim_));
  }
  if (tokens.dim(1) == 0) throw InputError("cross_modal_fusion: token count is 0");
  if (tokens.dim(1) != h * w) throw ShapeError("cross_modal_fusion: token count does not match grid");
  const std::int64_t b = tokens.dim(0);
  const std::int64_t d = config_.fusion_dim;
  const std::int64_t g = config_.pos_grid;

  ag::Var pos = ag::tokens_to_nchw(ag::reshape(pos_embedding, {1, g * g, d}), g, g);
  pos = ag::reshape(ag::nchw_to_tokens(ag::upsample_bilinear(pos, h, w)), {h * w, d});
  ag::Var v = ag::add_broadcast(visual_in(tokens), pos);
  if (!layers.empty()) {
    ag::Var ctx = ag::repeat_batch(z, b);
    for (const auto& layer : layers) v = ag::add(layer.self_attn(v, v), layer.cross_attn(v, ctx));
  }
  return visual_out(v);
}

nn::ParamList TransitionGenerator::parameters() const {
  nn::ParamList out;
  if (!built_) return out;
  if (config_.asi_enabled) {
    text_norm.collect(out, "ttg.asi.norm.");
    gate.collect(out, "ttg.asi.gate.");
    for (std::size_t m = 0; m < experts.size(); ++m) {
      experts[m].in.collect(out, "ttg.asi.expert" + std::to_string(m) + ".in.");
      experts[m].out.collect(out, "ttg.asi.expert" + std::to_string(m) + ".out.");
    }
  } else {
    bypass.collect(out, "ttg.bypass.");
  }
  visual_in.collect(out, "ttg.visual_in.");
  out.push_back({"ttg.pos_embedding", pos_embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].self_attn.collect(out, "ttg.layer" + std::to_string(l) + ".self.");
    layers[l].cross_attn.collect(out, "ttg.layer" + std::to_string(l) + ".cross.");
  }
  visual_out.collect(out, "ttg.visual_out.");
  return out;
}

}  // namespace tcd
