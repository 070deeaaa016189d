// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "tcd/autograd.hpp"
#include "tcd/rng.hpp"

namespace tcd::nn {

struct NamedParam {
  std::string name;
  ag::Var var;
};
using ParamList = std::vector<NamedParam>;

/// Number of trainable scalars.
std::int64_t count_scalars(const ParamList& params);
ag::Var make_param(Tensor init);

class Linear {
 public:
  Linear() = default;
  /// Xavier-uniform weight, zero bias.
  Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias = true);

  ag::Var operator()(const ag::Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  ag::Var weight;  // [in, out]
  ag::Var bias;    // [out] or undefined
};

class Conv2d {
 public:
  Conv2d() = default;
  /// Kaiming-uniform weight (fan-in), zero bias.
  Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int padding, Rng& rng, bool bias = true);

  ag::Var operator()(const ag::Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  ag::Var weight;  // [out, in, k, k]
  ag::Var bias;
  int stride = 1;
  int padding = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::int64_t dim);

  ag::Var operator()(const ag::Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  ag::Var gamma, beta;
};

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(int groups, std::int64_t channels);

  ag::Var operator()(const ag::Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  int groups = 1;
  ag::Var gamma, beta;
};

/// Conv -> GroupNorm -> GELU.
class ConvNormAct {
 public:
  ConvNormAct() = default;
  ConvNormAct(std::int64_t in, std::int64_t out, int kernel, int stride, Rng& rng);

  ag::Var operator()(const ag::Var& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Conv2d conv;
  GroupNorm norm;
};

/// Largest divisor of `channels` that is at most 8.
int default_groups(std::int64_t channels);

/// Multi-head attention with learned input and output projections.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::int64_t dim, int heads, Rng& rng);

  /// query [B, Nq, D]; context [B, Nk, D].
  ag::Var operator()(const ag::Var& query, const ag::Var& context) const;
  void collect(ParamList& out, const std::string& prefix) const;

  int heads = 1;
  Linear q, k, v, o;
};

}  // namespace tcd::nn
