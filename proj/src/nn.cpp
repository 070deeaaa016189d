// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/nn.hpp"

#include <cmath>

#include "tcd/errors.hpp"
#include "tcd/ops.hpp"

namespace tcd::nn {

std::int64_t count_scalars(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

ag::Var make_param(Tensor init) { return ag::Var(std::move(init), true); }

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void push(ParamList& out, const std::string& prefix, const char* name, const ag::Var& v) {
  if (v.defined()) out.push_back({prefix + name, v});
}

}  // namespace

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  weight = make_param(uniform_tensor({in, out}, bound, rng));
  if (bias) this->bias = make_param(Tensor({out}, 0.0));
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  push(out, prefix, "weight", weight);
  push(out, prefix, "bias", bias);
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int kernel, int stride, int padding, Rng& rng, bool bias)
    : stride(stride), padding(padding) {
  const double fan_in = static_cast<double>(in * kernel * kernel);
  weight = make_param(uniform_tensor({out, in, kernel, kernel}, std::sqrt(6.0 / fan_in), rng));
  if (bias) this->bias = make_param(Tensor({out}, 0.0));
}

ag::Var Conv2d::operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, padding); }

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
  push(out, prefix, "weight", weight);
  push(out, prefix, "bias", bias);
}

LayerNorm::LayerNorm(std::int64_t dim) : gamma(make_param(Tensor({dim}, 1.0))), beta(make_param(Tensor({dim}, 0.0))) {}

ag::Var LayerNorm::operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  push(out, prefix, "gamma", gamma);
  push(out, prefix, "beta", beta);
}

GroupNorm::GroupNorm(int groups, std::int64_t channels)
    : groups(groups), gamma(make_param(Tensor({channels}, 1.0))), beta(make_param(Tensor({channels}, 0.0))) {}

ag::Var GroupNorm::operator()(const ag::Var& x) const { return ag::group_norm(x, groups, gamma, beta); }

void GroupNorm::collect(ParamList& out, const std::string& prefix) const {
  push(out, prefix, "gamma", gamma);
  push(out, prefix, "beta", beta);
}

int default_groups(std::int64_t channels) {
  for (int g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

ConvNormAct::ConvNormAct(std::int64_t in, std::int64_t out, int kernel, int stride, Rng& rng)
    : conv(in, out, kernel, stride, kernel / 2, rng), norm(default_groups(out), out) {}

ag::Var ConvNormAct::operator()(const ag::Var& x) const { return ag::gelu(norm(conv(x))); }

void ConvNormAct::collect(ParamList& out, const std::string& prefix) const {
  conv.collect(out, prefix + "conv.");
  norm.collect(out, prefix + "norm.");
}

MultiHeadAttention::MultiHeadAttention(std::int64_t dim, int heads, Rng& rng)
    : heads(heads), q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), o(dim, dim, rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
}

ag::Var MultiHeadAttention::operator()(const ag::Var& query, const ag::Var& context) const {
  return o(ag::attention(q(query), k(context), v(context), heads));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
  q.collect(out, prefix + "q.");
  k.collect(out, prefix + "k.");
  v.collect(out, prefix + "v.");
  o.collect(out, prefix + "o.");
}

}  // namespace tcd::nn
