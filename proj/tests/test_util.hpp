// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tcd/autograd.hpp"
#include "tcd/rng.hpp"
#include "tcd/tensor.hpp"

namespace tcd::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// per input, with central differences of step `h`. Returns the worst input.
inline double gradient_error(const std::function<ag::Var(const std::vector<ag::Var>&)>& f,
                             const std::vector<Tensor>& inputs, double h = 1e-5) {
  std::vector<ag::Var> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  ag::Var out = f(vars);
  out.backward();

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor numeric(inputs[i].shape());
    for (std::int64_t k = 0; k < inputs[i].size(); ++k) {
      auto eval = [&](double delta) {
        std::vector<ag::Var> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == i) t[k] += delta;
          probe.push_back(ag::constant(t));
        }
        return f(probe).item();
      };
      numeric[k] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    const Tensor& analytic = vars[i].grad().empty() ? Tensor(inputs[i].shape()) : vars[i].grad();
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::int64_t k = 0; k < numeric.size(); ++k) {
      diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
      na += analytic[k] * analytic[k];
      nn += numeric[k] * numeric[k];
    }
    const double denom = std::max(std::sqrt(std::max(na, nn)), 1e-12);
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace tcd::testing
