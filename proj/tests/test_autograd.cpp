// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "tcd/errors.hpp"
#include "tcd/ops.hpp"
#include "test_util.hpp"

namespace tcd {
namespace {

using testing::gradient_error;
using testing::random_tensor;
using Fn = std::function<ag::Var(const std::vector<ag::Var>&)>;

constexpr double kTol = 1e-6;

// Scalarizes an op output with a fixed random projection.
Fn project(std::function<ag::Var(const std::vector<ag::Var>&)> op, std::uint64_t seed = 99) {
  return [op, seed](const std::vector<ag::Var>& in) {
    ag::Var y = op(in);
    Rng rng(seed);
    return ag::sum(ag::mul(y, ag::constant(random_tensor(y.shape(), rng))));
  };
}

TEST(Autograd, ScalarBackwardReachesLeaves) {
  ag::Var x(Tensor({3}, 2.0), true);
  ag::Var y = ag::sum(ag::mul(x, x));
  y.backward();
  ASSERT_FALSE(x.grad().empty());
  for (double g : x.grad().data()) EXPECT_EQ(g, 4.0);
}

TEST(Autograd, ReusedNodeAccumulates) {
  ag::Var x(Tensor({2}, 1.5), true);
  ag::Var y = ag::sum(ag::add(ag::scale(x, 3.0), x));
  y.backward();
  for (double g : x.grad().data()) EXPECT_EQ(g, 4.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  ag::Var x(Tensor({2}, 1.0), true);
  ag::NoGradGuard guard;
  ag::Var y = ag::sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, ConstantsNeedNoGradient) {
  ag::Var y = ag::sum(ag::constant(Tensor({4}, 1.0)));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(y.item(), 4.0);
}

TEST(Autograd, BackwardOnNonScalarNeedsSeed) {
  ag::Var x(Tensor({2}, 1.0), true);
  EXPECT_THROW(ag::scale(x, 2.0).backward(), ShapeError);
}

TEST(OpsGradient, Elementwise) {
  Rng rng(1);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::add(v[0], v[1]); }), {a, b}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::sub(v[0], v[1]); }), {a, b}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::mul(v[0], v[1]); }), {a, b}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::scale(v[0], -0.7); }), {a}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::abs(v[0]); }), {a}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::gelu(v[0]); }), {a}), kTol);
  EXPECT_LT(gradient_error([](auto& v) { return ag::mean(ag::mul(v[0], v[0])); }, {a}), kTol);
}

TEST(OpsGradient, BroadcastAndReshape) {
  Rng rng(2);
  const Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 4}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::add_broadcast(v[0], v[1]); }), {a, b}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::reshape(v[0], {6, 4}); }), {a}), kTol);
}

TEST(OpsGradient, Linear) {
  Rng rng(3);
  const Tensor x = random_tensor({2, 3, 4}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({5}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::linear(v[0], v[1], v[2]); }), {x, w, b}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::linear(v[0], v[1], ag::Var()); }), {x, w}), kTol);
}

TEST(OpsGradient, Conv2d) {
  Rng rng(4);
  const Tensor x = random_tensor({2, 3, 6, 6}, rng);
  const Tensor w3 = random_tensor({4, 3, 3, 3}, rng), w1 = random_tensor({4, 3, 1, 1}, rng);
  const Tensor b = random_tensor({4}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::conv2d(v[0], v[1], v[2], 1, 1); }), {x, w3, b}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::conv2d(v[0], v[1], v[2], 2, 1); }), {x, w3, b}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::conv2d(v[0], v[1], v[2], 1, 0); }), {x, w1, b}), kTol);
}

TEST(OpsGradient, Upsample) {
  Rng rng(5);
  const Tensor x = random_tensor({1, 2, 3, 4}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::upsample_bilinear(v[0], 6, 8); }), {x}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::upsample_bilinear(v[0], 5, 3); }), {x}), kTol);
}

TEST(OpsGradient, ConcatAndLayout) {
  Rng rng(6);
  const Tensor a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 1, 3, 3}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::concat_channels({v[0], v[1]}); }), {a, b}), kTol);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::nchw_to_tokens(v[0]); }), {a}), kTol);
  const Tensor t = random_tensor({2, 6, 3}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::tokens_to_nchw(v[0], 2, 3); }), {t}), kTol);
  const Tensor z = random_tensor({4, 3}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::repeat_batch(v[0], 3); }), {z}), kTol);
}

TEST(OpsGradient, Normalization) {
  Rng rng(7);
  const Tensor x = random_tensor({2, 3, 5}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::layer_norm(v[0], v[1], v[2]); }), {x, g, b}), kTol);
  const Tensor m = random_tensor({2, 4, 3, 3}, rng), gg = random_tensor({4}, rng), gb = random_tensor({4}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::group_norm(v[0], 2, v[1], v[2]); }), {m, gg, gb}), kTol);
}

TEST(OpsGradient, SoftmaxAndAttention) {
  Rng rng(8);
  const Tensor x = random_tensor({3, 4}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::softmax_last(v[0]); }), {x}), kTol);
  const Tensor q = random_tensor({2, 3, 4}, rng), k = random_tensor({2, 5, 4}, rng), val = random_tensor({2, 5, 4}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::attention(v[0], v[1], v[2], 2); }), {q, k, val}), kTol);
}

TEST(OpsGradient, MixExperts) {
  Rng rng(9);
  const Tensor alpha = random_tensor({3, 2}, rng), e0 = random_tensor({3, 4}, rng), e1 = random_tensor({3, 4}, rng);
  EXPECT_LT(gradient_error(project([](auto& v) { return ag::mix_experts(v[0], {v[1], v[2]}); }), {alpha, e0, e1}), kTol);
}

TEST(Ops, UpsampleIdentityAndConstant) {
  Rng rng(10);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  EXPECT_EQ(ag::upsample_bilinear(ag::constant(x), 4, 4).value(), x);
  const Tensor c({1, 1, 2, 2}, 3.0);
  const Tensor up = ag::upsample_bilinear(ag::constant(c), 7, 5).value();
  for (double v : up.data()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(11);
  const Tensor p = ag::softmax_last(ag::constant(random_tensor({4, 6}, rng, 5.0))).value();
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += p[r * 6 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, GeluMatchesErfForm) {
  const Tensor x({3}, std::vector<double>{-1.0, 0.0, 2.0});
  const Tensor y = ag::gelu(ag::constant(x)).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0))), 1e-15);
}

TEST(Ops, ShapeErrors) {
  EXPECT_THROW(ag::add(ag::constant(Tensor({2})), ag::constant(Tensor({3}))), ShapeError);
  EXPECT_THROW(ag::linear(ag::constant(Tensor({2, 3})), ag::constant(Tensor({4, 2})), ag::Var()), ShapeError);
}

}  // namespace
}  // namespace tcd
