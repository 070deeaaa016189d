// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "tcd/errors.hpp"
#include "tcd/ops.hpp"
#include "tcd/ttg.hpp"
#include "test_util.hpp"

namespace tcd {
namespace {

using testing::gradient_error;
using testing::random_tensor;

TTGConfig tiny_config() {
  TTGConfig c;
  c.num_experts = 2;
  c.fusion_dim = 4;
  c.decoder_layers = 1;
  c.attention_heads = 2;
  c.text_dim = 4;
  c.pos_grid = 2;
  return c;
}

std::vector<std::string> names(int k) {
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back("class" + std::to_string(i));
  return out;
}

TEST(TextProvider, SyntheticIsDeterministicAndUnitNorm) {
  const auto a = text_provider_load(std::nullopt, names(6), 7, 512);
  const auto b = text_provider_load(std::nullopt, names(6), 7, 512);
  const auto c = text_provider_load(std::nullopt, names(6), 8, 512);
  EXPECT_EQ(a.embeddings.shape(), (Shape{6, 512}));
  EXPECT_EQ(a.source, EmbeddingSource::SeededSynthetic);
  EXPECT_EQ(a.embeddings, b.embeddings);
  EXPECT_FALSE(a.embeddings == c.embeddings);
  for (int r = 0; r < 6; ++r) {
    double n = 0.0;
    for (int d = 0; d < 512; ++d) n += a.embeddings[r * 512 + d] * a.embeddings[r * 512 + d];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  }
}

TEST(TextProvider, RowDependsOnlyOnItsName) {
  const auto a = text_provider_load(std::nullopt, {"water", "tree"}, 3, 16);
  const auto b = text_provider_load(std::nullopt, {"road", "tree"}, 3, 16);
  for (int d = 0; d < 16; ++d) EXPECT_EQ(a.embeddings[16 + d], b.embeddings[16 + d]);
  EXPECT_EQ(class_prompt("tree"), "a photo of tree");
}

TEST(TextProvider, FileRoundTripAndValidation) {
  const auto dir = std::filesystem::temp_directory_path() / "tcd_text_provider_test";
  std::filesystem::create_directories(dir);
  const auto set = text_provider_load(std::nullopt, names(5), 1, 8);
  write_embedding_file(dir / "five.txt", set);

  const auto back = text_provider_load(dir / "five.txt", names(5), 0, 8);
  EXPECT_EQ(back.source, EmbeddingSource::FileImport);
  EXPECT_LT(max_abs_diff(back.embeddings, set.embeddings), 1e-15);

  try {
    text_provider_load(dir / "five.txt", names(6), 0, 8);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("6"), std::string::npos) << msg;
    EXPECT_NE(msg.find("5"), std::string::npos) << msg;
  }
  EXPECT_THROW(text_provider_load(dir / "five.txt", names(5), 0, 16), DataError);
  auto renamed = names(5);
  renamed[2] = "other";
  EXPECT_THROW(text_provider_load(dir / "five.txt", renamed, 0, 8), DataError);
  std::filesystem::remove_all(dir);
}

TEST(TTGConfig, Validation) {
  TTGConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.num_experts = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.attention_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TransitionGenerator, GateRowsSumToOne) {
  TTGConfig c = tiny_config();
  c.num_experts = 5;
  TransitionGenerator g(c, 6, 1);
  Rng rng(1);
  const Tensor alpha = g.expert_weights(ag::constant(random_tensor({3, 4}, rng, 3.0))).value();
  ASSERT_EQ(alpha.shape(), (Shape{3, 5}));
  for (int r = 0; r < 3; ++r) {
    double s = 0.0;
    for (int m = 0; m < 5; ++m) s += alpha[r * 5 + m];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(TransitionGenerator, SingleExpertIsExact) {
  TTGConfig c = tiny_config();
  c.num_experts = 1;
  TransitionGenerator g(c, 6, 2);
  Rng rng(2);
  const ag::Var t = ag::constant(random_tensor({3, 4}, rng));
  const Tensor alpha = g.expert_weights(t).value();
  for (double a : alpha.data()) EXPECT_EQ(a, 1.0);
  const auto& e = g.experts[0];
  EXPECT_EQ(g.adaptive_semantic_integration(t).value(), e.out(ag::gelu(e.in(t))).value());
}

TEST(TransitionGenerator, IdenticalExpertsIgnoreGate) {
  TransitionGenerator g(tiny_config(), 6, 3);
  g.experts[1].in.weight = ag::Var(g.experts[0].in.weight.value(), true);
  g.experts[1].in.bias = ag::Var(g.experts[0].in.bias.value(), true);
  g.experts[1].out.weight = ag::Var(g.experts[0].out.weight.value(), true);
  g.experts[1].out.bias = ag::Var(g.experts[0].out.bias.value(), true);
  Rng rng(3);
  const ag::Var t = ag::constant(random_tensor({3, 4}, rng));
  const auto& e = g.experts[0];
  EXPECT_LT(max_abs_diff(g.adaptive_semantic_integration(t).value(), e.out(ag::gelu(e.in(t))).value()), 1e-12);
}

TEST(TransitionGenerator, MixtureIsConvex) {
  TTGConfig c = tiny_config();
  c.num_experts = 4;
  TransitionGenerator g(c, 6, 4);
  Rng rng(4);
  const ag::Var t = ag::constant(random_tensor({5, 4}, rng));
  const Tensor z = g.adaptive_semantic_integration(t).value();
  std::vector<Tensor> outs;
  for (const auto& e : g.experts) outs.push_back(e.out(ag::gelu(e.in(t))).value());
  for (std::int64_t i = 0; i < z.size(); ++i) {
    double lo = outs[0][i], hi = outs[0][i];
    for (const auto& o : outs) {
      lo = std::min(lo, o[i]);
      hi = std::max(hi, o[i]);
    }
    EXPECT_GE(z[i], lo - 1e-12);
    EXPECT_LE(z[i], hi + 1e-12);
  }
}

TEST(TransitionGenerator, IdentityBypass) {
  TTGConfig c = tiny_config();
  c.asi_enabled = false;
  TransitionGenerator g(c, 6, 5);
  Tensor eye({4, 4});
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  g.bypass.weight = ag::Var(eye, true);
  g.bypass.bias = ag::Var(Tensor({4}), true);
  Rng rng(5);
  const Tensor t = random_tensor({3, 4}, rng);
  EXPECT_EQ(g.bypass_projection(ag::constant(t)).value(), t);
  EXPECT_EQ(g.semantic_embedding(ag::constant(t)).value(), t);
}

TEST(TransitionGenerator, AsiAddsParametersNotShapes) {
  TTGConfig on = tiny_config();
  TTGConfig off = on;
  off.asi_enabled = false;
  TransitionGenerator a(on, 6, 6), b(off, 6, 6);
  EXPECT_GT(nn::count_scalars(a.parameters()), nn::count_scalars(b.parameters()));
  Rng rng(6);
  const ag::Var t = ag::constant(random_tensor({3, 4}, rng));
  const ag::Var tokens = ag::constant(random_tensor({2, 4, 6}, rng));
  EXPECT_EQ(a.semantic_embedding(t).shape(), b.semantic_embedding(t).shape());
  EXPECT_EQ(a.cross_modal_fusion(tokens, a.semantic_embedding(t), 2, 2).shape(),
            b.cross_modal_fusion(tokens, b.semantic_embedding(t), 2, 2).shape());
}

TEST(TransitionGenerator, FusionKeepsTokenShape) {
  TransitionGenerator g(tiny_config(), 6, 7);
  Rng rng(7);
  const ag::Var z = g.semantic_embedding(ag::constant(random_tensor({3, 4}, rng)));
  for (std::int64_t side : {2, 4, 8}) {
    const ag::Var tokens = ag::constant(random_tensor({2, side * side, 6}, rng));
    EXPECT_EQ(g.cross_modal_fusion(tokens, z, side, side).shape(), tokens.shape());
  }
  EXPECT_THROW(g.cross_modal_fusion(ag::constant(Tensor({1, 0, 6})), z, 0, 0), InputError);
}

TEST(TransitionGenerator, EmptyStackIsTwoProjections) {
  TTGConfig c = tiny_config();
  c.decoder_layers = 0;
  TransitionGenerator g(c, 6, 8);
  g.pos_embedding = ag::Var(Tensor(g.pos_embedding.shape()), true);
  Rng rng(8);
  const ag::Var tokens = ag::constant(random_tensor({1, 4, 6}, rng));
  const ag::Var z = g.semantic_embedding(ag::constant(random_tensor({3, 4}, rng)));
  EXPECT_EQ(g.cross_modal_fusion(tokens, z, 2, 2).value(), g.visual_out(g.visual_in(tokens)).value());
}

TEST(TransitionGenerator, ClassOrderDoesNotMatter) {
  TransitionGenerator g(tiny_config(), 6, 9);
  Rng rng(9);
  const Tensor z = random_tensor({3, 4}, rng);
  Tensor zp({3, 4});
  const int perm[3] = {2, 0, 1};
  for (int r = 0; r < 3; ++r)
    for (int d = 0; d < 4; ++d) zp[r * 4 + d] = z[perm[r] * 4 + d];
  const ag::Var tokens = ag::constant(random_tensor({2, 4, 6}, rng));
  EXPECT_LT(max_abs_diff(g.cross_modal_fusion(tokens, ag::constant(z), 2, 2).value(),
                         g.cross_modal_fusion(tokens, ag::constant(zp), 2, 2).value()),
            1e-12);
}

TEST(TransitionGenerator, GradientsMatchFiniteDifferences) {
  const TransitionGenerator base(tiny_config(), 4, 10);
  Rng rng(10);
  const Tensor text = random_tensor({3, 4}, rng);
  const Tensor tokens = random_tensor({1, 4, 4}, rng);
  Rng proj_rng(11);
  const Tensor proj = random_tensor({1, 4, 4}, proj_rng);
  auto f = [&](const std::vector<ag::Var>& v) {
    TransitionGenerator g = base;
    g.experts[0].in.weight = v[1];
    g.experts[1].out.weight = v[2];
    const ag::Var z = g.semantic_embedding(ag::constant(text));
    return ag::sum(ag::mul(g.cross_modal_fusion(v[0], z, 2, 2), ag::constant(proj)));
  };
  const double err = gradient_error(
      f, {tokens, base.experts[0].in.weight.value(), base.experts[1].out.weight.value()});
  EXPECT_LT(err, 1e-3);
}

}  // namespace
}  // namespace tcd
