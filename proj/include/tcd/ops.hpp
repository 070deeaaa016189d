// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "tcd/autograd.hpp"

// Differentiable tensor operations. Feature maps are NCHW; token grids are
// [B, N, D] with tokens in row-major spatial order.
namespace tcd::ag {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var abs(const Var& a);
Var gelu(const Var& a);
/// a + b where b's shape equals the trailing dimensions of a.
Var add_broadcast(const Var& a, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);

/// x [..., in] times weight [in, out] plus optional bias [out].
Var linear(const Var& x, const Var& weight, const Var& bias);

/// x [B, Cin, H, W], weight [Cout, Cin, k, k], optional bias [Cout].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

/// Bilinear resize with half-pixel centers (align_corners = false).
Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w);

/// Concatenation along the channel axis of NCHW maps.
Var concat_channels(const std::vector<Var>& xs);

/// Normalizes over the last axis.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Per-sample normalization over channel groups of an NCHW map.
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps = 1e-5);

Var softmax_last(const Var& x);

/// Multi-head scaled dot-product attention on already-projected inputs:
/// q [B, Nq, D], k and v [B, Nk, D]; heads split D evenly.
Var attention(const Var& q, const Var& k, const Var& v, int heads);

Var nchw_to_tokens(const Var& x);
Var tokens_to_nchw(const Var& x, std::int64_t h, std::int64_t w);

/// [N, D] -> [B, N, D]; the backward pass sums over the copies.
Var repeat_batch(const Var& x, std::int64_t batch);

/// Soft mixture: out[k, :] = sum_m alpha[k, m] * experts[m][k, :].
Var mix_experts(const Var& alpha, const std::vector<Var>& experts);

}  // namespace tcd::ag
