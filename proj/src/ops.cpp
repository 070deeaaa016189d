// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "tcd/errors.hpp"

namespace tcd::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t r, const char* op) {
  if (a.value().rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + to_string(a.shape()));
  }
}

void accumulate(Tensor* g, const Tensor& src, double s = 1.0) {
  if (!g) return;
  double* d = g->ptr();
  const double* p = src.ptr();
  for (std::int64_t i = 0; i < src.size(); ++i) d[i] += s * p[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  const double* pb = b.value().ptr();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    accumulate(n.parent_grad(0), n.grad);
    accumulate(n.parent_grad(1), n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  const double* pb = b.value().ptr();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    accumulate(n.parent_grad(0), n.grad);
    accumulate(n.parent_grad(1), n.grad, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  const double* pb = b.value().ptr();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return make_result(std::move(out), {a, b}, [](Node& n) {
    const Tensor& va = n.parent_value(0);
    const Tensor& vb = n.parent_value(1);
    if (Tensor* ga = n.parent_grad(0)) {
      for (std::int64_t i = 0; i < ga->size(); ++i) (*ga)[i] += n.grad[i] * vb[i];
    }
    if (Tensor* gb = n.parent_grad(1)) {
      for (std::int64_t i = 0; i < gb->size(); ++i) (*gb)[i] += n.grad[i] * va[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& n) { accumulate(n.parent_grad(0), n.grad, s); });
}

Var abs(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::abs(v);
  return make_result(std::move(out), {a}, [](Node& n) {
    Tensor* g = n.parent_grad(0);
    const Tensor& x = n.parent_value(0);
    for (std::int64_t i = 0; i < x.size(); ++i) {
      // Subgradient 0 at the kink keeps |x - x| exactly stationary.
      const double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
      (*g)[i] += s * n.grad[i];
    }
  });
}

Var gelu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return make_result(std::move(out), {a}, [](Node& n) {
    Tensor* g = n.parent_grad(0);
    const Tensor& x = n.parent_value(0);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::int64_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*g)[i] += n.grad[i] * (cdf + v * pdf);
    }
  });
}

Var add_broadcast(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    throw ShapeError("add_broadcast: " + to_string(sb) + " is not a suffix of " + to_string(sa));
  }
  const std::int64_t inner = b.value().size();
  Tensor out = a.value();
  const double* pb = b.value().ptr();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] += pb[i % inner];
  return make_result(std::move(out), {a, b}, [inner](Node& n) {
    accumulate(n.parent_grad(0), n.grad);
    if (Tensor* gb = n.parent_grad(1)) {
      for (std::int64_t i = 0; i < n.grad.size(); ++i) (*gb)[i % inner] += n.grad[i];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_result(Tensor({}, s), {a}, [](Node& n) {
    Tensor* g = n.parent_grad(0);
    const double d = n.grad[0];
    for (auto& v : g->data()) v += d;
  });
}

Var mean(const Var& a) {
  const auto count = a.value().size();
  if (count == 0) throw InputError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(count));
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_result(std::move(out), {a}, [](Node& n) { accumulate(n.parent_grad(0), n.grad); });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(weight, 2, "linear weight");
  const std::int64_t in = weight.dim(0);
  const std::int64_t out_dim = weight.dim(1);
  if (x.value().rank() < 1 || x.dim(-1) != in) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(weight.shape()));
  }
  if (bias.defined() && (bias.value().rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias shape " + to_string(bias.shape()));
  }
  const std::int64_t rows = x.value().size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  MapMat o(out.ptr(), rows, out_dim);
  o.noalias() = CMapMat(x.value().ptr(), rows, in) * CMapMat(weight.value().ptr(), in, out_dim);
  if (bias.defined()) o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().ptr(), out_dim);

  std::vector<Var> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(std::move(out), parents, [rows, in, out_dim, has_bias](Node& n) {
    CMapMat go(n.grad.ptr(), rows, out_dim);
    if (Tensor* gx = n.parent_grad(0)) {
      MapMat(gx->ptr(), rows, in).noalias() += go * CMapMat(n.parent_value(1).ptr(), in, out_dim).transpose();
    }
    if (Tensor* gw = n.parent_grad(1)) {
      MapMat(gw->ptr(), in, out_dim).noalias() += CMapMat(n.parent_value(0).ptr(), rows, in).transpose() * go;
    }
    if (has_bias) {
      if (Tensor* gb = n.parent_grad(2)) {
        Eigen::Map<Eigen::RowVectorXd>(gb->ptr(), out_dim) += go.colwise().sum();
      }
    }
  });
}

namespace {

struct ConvGeom {
  std::int64_t batch, cin, h, w, cout, k, stride, pad, ho, wo;
  std::int64_t col_rows() const { return cin * k * k; }
  std::int64_t col_cols() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* img, const ConvGeom& g, double* cols) {
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * g.col_cols();
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = img + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* img) {
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * g.col_cols();
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wo;
          double* dst = img + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  ConvGeom g{};
  g.batch = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.cin || weight.dim(3) != g.k) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
  }
  if (bias.defined() && (bias.value().rank() != 1 || bias.dim(0) != g.cout)) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()));
  }
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: empty output for input " + to_string(x.shape()));

  Tensor out({g.batch, g.cout, g.ho, g.wo});
  const std::int64_t cr = g.col_rows();
  const std::int64_t cc = g.col_cols();
  std::vector<double> cols(g.pointwise() ? 0 : static_cast<std::size_t>(cr * cc));
  CMapMat wm(weight.value().ptr(), g.cout, cr);
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const double* img = x.value().ptr() + b * g.cin * g.h * g.w;
    const double* colp = img;
    if (!g.pointwise()) {
      im2col(img, g, cols.data());
      colp = cols.data();
    }
    MapMat ob(out.ptr() + b * g.cout * cc, g.cout, cc);
    ob.noalias() = wm * CMapMat(colp, cr, cc);
    if (bias.defined()) ob.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().ptr(), g.cout);
  }

  std::vector<Var> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result(std::move(out), parents, [g, has_bias](Node& n) {
    const std::int64_t cr = g.col_rows();
    const std::int64_t cc = g.col_cols();
    Tensor* gx = n.parent_grad(0);
    Tensor* gw = n.parent_grad(1);
    Tensor* gb = has_bias ? n.parent_grad(2) : nullptr;
    const Tensor& xv = n.parent_value(0);
    CMapMat wm(n.parent_value(1).ptr(), g.cout, cr);
    std::vector<double> cols(g.pointwise() ? 0 : static_cast<std::size_t>(cr * cc));
    std::vector<double> dcols(gx && !g.pointwise() ? static_cast<std::size_t>(cr * cc) : 0);
    for (std::int64_t b = 0; b < g.batch; ++b) {
      CMapMat go(n.grad.ptr() + b * g.cout * cc, g.cout, cc);
      if (gw) {
        const double* img = xv.ptr() + b * g.cin * g.h * g.w;
        const double* colp = img;
        if (!g.pointwise()) {
          im2col(img, g, cols.data());
          colp = cols.data();
        }
        MapMat(gw->ptr(), g.cout, cr).noalias() += go * CMapMat(colp, cr, cc).transpose();
      }
      if (gb) Eigen::Map<Eigen::VectorXd>(gb->ptr(), g.cout) += go.rowwise().sum();
      if (gx) {
        double* gimg = gx->ptr() + b * g.cin * g.h * g.w;
        if (g.pointwise()) {
          MapMat(gimg, cr, cc).noalias() += wm.transpose() * go;
        } else {
          MapMat(dcols.data(), cr, cc).noalias() = wm.transpose() * go;
          col2im_add(dcols.data(), g, gimg);
        }
      }
    }
  });
}

namespace {

struct Interp {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;
};

Interp interp_table(std::int64_t in, std::int64_t out) {
  Interp t;
  t.i0.resize(static_cast<std::size_t>(out));
  t.i1.resize(static_cast<std::size_t>(out));
  t.w1.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min(lo + 1, in - 1);
    t.i0[static_cast<std::size_t>(o)] = lo;
    t.i1[static_cast<std::size_t>(o)] = hi;
    t.w1[static_cast<std::size_t>(o)] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank(x, 4, "upsample_bilinear");
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t h = x.dim(2);
  const std::int64_t w = x.dim(3);
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  const Interp ty = interp_table(h, out_h);
  const Interp tx = interp_table(w, out_w);
  Tensor out({x.dim(0), x.dim(1), out_h, out_w});
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* src = x.value().ptr() + p * h * w;
    double* dst = out.ptr() + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto sy = static_cast<std::size_t>(oy);
      const double wy = ty.w1[sy];
      const double* r0 = src + ty.i0[sy] * w;
      const double* r1 = src + ty.i1[sy] * w;
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto sx = static_cast<std::size_t>(ox);
        const double wx = tx.w1[sx];
        const double top = (1.0 - wx) * r0[tx.i0[sx]] + wx * r0[tx.i1[sx]];
        const double bot = (1.0 - wx) * r1[tx.i0[sx]] + wx * r1[tx.i1[sx]];
        dst[oy * out_w + ox] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return make_result(std::move(out), {x}, [ty, tx, planes, h, w, out_h, out_w](Node& n) {
    Tensor* g = n.parent_grad(0);
    for (std::int64_t p = 0; p < planes; ++p) {
      const double* go = n.grad.ptr() + p * out_h * out_w;
      double* gi = g->ptr() + p * h * w;
      for (std::int64_t oy = 0; oy < out_h; ++oy) {
        const auto sy = static_cast<std::size_t>(oy);
        const double wy = ty.w1[sy];
        double* r0 = gi + ty.i0[sy] * w;
        double* r1 = gi + ty.i1[sy] * w;
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          const auto sx = static_cast<std::size_t>(ox);
          const double wx = tx.w1[sx];
          const double d = go[oy * out_w + ox];
          r0[tx.i0[sx]] += (1.0 - wy) * (1.0 - wx) * d;
          r0[tx.i1[sx]] += (1.0 - wy) * wx * d;
          r1[tx.i0[sx]] += wy * (1.0 - wx) * d;
          r1[tx.i1[sx]] += wy * wx * d;
        }
      }
    }
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw InputError("concat_channels: no inputs");
  for (const auto& x : xs) require_rank(x, 4, "concat_channels");
  const std::int64_t b = xs[0].dim(0);
  const std::int64_t h = xs[0].dim(2);
  const std::int64_t w = xs[0].dim(3);
  std::int64_t c_total = 0;
  std::vector<std::int64_t> cs;
  for (const auto& x : xs) {
    if (x.dim(0) != b || x.dim(2) != h || x.dim(3) != w) {
      throw ShapeError("concat_channels: " + to_string(x.shape()) + " vs " + to_string(xs[0].shape()));
    }
    cs.push_back(x.dim(1));
    c_total += x.dim(1);
  }
  const std::int64_t hw = h * w;
  Tensor out({b, c_total, h, w});
  for (std::int64_t bi = 0; bi < b; ++bi) {
    std::int64_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double* src = xs[i].value().ptr() + bi * cs[i] * hw;
      std::copy(src, src + cs[i] * hw, out.ptr() + (bi * c_total + off) * hw);
      off += cs[i];
    }
  }
  return make_result(std::move(out), xs, [cs, b, c_total, hw](Node& n) {
    for (std::int64_t bi = 0; bi < b; ++bi) {
      std::int64_t off = 0;
      for (std::size_t i = 0; i < cs.size(); ++i) {
        if (Tensor* g = n.parent_grad(i)) {
          const double* src = n.grad.ptr() + (bi * c_total + off) * hw;
          double* dst = g->ptr() + bi * cs[i] * hw;
          for (std::int64_t j = 0; j < cs[i] * hw; ++j) dst[j] += src[j];
        }
        off += cs[i];
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::int64_t d = x.dim(-1);
  if (gamma.value().size() != d || beta.value().size() != d) throw ShapeError("layer_norm: affine size mismatch");
  const std::int64_t rows = x.value().size() / d;
  Tensor out(x.shape());
  std::vector<double> xhat(static_cast<std::size_t>(rows * d));
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  const double* gp = gamma.value().ptr();
  const double* bp = beta.value().ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.value().ptr() + r * d;
    double mu = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mu) * is;
      xhat[static_cast<std::size_t>(r * d + j)] = xh;
      out[r * d + j] = xh * gp[j] + bp[j];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Node& n) {
    Tensor* gx = n.parent_grad(0);
    Tensor* gg = n.parent_grad(1);
    Tensor* gbeta = n.parent_grad(2);
    const double* gp = n.parent_value(1).ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* go = n.grad.ptr() + r * d;
      const double* xh = xhat.data() + r * d;
      double s1 = 0.0, s2 = 0.0;
      for (std::int64_t j = 0; j < d; ++j) {
        const double gxh = go[j] * gp[j];
        s1 += gxh;
        s2 += gxh * xh[j];
        if (gg) (*gg)[j] += go[j] * xh[j];
        if (gbeta) (*gbeta)[j] += go[j];
      }
      if (gx) {
        const double is = inv_std[static_cast<std::size_t>(r)];
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::int64_t j = 0; j < d; ++j) {
          const double gxh = go[j] * gp[j];
          (*gx)[r * d + j] += is * (gxh - inv_d * s1 - xh[j] * inv_d * s2);
        }
      }
    }
  });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 4, "group_norm");
  const std::int64_t b = x.dim(0);
  const std::int64_t c = x.dim(1);
  const std::int64_t hw = x.dim(2) * x.dim(3);
  if (groups <= 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  }
  if (gamma.value().size() != c || beta.value().size() != c) throw ShapeError("group_norm: affine size mismatch");
  const std::int64_t cpg = c / groups;
  const std::int64_t gsize = cpg * hw;
  Tensor out(x.shape());
  std::vector<double> xhat(static_cast<std::size_t>(x.value().size()));
  std::vector<double> inv_std(static_cast<std::size_t>(b * groups));
  const double* gp = gamma.value().ptr();
  const double* bp = beta.value().ptr();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const std::int64_t base = (bi * c + gi * cpg) * hw;
      const double* xr = x.value().ptr() + base;
      double mu = 0.0;
      for (std::int64_t j = 0; j < gsize; ++j) mu += xr[j];
      mu /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::int64_t j = 0; j < gsize; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(bi * groups + gi)] = is;
      for (std::int64_t j = 0; j < gsize; ++j) {
        const std::int64_t ch = gi * cpg + j / hw;
        const double xh = (xr[j] - mu) * is;
        xhat[static_cast<std::size_t>(base + j)] = xh;
        out[base + j] = xh * gp[ch] + bp[ch];
      }
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std), b, c, hw, groups, cpg, gsize](Node& n) {
    Tensor* gx = n.parent_grad(0);
    Tensor* gg = n.parent_grad(1);
    Tensor* gbeta = n.parent_grad(2);
    const double* gp = n.parent_value(1).ptr();
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t gi = 0; gi < groups; ++gi) {
        const std::int64_t base = (bi * c + gi * cpg) * hw;
        double s1 = 0.0, s2 = 0.0;
        for (std::int64_t j = 0; j < gsize; ++j) {
          const std::int64_t ch = gi * cpg + j / hw;
          const double go = n.grad[base + j];
          const double xh = xhat[static_cast<std::size_t>(base + j)];
          const double gxh = go * gp[ch];
          s1 += gxh;
          s2 += gxh * xh;
          if (gg) (*gg)[ch] += go * xh;
          if (gbeta) (*gbeta)[ch] += go;
        }
        if (gx) {
          const double is = inv_std[static_cast<std::size_t>(bi * groups + gi)];
          const double inv_n = 1.0 / static_cast<double>(gsize);
          for (std::int64_t j = 0; j < gsize; ++j) {
            const std::int64_t ch = gi * cpg + j / hw;
            const double xh = xhat[static_cast<std::size_t>(base + j)];
            (*gx)[base + j] += is * (n.grad[base + j] * gp[ch] - inv_n * s1 - xh * inv_n * s2);
          }
        }
      }
    }
  });
}

Var softmax_last(const Var& x) {
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.value().size() / d;
  Tensor out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x.value().ptr() + r * d;
    double* o = out.ptr() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double s = 0.0;
    for (std::int64_t j = 0; j < d; ++j) s += (o[j] = std::exp(xr[j] - mx));
    for (std::int64_t j = 0; j < d; ++j) o[j] /= s;
  }
  return make_result(std::move(out), {x}, [rows, d](Node& n) {
    Tensor* g = n.parent_grad(0);
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* p = n.value.ptr() + r * d;
      const double* go = n.grad.ptr() + r * d;
      double dot = 0.0;
      for (std::int64_t j = 0; j < d; ++j) dot += go[j] * p[j];
      for (std::int64_t j = 0; j < d; ++j) (*g)[r * d + j] += p[j] * (go[j] - dot);
    }
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  require_rank(q, 3, "attention q");
  require_rank(k, 3, "attention k");
  require_same(k, v, "attention k/v");
  const std::int64_t b = q.dim(0);
  const std::int64_t nq = q.dim(1);
  const std::int64_t d = q.dim(2);
  const std::int64_t nk = k.dim(1);
  if (k.dim(0) != b || k.dim(2) != d) {
    throw ShapeError("attention: q " + to_string(q.shape()) + " vs k " + to_string(k.shape()));
  }
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width " + std::to_string(d) + " not divisible by heads");
  if (nq == 0 || nk == 0) throw InputError("attention: empty token set");
  const std::int64_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // Probabilities are kept for the backward pass: [B, heads, Nq, Nk].
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * heads * nq * nk));
  Tensor out({b, nq, d});
  using Stride = Eigen::OuterStride<>;
  using SMap = Eigen::Map<const RowMat, 0, Stride>;
  using SMapMut = Eigen::Map<RowMat, 0, Stride>;
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t h = 0; h < heads; ++h) {
      SMap qh(q.value().ptr() + bi * nq * d + h * dh, nq, dh, Stride(d));
      SMap kh(k.value().ptr() + bi * nk * d + h * dh, nk, dh, Stride(d));
      SMap vh(v.value().ptr() + bi * nk * d + h * dh, nk, dh, Stride(d));
      MapMat p(probs->data() + (bi * heads + h) * nq * nk, nq, nk);
      p.noalias() = (qh * kh.transpose()) * sc;
      for (std::int64_t r = 0; r < nq; ++r) {
        const double mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      SMapMut oh(out.ptr() + bi * nq * d + h * dh, nq, dh, Stride(d));
      oh.noalias() = p * vh;
    }
  }
  return make_result(std::move(out), {q, k, v}, [probs, b, nq, nk, d, dh, heads, sc](Node& n) {
    Tensor* gq = n.parent_grad(0);
    Tensor* gk = n.parent_grad(1);
    Tensor* gv = n.parent_grad(2);
    RowMat dp(nq, nk);
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t h = 0; h < heads; ++h) {
        SMap qh(n.parent_value(0).ptr() + bi * nq * d + h * dh, nq, dh, Stride(d));
        SMap kh(n.parent_value(1).ptr() + bi * nk * d + h * dh, nk, dh, Stride(d));
        SMap vh(n.parent_value(2).ptr() + bi * nk * d + h * dh, nk, dh, Stride(d));
        SMap go(n.grad.ptr() + bi * nq * d + h * dh, nq, dh, Stride(d));
        CMapMat p(probs->data() + (bi * heads + h) * nq * nk, nq, nk);
        if (gv) SMapMut(gv->ptr() + bi * nk * d + h * dh, nk, dh, Stride(d)).noalias() += p.transpose() * go;
        dp.noalias() = go * vh.transpose();
        for (std::int64_t r = 0; r < nq; ++r) {
          const double dot = p.row(r).dot(dp.row(r));
          dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)) * sc;
        }
        if (gq) SMapMut(gq->ptr() + bi * nq * d + h * dh, nq, dh, Stride(d)).noalias() += dp * kh;
        if (gk) SMapMut(gk->ptr() + bi * nk * d + h * dh, nk, dh, Stride(d)).noalias() += dp.transpose() * qh;
      }
    }
  });
}

Var nchw_to_tokens(const Var& x) {
  require_rank(x, 4, "nchw_to_tokens");
  const std::int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({b, hw, c});
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < hw; ++p) out[(bi * hw + p) * c + ch] = x.value()[(bi * c + ch) * hw + p];
  return make_result(std::move(out), {x}, [b, c, hw](Node& n) {
    Tensor* g = n.parent_grad(0);
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < hw; ++p) (*g)[(bi * c + ch) * hw + p] += n.grad[(bi * hw + p) * c + ch];
  });
}

Var tokens_to_nchw(const Var& x, std::int64_t h, std::int64_t w) {
  require_rank(x, 3, "tokens_to_nchw");
  const std::int64_t b = x.dim(0), hw = x.dim(1), c = x.dim(2);
  if (hw != h * w) throw ShapeError("tokens_to_nchw: " + std::to_string(hw) + " tokens for a " + std::to_string(h) + "x" + std::to_string(w) + " grid");
  Tensor out({b, c, h, w});
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < hw; ++p) out[(bi * c + ch) * hw + p] = x.value()[(bi * hw + p) * c + ch];
  return make_result(std::move(out), {x}, [b, c, hw](Node& n) {
    Tensor* g = n.parent_grad(0);
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < hw; ++p) (*g)[(bi * hw + p) * c + ch] += n.grad[(bi * c + ch) * hw + p];
  });
}

Var repeat_batch(const Var& x, std::int64_t batch) {
  require_rank(x, 2, "repeat_batch");
  const std::int64_t inner = x.value().size();
  Tensor out({batch, x.dim(0), x.dim(1)});
  for (std::int64_t bi = 0; bi < batch; ++bi) std::copy(x.value().ptr(), x.value().ptr() + inner, out.ptr() + bi * inner);
  return make_result(std::move(out), {x}, [batch, inner](Node& n) {
    Tensor* g = n.parent_grad(0);
    for (std::int64_t bi = 0; bi < batch; ++bi)
      for (std::int64_t i = 0; i < inner; ++i) (*g)[i] += n.grad[bi * inner + i];
  });
}

Var mix_experts(const Var& alpha, const std::vector<Var>& experts) {
  require_rank(alpha, 2, "mix_experts alpha");
  const std::int64_t k = alpha.dim(0);
  const std::int64_t m = alpha.dim(1);
  if (static_cast<std::int64_t>(experts.size()) != m || m == 0) {
    throw ShapeError("mix_experts: " + std::to_string(experts.size()) + " experts for gate width " + std::to_string(m));
  }
  const std::int64_t d = experts[0].dim(1);
  for (const auto& e : experts) {
    if (e.shape() != Shape{k, d}) throw ShapeError("mix_experts: expert shape " + to_string(e.shape()));
  }
  Tensor out({k, d});
  for (std::int64_t r = 0; r < k; ++r) {
    for (std::int64_t e = 0; e < m; ++e) {
      const double a = alpha.value()[r * m + e];
      const double* src = experts[static_cast<std::size_t>(e)].value().ptr() + r * d;
      for (std::int64_t j = 0; j < d; ++j) out[r * d + j] += a * src[j];
    }
  }
  std::vector<Var> parents{alpha};
  parents.insert(parents.end(), experts.begin(), experts.end());
  return make_result(std::move(out), parents, [k, m, d](Node& n) {
    Tensor* ga = n.parent_grad(0);
    const Tensor& av = n.parent_value(0);
    for (std::int64_t e = 0; e < m; ++e) {
      const auto idx = static_cast<std::size_t>(e + 1);
      const Tensor& ev = n.parent_value(idx);
      Tensor* ge = n.parent_grad(idx);
      for (std::int64_t r = 0; r < k; ++r) {
        const double a = av[r * m + e];
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          const double go = n.grad[r * d + j];
          dot += go * ev[r * d + j];
          if (ge) (*ge)[r * d + j] += a * go;
        }
        if (ga) (*ga)[r * m + e] += dot;
      }
    }
  });
}

}  // namespace tcd::ag
