// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/consistency.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "tcd/errors.hpp"
#include "tcd/ops.hpp"

namespace tcd {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapMat = Eigen::Map<const RowMat>;

// Row-normalized copy; zero rows stay zero (cosine convention cos := 0).
struct Normalized {
  RowMat unit;
  Eigen::VectorXd norm;
};

Normalized normalize_rows(const double* data, std::int64_t rows, std::int64_t cols) {
  Normalized n;
  n.unit = CMapMat(data, rows, cols);
  n.norm = n.unit.rowwise().norm();
  for (std::int64_t r = 0; r < rows; ++r) {
    if (n.norm(r) > 0.0) n.unit.row(r) /= n.norm(r);
  }
  return n;
}

// Adds dL/dx for cos(x, y) given dL/dcos = g, for a single pair of rows.
void cosine_backward(double g, const double* ux, double nx, const double* uy, double c, std::int64_t d, double* gx) {
  if (nx == 0.0 || !gx) return;
  for (std::int64_t j = 0; j < d; ++j) gx[j] += g * (uy[j] - c * ux[j]) / nx;
}

void require_tokens(const ag::Var& a, const ag::Var& b, const char* op) {
  if (a.value().rank() != 3 || a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": expected matching [B, L, D] tokens, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
}

}  // namespace

std::string to_string(Directionality d) {
  switch (d) {
    case Directionality::Forward: return "forward";
    case Directionality::Backward: return "backward";
    case Directionality::TwoWay: return "two_way";
  }
  return "two_way";
}

Directionality parse_directionality(const std::string& s) {
  if (s == "forward") return Directionality::Forward;
  if (s == "backward") return Directionality::Backward;
  if (s == "two_way") return Directionality::TwoWay;
  throw ConfigError("unknown directionality '" + s + "' (expected forward, backward or two_way)");
}

Directionality default_directionality(Task task) {
  return task == Task::SCD ? Directionality::TwoWay : Directionality::Backward;
}

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ConfigError("losses.tau must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("losses.lambda1 and losses.lambda2 must be >= 0");
}

Reconstruction reconstruct(const ag::Var& i1, const ag::Var& i2, const ag::Var& d1, const ag::Var& d2,
                           Directionality directionality) {
  if (i1.shape() != i2.shape() || i1.shape() != d1.shape() || i1.shape() != d2.shape()) {
    throw ShapeError("reconstruct: token grids differ: " + to_string(i1.shape()) + ", " + to_string(i2.shape()) + ", " +
                     to_string(d1.shape()) + ", " + to_string(d2.shape()));
  }
  Reconstruction r;
  if (directionality != Directionality::Backward) r.hat2 = ag::add(i1, d2);
  if (directionality != Directionality::Forward) r.hat1 = ag::add(i2, d1);
  return r;
}

TokenLabels token_labels_from_mask(const LabelMap& change_mask, std::int64_t grid_h, std::int64_t grid_w) {
  return token_labels_from_masks(std::span<const LabelMap>(&change_mask, 1), grid_h, grid_w);
}

TokenLabels token_labels_from_masks(std::span<const LabelMap> change_masks, std::int64_t grid_h, std::int64_t grid_w) {
  TokenLabels out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  if (grid_h <= 0 || grid_w <= 0) throw InputError("token grid must be non-empty");
  std::int64_t changed = 0;
  for (const auto& m : change_masks) {
    if (m.height % grid_h != 0 || m.width % grid_w != 0) {
      throw InputError("mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                       " is not divisible by token grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
    }
    const std::int64_t ph = m.height / grid_h;
    const std::int64_t pw = m.width / grid_w;
    for (std::int64_t ty = 0; ty < grid_h; ++ty) {
      for (std::int64_t tx = 0; tx < grid_w; ++tx) {
        std::int64_t count = 0;
        for (std::int64_t y = ty * ph; y < (ty + 1) * ph; ++y)
          for (std::int64_t x = tx * pw; x < (tx + 1) * pw; ++x) {
            const Label v = m.at(y, x);
            count += (v != 0 && v != kIgnoreLabel) ? 1 : 0;
          }
        const bool is_changed = 2 * count > ph * pw;
        out.y.push_back(is_changed ? -1 : 1);
        changed += is_changed ? 1 : 0;
      }
    }
  }
  out.change_fraction = out.y.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(out.y.size());
  return out;
}

ag::Var cross_entropy(const ag::Var& logits, std::span<const LabelMap> targets, Label ignore) {
  if (logits.value().rank() != 4) throw ShapeError("cross_entropy: logits must be [B, C, H, W], got " + to_string(logits.shape()));
  const std::int64_t b = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const std::int64_t hw = h * w;
  if (static_cast<std::int64_t>(targets.size()) != b) throw ShapeError("cross_entropy: batch size mismatch");
  for (const auto& t : targets) {
    if (t.height != h || t.width != w) {
      throw ShapeError("cross_entropy: target " + std::to_string(t.height) + "x" + std::to_string(t.width) +
                       " vs logits " + std::to_string(h) + "x" + std::to_string(w));
    }
  }
  // Softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * c * hw));
  auto labels = std::make_shared<std::vector<int>>(static_cast<std::size_t>(b * hw), -1);
  double total = 0.0;
  std::int64_t valid = 0;
  const double* lp = logits.value().ptr();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t p = 0; p < hw; ++p) {
      const Label lab = targets[static_cast<std::size_t>(bi)].data[static_cast<std::size_t>(p)];
      double mx = -INFINITY;
      for (std::int64_t k = 0; k < c; ++k) mx = std::max(mx, lp[(bi * c + k) * hw + p]);
      double s = 0.0;
      for (std::int64_t k = 0; k < c; ++k) {
        const double e = std::exp(lp[(bi * c + k) * hw + p] - mx);
        (*probs)[static_cast<std::size_t>((bi * c + k) * hw + p)] = e;
        s += e;
      }
      for (std::int64_t k = 0; k < c; ++k) (*probs)[static_cast<std::size_t>((bi * c + k) * hw + p)] /= s;
      if (lab == ignore) continue;
      if (lab >= c) {
        throw InputError("cross_entropy: label " + std::to_string(lab) + " out of range for " + std::to_string(c) + " classes");
      }
      (*labels)[static_cast<std::size_t>(bi * hw + p)] = lab;
      total += mx + std::log(s) - lp[(bi * c + lab) * hw + p];
      ++valid;
    }
  }
  const double value = valid > 0 ? total / static_cast<double>(valid) : 0.0;
  return ag::make_result(Tensor({}, value), {logits}, [probs, labels, b, c, hw, valid](ag::Node& n) {
    if (valid == 0) return;
    Tensor* g = n.parent_grad(0);
    const double scale = n.grad[0] / static_cast<double>(valid);
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t p = 0; p < hw; ++p) {
        const int lab = (*labels)[static_cast<std::size_t>(bi * hw + p)];
        if (lab < 0) continue;
        for (std::int64_t k = 0; k < c; ++k) {
          const std::int64_t idx = (bi * c + k) * hw + p;
          (*g)[idx] += scale * ((*probs)[static_cast<std::size_t>(idx)] - (k == lab ? 1.0 : 0.0));
        }
      }
    }
  });
}

ag::Var loss_change(const ag::Var& change_logits, std::span<const LabelMap> change_masks) {
  if (change_logits.value().rank() != 4 || change_logits.dim(1) != 2) {
    throw ShapeError("loss_change: expected [B, 2, H, W] logits, got " + to_string(change_logits.shape()));
  }
  return cross_entropy(change_logits, change_masks);
}

ag::Var loss_sem(const ag::Var& sem_logits_t1, const ag::Var& sem_logits_t2, std::span<const LabelMap> gt_t1,
                 std::span<const LabelMap> gt_t2) {
  return ag::add(cross_entropy(sem_logits_t1, gt_t1), cross_entropy(sem_logits_t2, gt_t2));
}

ag::Var loss_sa(const ag::Var& f1, const ag::Var& f2, std::span<const LabelMap> change_masks) {
  if (f1.value().rank() != 4 || f1.shape() != f2.shape()) {
    throw ShapeError("loss_sa: features must be matching [B, C, h, w], got " + to_string(f1.shape()) + " and " +
                     to_string(f2.shape()));
  }
  const std::int64_t b = f1.dim(0), c = f1.dim(1), h = f1.dim(2), w = f1.dim(3);
  const std::int64_t hw = h * w;
  if (static_cast<std::int64_t>(change_masks.size()) != b) throw ShapeError("loss_sa: batch size mismatch");
  const TokenLabels labels = token_labels_from_masks(change_masks, h, w);

  // Per-pixel channel vectors as rows.
  const Tensor t1 = ag::nchw_to_tokens(ag::constant(f1.value())).value();
  const Tensor t2 = ag::nchw_to_tokens(ag::constant(f2.value())).value();
  const std::int64_t rows = b * hw;
  auto n1 = std::make_shared<Normalized>(normalize_rows(t1.ptr(), rows, c));
  auto n2 = std::make_shared<Normalized>(normalize_rows(t2.ptr(), rows, c));
  auto cosv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows), 0.0);
  std::int64_t unchanged = 0;
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (labels.y[static_cast<std::size_t>(r)] != 1) continue;
    const double cs = n1->unit.row(r).dot(n2->unit.row(r));
    (*cosv)[static_cast<std::size_t>(r)] = cs;
    total += 1.0 - cs;
    ++unchanged;
  }
  const double value = unchanged > 0 ? total / static_cast<double>(unchanged) : 0.0;
  auto y = std::make_shared<std::vector<int>>(labels.y);
  return ag::make_result(Tensor({}, value), {f1, f2}, [n1, n2, cosv, y, b, c, hw, unchanged](ag::Node& n) {
    if (unchanged == 0) return;
    Tensor* g1 = n.parent_grad(0);
    Tensor* g2 = n.parent_grad(1);
    const double g = -n.grad[0] / static_cast<double>(unchanged);
    std::vector<double> tmp1(static_cast<std::size_t>(c)), tmp2(static_cast<std::size_t>(c));
    for (std::int64_t bi = 0; bi < b; ++bi) {
      for (std::int64_t p = 0; p < hw; ++p) {
        const std::int64_t r = bi * hw + p;
        if ((*y)[static_cast<std::size_t>(r)] != 1) continue;
        const double cs = (*cosv)[static_cast<std::size_t>(r)];
        std::fill(tmp1.begin(), tmp1.end(), 0.0);
        std::fill(tmp2.begin(), tmp2.end(), 0.0);
        cosine_backward(g, n1->unit.row(r).data(), n1->norm(r), n2->unit.row(r).data(), cs, c, tmp1.data());
        cosine_backward(g, n2->unit.row(r).data(), n2->norm(r), n1->unit.row(r).data(), cs, c, tmp2.data());
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t idx = (bi * c + ch) * hw + p;
          if (g1) (*g1)[idx] += tmp1[static_cast<std::size_t>(ch)];
          if (g2) (*g2)[idx] += tmp2[static_cast<std::size_t>(ch)];
        }
      }
    }
  });
}

ag::Var loss_recon(const ag::Var& original, const ag::Var& reconstructed, double tau) {
  if (!(tau > 0.0)) throw InputError("loss_recon: tau must be > 0");
  require_tokens(original, reconstructed, "loss_recon");
  const std::int64_t rows = original.dim(0) * original.dim(1);
  const std::int64_t d = original.dim(2);
  if (rows < 1) throw InputError("loss_recon: needs at least one token");

  auto a = std::make_shared<Normalized>(normalize_rows(original.value().ptr(), rows, d));
  auto r = std::make_shared<Normalized>(normalize_rows(reconstructed.value().ptr(), rows, d));
  // cos[n, m] between anchor n and candidate m.
  auto cosm = std::make_shared<RowMat>(a->unit * r->unit.transpose());
  auto soft = std::make_shared<RowMat>(rows, rows);
  double total = 0.0;
  for (std::int64_t n = 0; n < rows; ++n) {
    const auto s = (cosm->row(n).array() / tau).eval();
    const double mx = s.maxCoeff();
    const auto e = (s - mx).exp().eval();
    const double z = e.sum();
    soft->row(n) = e / z;
    total += mx + std::log(z) - s(n);
  }
  const double value = total / static_cast<double>(rows);
  return ag::make_result(Tensor({}, value), {original, reconstructed}, [a, r, cosm, soft, rows, d, tau](ag::Node& n) {
    // dL/ds = (softmax - I) / N, s = cos / tau.
    RowMat g = *soft;
    g.diagonal().array() -= 1.0;
    g *= n.grad[0] / (static_cast<double>(rows) * tau);
    const RowMat gc = g.cwiseProduct(*cosm);
    if (Tensor* ga = n.parent_grad(0)) {
      RowMat da = g * r->unit;
      const Eigen::VectorXd coef = gc.rowwise().sum();
      for (std::int64_t i = 0; i < rows; ++i) {
        if (a->norm(i) == 0.0) continue;
        da.row(i) = (da.row(i) - coef(i) * a->unit.row(i)) / a->norm(i);
        for (std::int64_t j = 0; j < d; ++j) (*ga)[i * d + j] += da(i, j);
      }
    }
    if (Tensor* gr = n.parent_grad(1)) {
      RowMat dr = g.transpose() * a->unit;
      const Eigen::RowVectorXd coef = gc.colwise().sum();
      for (std::int64_t i = 0; i < rows; ++i) {
        if (r->norm(i) == 0.0) continue;
        dr.row(i) = (dr.row(i) - coef(i) * r->unit.row(i)) / r->norm(i);
        for (std::int64_t j = 0; j < d; ++j) (*gr)[i * d + j] += dr(i, j);
      }
    }
  });
}

ag::Var loss_trans(const ag::Var& d1, const ag::Var& d2, const TokenLabels& labels) {
  require_tokens(d1, d2, "loss_trans");
  const std::int64_t rows = d1.dim(0) * d1.dim(1);
  const std::int64_t d = d1.dim(2);
  if (static_cast<std::int64_t>(labels.y.size()) != rows) {
    throw ShapeError("loss_trans: " + std::to_string(labels.y.size()) + " labels for " + std::to_string(rows) + " tokens");
  }
  if (rows == 0) throw InputError("loss_trans: no tokens");
  auto n1 = std::make_shared<Normalized>(normalize_rows(d1.value().ptr(), rows, d));
  auto n2 = std::make_shared<Normalized>(normalize_rows(d2.value().ptr(), rows, d));
  // dL_l/dcos per token.
  auto dcos = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows), 0.0);
  auto cosv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows), 0.0);
  double total = 0.0;
  for (std::int64_t l = 0; l < rows; ++l) {
    const double cs = n1->unit.row(l).dot(n2->unit.row(l));
    (*cosv)[static_cast<std::size_t>(l)] = cs;
    const int y = labels.y[static_cast<std::size_t>(l)];
    if (y == 1) {
      total += 1.0 - cs;
      (*dcos)[static_cast<std::size_t>(l)] = -1.0;
    } else if (y == -1) {
      total += std::max(0.0, cs);
      (*dcos)[static_cast<std::size_t>(l)] = cs > 0.0 ? 1.0 : 0.0;
    } else {
      throw InputError("loss_trans: token labels must be +1 or -1");
    }
  }
  const double value = total / static_cast<double>(rows);
  return ag::make_result(Tensor({}, value), {d1, d2}, [n1, n2, dcos, cosv, rows, d](ag::Node& n) {
    Tensor* g1 = n.parent_grad(0);
    Tensor* g2 = n.parent_grad(1);
    const double s = n.grad[0] / static_cast<double>(rows);
    for (std::int64_t l = 0; l < rows; ++l) {
      const double g = s * (*dcos)[static_cast<std::size_t>(l)];
      if (g == 0.0) continue;
      const double cs = (*cosv)[static_cast<std::size_t>(l)];
      cosine_backward(g, n1->unit.row(l).data(), n1->norm(l), n2->unit.row(l).data(), cs, d, g1 ? g1->ptr() + l * d : nullptr);
      cosine_backward(g, n2->unit.row(l).data(), n2->norm(l), n1->unit.row(l).data(), cs, d, g2 ? g2->ptr() + l * d : nullptr);
    }
  });
}

WeightedLoss loss_total(const LossTerms& terms, const LossWeights& weights, Task task) {
  weights.validate();
  if (!terms.change) throw InputError("loss_total: the change loss is required");
  WeightedLoss out;
  LossReport& rep = out.report;
  ag::Var cd = *terms.change;
  rep.l_change = cd.item();
  rep.active_terms.insert("change");
  if (task == Task::SCD) {
    if (terms.sem) {
      cd = ag::add(cd, *terms.sem);
      rep.l_sem = terms.sem->item();
      rep.active_terms.insert("sem");
    }
    if (terms.sa) {
      cd = ag::add(cd, *terms.sa);
      rep.l_sa = terms.sa->item();
      rep.active_terms.insert("sa");
    }
  }
  rep.l_cd = cd.item();
  ag::Var total = cd;
  if (terms.recon) {
    total = ag::add(total, ag::scale(*terms.recon, weights.lambda1));
    rep.l_recon = terms.recon->item();
    rep.active_terms.insert("recon");
  }
  if (terms.trans) {
    total = ag::add(total, ag::scale(*terms.trans, weights.lambda2));
    rep.l_trans = terms.trans->item();
    rep.active_terms.insert("trans");
  }
  rep.total = total.item();
  out.total = total;
  return out;
}

}  // namespace tcd
