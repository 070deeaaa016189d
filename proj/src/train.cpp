// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "tcd/errors.hpp"
#include "tcd/ops.hpp"
#include "tcd/rng.hpp"

namespace tcd {

Adam::Adam(const OptimizerConfig& config) : config_(config) {}

void Adam::step(const nn::ParamList& params, double lr) {
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& p : params) {
    const Tensor& g = p.var.grad();
    if (g.empty()) continue;  // never reached by backward
    auto& mom = moments_[p.name];
    if (mom.m.empty()) {
      mom.m = Tensor(g.shape(), 0.0);
      mom.v = Tensor(g.shape(), 0.0);
    }
    Tensor& w = const_cast<ag::Var&>(p.var).mutable_value();
    for (std::int64_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + config_.weight_decay * w[i];
      mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * gi;
      mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * gi * gi;
      w[i] -= lr * (mom.m[i] / bc1) / (std::sqrt(mom.v[i] / bc2) + config_.eps);
    }
  }
}

Batch make_batch(std::span<const BiTemporalSample> samples, Task task) {
  if (samples.empty()) throw InputError("make_batch: no samples");
  const auto& first = samples.front();
  const std::int64_t c = first.image_t1.dim(0);
  const std::int64_t h = first.height();
  const std::int64_t w = first.width();
  const auto b = static_cast<std::int64_t>(samples.size());
  Batch out;
  out.x1 = Tensor({b, c, h, w});
  out.x2 = Tensor({b, c, h, w});
  const std::int64_t per = c * h * w;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.image_t1.shape() != Shape{c, h, w} || s.image_t2.shape() != Shape{c, h, w}) {
      throw ShapeError("make_batch: sample " + s.id + " has shape " + to_string(s.image_t1.shape()) + " / " +
                       to_string(s.image_t2.shape()) + ", expected " + to_string(Shape{c, h, w}));
    }
    std::copy_n(s.image_t1.ptr(), per, out.x1.ptr() + i * per);
    std::copy_n(s.image_t2.ptr(), per, out.x2.ptr() + i * per);
    out.change.push_back(s.change);
    if (task == Task::SCD) {
      if (!s.sem_t1 || !s.sem_t2) throw DataError("sample " + s.id + " has no semantic masks but the task is scd");
      out.sem_t1.push_back(*s.sem_t1);
      out.sem_t2.push_back(*s.sem_t2);
    }
  }
  return out;
}

std::string to_jsonl(const StepLog& log) {
  const auto& r = log.losses;
  nlohmann::json j{{"step", log.step},      {"epoch", log.epoch},   {"lr", log.lr},         {"l_change", r.l_change},
                   {"l_sem", r.l_sem},      {"l_sa", r.l_sa},       {"l_cd", r.l_cd},       {"l_recon", r.l_recon},
                   {"l_trans", r.l_trans},  {"total", r.total}};
  return j.dump();
}

namespace {

std::uint64_t component_seed(std::uint64_t seed, const char* what) { return mix_seed(seed, fnv1a(what)); }

std::int64_t count_scope(const ChangeModel& model, const TransitionGenerator& generator, ParamScope scope) {
  switch (scope) {
    case ParamScope::Full: return nn::count_scalars(model.parameters()) + nn::count_scalars(generator.parameters());
    case ParamScope::Inference: return nn::count_scalars(model.parameters());
    case ParamScope::Generator: return nn::count_scalars(generator.parameters());
  }
  return 0;
}

}  // namespace

std::int64_t param_count(const ChangeModel& model, const TransitionGenerator& generator, ParamScope scope) {
  return count_scope(model, generator, scope);
}

Trainer::Trainer(const RunConfig& config) : config_(config.normalized()) {
  config_.validate();
  model_ = ChangeModel(config_.model, component_seed(config_.seed, "model"));
  generator_ = TransitionGenerator(config_.ttg, config_.model.stage_channels[3], component_seed(config_.seed, "ttg"));
  embeddings_ = text_provider_load(config_.text_embeddings, config_.resolved_class_names(),
                                   component_seed(config_.seed, "text"), config_.ttg.text_dim);
  optimizer_ = Adam(config_.optimizer);
}

nn::ParamList Trainer::parameters() const {
  nn::ParamList out = model_.parameters();
  for (auto& p : generator_.parameters()) out.push_back(p);
  return out;
}

std::int64_t Trainer::param_count(ParamScope scope) const { return count_scope(model_, generator_, scope); }

double Trainer::learning_rate(std::int64_t step, std::int64_t total_steps) const {
  const double lr = config_.optimizer.lr;
  if (config_.schedule.kind == "constant" || total_steps <= 0) return lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr * std::max(0.0, 1.0 - frac);
}

WeightedLoss Trainer::compute_loss(const Batch& batch) const {
  const Task task = config_.task;
  const LossConfig& lc = config_.losses;
  ForwardResult f = model_.forward(ag::constant(batch.x1), ag::constant(batch.x2));

  LossTerms terms;
  terms.change = loss_change(f.cd.change_logits, batch.change);
  if (task == Task::SCD) {
    terms.sem = loss_sem(*f.seg1.sem_logits, *f.seg2.sem_logits, batch.sem_t1, batch.sem_t2);
    terms.sa = loss_sa(f.seg1.refined.r1, f.seg2.refined.r1, batch.change);
  }

  if (lc.enable_recon || lc.enable_trans) {
    const Directionality dir = lc.resolved_directionality(task);
    const ag::Var& s1 = f.pyr1.stages[3];
    const ag::Var& s2 = f.pyr2.stages[3];
    const std::int64_t h4 = s1.dim(2);
    const std::int64_t w4 = s1.dim(3);
    const ag::Var i1 = ag::nchw_to_tokens(s1);
    const ag::Var i2 = ag::nchw_to_tokens(s2);
    const ag::Var z = generator_.semantic_embedding(ag::constant(embeddings_.embeddings));

    const bool need1 = lc.enable_trans || (lc.enable_recon && dir != Directionality::Forward);
    const bool need2 = lc.enable_trans || (lc.enable_recon && dir != Directionality::Backward);
    const ag::Var zeros = ag::constant(Tensor(i1.shape(), 0.0));
    const ag::Var d1 = need1 ? generator_.cross_modal_fusion(i1, z, h4, w4) : zeros;
    const ag::Var d2 = need2 ? generator_.cross_modal_fusion(i2, z, h4, w4) : zeros;

    if (lc.enable_recon) {
      const Reconstruction rec = reconstruct(i1, i2, d1, d2, dir);
      std::optional<ag::Var> recon;
      if (rec.hat1) recon = loss_recon(i1, *rec.hat1, lc.weights.tau);
      if (rec.hat2) {
        ag::Var l2 = loss_recon(i2, *rec.hat2, lc.weights.tau);
        recon = recon ? ag::add(*recon, l2) : l2;
      }
      terms.recon = recon;
    }
    if (lc.enable_trans) terms.trans = loss_trans(d1, d2, token_labels_from_masks(batch.change, h4, w4));
  }
  return loss_total(terms, lc.weights, task);
}

LossReport Trainer::train_step(const Batch& batch, std::int64_t total_steps) {
  const nn::ParamList params = parameters();
  for (const auto& p : params) const_cast<ag::Var&>(p.var).zero_grad();

  WeightedLoss loss = compute_loss(batch);
  const LossReport& r = loss.report;
  const std::pair<const char*, double> terms[] = {{"l_change", r.l_change}, {"l_sem", r.l_sem},     {"l_sa", r.l_sa},
                                                  {"l_recon", r.l_recon},   {"l_trans", r.l_trans}, {"total", r.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at step " + std::to_string(state_.step) + ": " + name + " = " +
                         std::to_string(value));
    }
  }

  loss.total.backward();

  double norm_sq = 0.0;
  for (const auto& p : params) {
    const Tensor& g = p.var.grad();
    if (g.empty()) continue;
    if (!all_finite(g)) {
      throw NumericError("non-finite gradient at step " + std::to_string(state_.step) + " in " + p.name);
    }
    for (double v : g.data()) norm_sq += v * v;
  }
  const double clip = config_.optimizer.grad_clip;
  if (clip > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > clip) {
      const double s = clip / norm;
      for (const auto& p : params) {
        if (p.var.grad().empty()) continue;
        for (auto& v : const_cast<ag::Var&>(p.var).mutable_grad().data()) v *= s;
      }
    }
  }

  optimizer_.step(params, learning_rate(state_.step, total_steps));
  ++state_.step;
  return r;
}

std::int64_t Trainer::steps_per_epoch(std::int64_t n) const { return (n + config_.batch_size - 1) / config_.batch_size; }

std::int64_t Trainer::total_steps(std::int64_t n) const {
  if (config_.schedule.total_steps > 0) return config_.schedule.total_steps;
  return config_.epochs * steps_per_epoch(n);
}

void Trainer::fit(std::span<const BiTemporalSample> train, const std::function<void(const StepLog&)>& on_step,
                  std::optional<std::int64_t> until_step) {
  if (train.empty()) throw InputError("fit: empty training set");
  const auto n = static_cast<std::int64_t>(train.size());
  const std::int64_t spe = steps_per_epoch(n);
  const std::int64_t total = total_steps(n);
  const std::int64_t end = until_step ? std::min(*until_step, total) : total;

  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> order;
  while (state_.step < end) {
    const std::int64_t step = state_.step;
    const std::int64_t epoch = step / spe;
    if (epoch != cached_epoch) {
      order.resize(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      Rng rng(mix_seed(component_seed(config_.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
      for (std::int64_t i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.below(i + 1))]);
      cached_epoch = epoch;
    }
    const std::int64_t begin = (step % spe) * config_.batch_size;
    const std::int64_t stop = std::min(n, begin + config_.batch_size);
    std::vector<BiTemporalSample> samples;
    for (std::int64_t i = begin; i < stop; ++i) {
      const auto& s = train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
      if (config_.dataset.crop_size > 0) {
        samples.push_back(crop_augment(s, config_.dataset.crop_size,
                                       mix_seed(component_seed(config_.seed, "crop"), static_cast<std::uint64_t>(step * n + i))));
      } else {
        samples.push_back(s);
      }
    }
    const double lr = learning_rate(step, total);
    LossReport report = train_step(make_batch(samples, config_.task), total);
    state_.epoch = epoch;
    if (on_step) on_step(StepLog{state_.step, epoch, lr, std::move(report)});
  }
}

std::vector<BiTemporalSample> load_dataset(const RunConfig& config, const std::string& split) {
  const RunConfig c = config.normalized();
  std::vector<BiTemporalSample> out;
  if (c.dataset.kind == "synthetic") {
    const std::int64_t n = split == c.dataset.train_split ? c.dataset.train_size : c.dataset.test_size;
    for (std::int64_t i = 0; i < n; ++i) out.push_back(synth_dataset_sample(c.dataset.synth, split, i));
    if (c.task == Task::BCD) {
      for (auto& s : out) {
        s.sem_t1.reset();
        s.sem_t2.reset();
      }
    }
    return out;
  }
  DatasetSpec spec;
  spec.root = c.dataset.root;
  spec.layout = c.dataset.layout;
  spec.class_names = c.resolved_class_names();
  spec.min_change_ratio = c.dataset.min_change_ratio;
  for (const auto& id : list_split(spec, split)) out.push_back(load_sample(spec, id));
  return out;
}

}  // namespace tcd
