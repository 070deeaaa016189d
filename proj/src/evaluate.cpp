// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <sstream>

#include "tcd/errors.hpp"
#include "tcd/train.hpp"

namespace tcd {

namespace {

LabelMap argmax_map(const Tensor& logits, std::int64_t index) {
  const std::int64_t c = logits.dim(1);
  const std::int64_t h = logits.dim(2);
  const std::int64_t w = logits.dim(3);
  const std::int64_t hw = h * w;
  const double* base = logits.ptr() + index * c * hw;
  LabelMap out(h, w, 0);
  for (std::int64_t p = 0; p < hw; ++p) {
    std::int64_t best = 0;
    for (std::int64_t k = 1; k < c; ++k) {
      if (base[k * hw + p] > base[best * hw + p]) best = k;
    }
    out.data[static_cast<std::size_t>(p)] = static_cast<Label>(best);
  }
  return out;
}

LabelMap stack_rows(const LabelMap& a, const LabelMap& b) {
  LabelMap out(a.height + b.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

}  // namespace

Prediction predict(const PredictionSet& set, std::int64_t index) {
  Prediction p;
  p.change = argmax_map(set.change_logits, index);
  if (set.sem_logits_t1) p.sem_t1 = argmax_map(*set.sem_logits_t1, index);
  if (set.sem_logits_t2) p.sem_t2 = argmax_map(*set.sem_logits_t2, index);
  return p;
}

std::vector<std::string> stratum_class_names(Task task, const std::vector<std::string>& class_names) {
  if (task == Task::BCD) return {"unchanged", "changed"};
  std::vector<std::string> out{"no change"};
  out.insert(out.end(), class_names.begin(), class_names.end());
  return out;
}

EvalReport evaluate(const ChangeModel& model, std::span<const BiTemporalSample> data, Task task,
                    const EvalOptions& options) {
  if (data.empty()) throw InputError("evaluate: empty dataset");
  if (model.config().task != task) {
    throw ConfigError("evaluate: task " + to_string(task) + " does not match the model's task " +
                      to_string(model.config().task));
  }
  const std::int64_t k = model.config().num_classes;
  EvalReport rep;
  rep.task = task;
  rep.samples = data.size();
  rep.change_cm = ConfusionMatrix(2);
  if (task == Task::SCD) rep.scd_cm = ConfusionMatrix(k + 1);

  const auto bs = static_cast<std::size_t>(std::max<std::int64_t>(1, options.batch_size));
  for (std::size_t start = 0; start < data.size(); start += bs) {
    const auto chunk = data.subspan(start, std::min(bs, data.size() - start));
    const Batch batch = make_batch(chunk, task);
    const PredictionSet set = model.forward_inference(batch.x1, batch.x2);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const BiTemporalSample& s = chunk[i];
      Prediction p = predict(set, static_cast<std::int64_t>(i));
      if (options.hook) options.hook(s, p);
      accumulate(rep.change_cm, p.change, s.change);
      if (task == Task::BCD) {
        if (options.keep_samples) rep.per_sample.push_back({p.change, s.change, s.change_ratio()});
        continue;
      }
      if (!p.sem_t1 || !p.sem_t2) throw InputError("evaluate: prediction lacks semantic maps");
      const LabelMap gt1 = scd_change_map(*s.sem_t1, s.change);
      const LabelMap gt2 = scd_change_map(*s.sem_t2, s.change);
      const LabelMap pr1 = scd_change_map(*p.sem_t1, p.change);
      const LabelMap pr2 = scd_change_map(*p.sem_t2, p.change);
      accumulate(*rep.scd_cm, pr1, gt1);
      accumulate(*rep.scd_cm, pr2, gt2);
      if (options.keep_samples) rep.per_sample.push_back({stack_rows(pr1, pr2), stack_rows(gt1, gt2), s.change_ratio()});
    }
  }
  rep.change = bcd_metrics(rep.change_cm);
  if (rep.scd_cm) rep.scd = scd_metrics(*rep.scd_cm);
  return rep;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << "task: " << to_string(report.task) << "\n";
  os << "samples: " << report.samples << "\n";
  os << "binary change\n" << format_bcd(report.change);
  if (report.scd) os << "semantic change\n" << format_scd(*report.scd);
  return os.str();
}

}  // namespace tcd
