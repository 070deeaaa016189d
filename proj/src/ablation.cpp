// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <map>
#include <sstream>

#include "tcd/errors.hpp"
#include "tcd/train.hpp"

namespace tcd {

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::LossTerms: return "loss_terms";
    case AblationAxis::Asi: return "asi";
    case AblationAxis::Directionality: return "directionality";
  }
  return "?";
}

AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "loss_terms") return AblationAxis::LossTerms;
  if (s == "asi") return AblationAxis::Asi;
  if (s == "directionality") return AblationAxis::Directionality;
  throw ConfigError("unknown ablation axis '" + s + "' (expected loss_terms, asi or directionality)");
}

namespace {

RunConfig with_terms(RunConfig c, bool recon, bool trans) {
  c.losses.enable_recon = recon;
  c.losses.enable_trans = trans;
  return c;
}

RunConfig with_direction(RunConfig c, Directionality d) {
  c = with_terms(std::move(c), true, false);
  c.losses.directionality = d;
  return c;
}

RunConfig with_asi(RunConfig c, bool asi) {
  c = with_terms(std::move(c), true, true);
  c.ttg.asi_enabled = asi;
  return c;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string cell(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::vector<std::pair<std::string, std::vector<std::pair<std::string, RunConfig>>>> ablation_arms(
    const RunConfig& base, const std::set<AblationAxis>& axes) {
  const RunConfig cd_only = with_terms(base, false, false);
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, RunConfig>>>> groups;
  if (axes.empty()) {
    groups.push_back({"baseline", {{"L_cd", cd_only}}});
    return groups;
  }
  if (axes.count(AblationAxis::LossTerms)) {
    groups.push_back({"loss_terms",
                      {{"L_cd", cd_only},
                       {"L_cd + l1*L_recon", with_terms(base, true, false)},
                       {"L_cd + l1*L_recon + l2*L_trans", with_terms(base, true, true)}}});
  }
  if (axes.count(AblationAxis::Asi)) {
    groups.push_back({"asi", {{"w/o ASI", with_asi(base, false)}, {"w/ ASI", with_asi(base, true)}}});
  }
  if (axes.count(AblationAxis::Directionality)) {
    groups.push_back({"directionality",
                      {{"baseline", cd_only},
                       {"one-way forward (I1 + D2 -> I2)", with_direction(base, Directionality::Forward)},
                       {"one-way backward (I2 + D1 -> I1)", with_direction(base, Directionality::Backward)},
                       {"two-way", with_direction(base, Directionality::TwoWay)}}});
  }
  return groups;
}

AblationTable run_ablation_matrix(const RunConfig& base, const std::set<AblationAxis>& axes,
                                  std::span<const BiTemporalSample> train, std::span<const BiTemporalSample> test,
                                  const std::function<void(const std::string&, const StepLog&)>& on_step) {
  AblationTable table;
  table.task = base.normalized().task;
  std::map<std::string, AblationRow> done;
  for (const auto& [group, arms] : ablation_arms(base, axes)) {
    for (const auto& [arm, config] : arms) {
      const std::string key = dump_run_config(config);
      auto it = done.find(key);
      if (it == done.end()) {
        Trainer trainer(config);
        AblationRow row;
        row.config = trainer.config();
        const bool aux = config.losses.enable_recon || config.losses.enable_trans;
        row.trainable_params = trainer.param_count(aux ? ParamScope::Full : ParamScope::Inference);
        trainer.fit(train, [&, arm = arm](const StepLog& log) {
          row.final_loss = log.losses;
          if (on_step) on_step(arm, log);
        });
        EvalOptions opts;
        opts.batch_size = config.batch_size;
        row.report = evaluate(trainer.model(), test, table.task, opts);
        it = done.emplace(key, std::move(row)).first;
      }
      AblationRow row = it->second;
      row.group = group;
      row.arm = arm;
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

std::string AblationTable::format() const {
  std::ostringstream os;
  os << cell("group", 16) << cell("arm", 34) << cell("params", 11) << cell("F1", 8) << cell("IoU", 8) << cell("OA", 8);
  if (task == Task::SCD) os << cell("mIoU", 8) << cell("SeK", 8) << cell("Fscd", 8);
  os << "final_loss\n";
  for (const auto& r : rows) {
    os << cell(r.group, 16) << cell(r.arm, 34) << cell(std::to_string(r.trainable_params), 11)
       << cell(fmt(r.report.change.f1), 8) << cell(fmt(r.report.change.iou), 8) << cell(fmt(r.report.change.oa), 8);
    if (task == Task::SCD && r.report.scd) {
      os << cell(fmt(r.report.scd->miou), 8) << cell(fmt(r.report.scd->sek), 8) << cell(fmt(r.report.scd->fscd), 8);
    }
    os << fmt(r.final_loss.total) << '\n';
  }
  return os.str();
}

}  // namespace tcd
