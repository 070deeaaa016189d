// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: train, eval, ablate, visualize, synth.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcd/errors.hpp"
#include "tcd/rng.hpp"
#include "tcd/train.hpp"
#include "tcd/visualize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw tcd::DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw tcd::DataError("cannot write " + p.string());
  out << text;
}

tcd::RunConfig resolve_config(const Globals& g) {
  std::vector<std::string> sets = g.sets;
  if (g.seed) sets.push_back("seed=" + std::to_string(*g.seed));
  if (g.config.empty()) return tcd::apply_overrides(tcd::RunConfig{}, sets);
  return tcd::load_run_config(g.config, sets);
}

// Lists every file under `dir` with size and content hash; no timestamps so
// reruns produce identical manifests.
void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args) {
  json files = json::array();
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") paths.push_back(e.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    const std::string body = slurp(p);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(tcd::fnv1a(body)));
    files.push_back({{"path", fs::relative(p, dir).generic_string()}, {"bytes", body.size()}, {"fnv1a64", hash}});
  }
  json m{{"tool", "tcd"}, {"command", command}, {"args", args}, {"files", files}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::vector<tcd::BiTemporalSample> find_samples(const tcd::RunConfig& config, const std::string& split) {
  auto samples = tcd::load_dataset(config, split);
  if (samples.empty()) throw tcd::DataError("split '" + split + "' has no samples");
  return samples;
}

json metrics_json(const tcd::EvalReport& r) {
  json j{{"task", tcd::to_string(r.task)},
         {"samples", r.samples},
         {"change", {{"f1", r.change.f1}, {"iou", r.change.iou}, {"oa", r.change.oa}}}};
  if (!r.change.flagged.empty()) j["change"]["flagged"] = r.change.flagged;
  if (r.scd) {
    j["scd"] = {{"miou", r.scd->miou}, {"sek", r.scd->sek}, {"fscd", r.scd->fscd}};
    if (!r.scd->flagged.empty()) j["scd"]["flagged"] = r.scd->flagged;
  }
  return j;
}

int cmd_train(const Globals& g, const fs::path& out, const std::string& resume, std::int64_t steps,
              const std::vector<std::string>& args) {
  const tcd::RunConfig config = resolve_config(g);
  auto train = tcd::load_dataset(config, config.dataset.train_split);
  fs::create_directories(out);
  write_text(out / "config.json", tcd::dump_run_config(config) + "\n");

  tcd::Trainer trainer(config);
  if (!resume.empty()) tcd::checkpoint_load(trainer, resume);
  std::ofstream log(out / "train_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  const std::int64_t total = trainer.total_steps(static_cast<std::int64_t>(train.size()));
  trainer.fit(
      train,
      [&](const tcd::StepLog& s) {
        log << tcd::to_jsonl(s) << '\n';
        if (s.step % 50 == 0 || s.step == total) {
          std::cerr << "step " << s.step << "/" << total << " loss " << s.losses.total << '\n';
        }
      },
      steps > 0 ? std::optional<std::int64_t>(steps) : std::nullopt);
  log.close();
  tcd::checkpoint_save(trainer, out / "checkpoint.tcd");

  if (config.dataset.kind == "directory" || config.dataset.test_size > 0) {
    const auto test = tcd::load_dataset(config, config.dataset.test_split);
    if (!test.empty()) {
      tcd::EvalOptions opts;
      opts.batch_size = config.batch_size;
      const auto rep = tcd::evaluate(trainer.model(), test, config.task, opts);
      write_text(out / "metrics.json", metrics_json(rep).dump(2) + "\n");
      std::cout << tcd::format_report(rep);
    }
  }
  write_manifest(out, "train", args);
  return kExitOk;
}

int cmd_eval(const Globals& g, const fs::path& checkpoint, const std::string& task, const std::string& split,
             bool stratify, const std::string& baseline, const fs::path& out, const std::vector<std::string>& args) {
  tcd::Trainer trainer = tcd::checkpoint_restore(checkpoint);
  tcd::RunConfig data_config = trainer.config();
  if (!g.config.empty() || !g.sets.empty()) {
    // Dataset and class list come from the given config; the model from the checkpoint.
    const tcd::RunConfig c = resolve_config(g);
    data_config.dataset = c.dataset;
    data_config.dataset.synth.num_classes = trainer.config().model.num_classes;
  }
  const tcd::Task requested = task.empty() ? trainer.config().task : tcd::parse_task(task);
  if (requested != trainer.config().task) {
    throw tcd::ConfigError("--task " + tcd::to_string(requested) + " does not match the checkpoint task " +
                           tcd::to_string(trainer.config().task));
  }
  const auto samples = find_samples(data_config, split.empty() ? data_config.dataset.test_split : split);

  tcd::EvalOptions opts;
  opts.batch_size = trainer.config().batch_size;
  opts.keep_samples = stratify;
  const auto rep = tcd::evaluate(trainer.model(), samples, requested, opts);
  fs::create_directories(out);
  std::string text = tcd::format_report(rep);
  json metrics = metrics_json(rep);

  if (stratify) {
    const auto names = tcd::stratum_class_names(requested, trainer.config().resolved_class_names());
    tcd::StratumReport strata;
    if (baseline.empty()) {
      strata = tcd::stratified_report(rep.per_sample, {}, names);
    } else {
      tcd::Trainer base = tcd::checkpoint_restore(baseline);
      const auto base_rep = tcd::evaluate(base.model(), samples, requested, opts);
      strata = tcd::stratified_report(base_rep.per_sample, rep.per_sample, names);
    }
    const std::string st = tcd::format_strata(strata);
    write_text(out / "strata.txt", st);
    text += "per-class accuracy by change-ratio stratum\n" + st;
    json js = json::array();
    for (const auto& e : strata.strata) {
      json classes = json::array();
      for (const auto& c : e.classes) {
        auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
        classes.push_back({{"class", c.class_name}, {"base", opt(c.base)}, {"other", opt(c.other)}, {"delta", opt(c.delta)}});
      }
      js.push_back({{"stratum", tcd::to_string(e.stratum)}, {"samples", e.samples}, {"classes", classes}});
    }
    metrics["strata"] = js;
    metrics["strata_notes"] = strata.notes;
  }
  write_text(out / "report.txt", text);
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  write_manifest(out, "eval", args);
  std::cout << text;
  return kExitOk;
}

int cmd_ablate(const Globals& g, const std::vector<std::string>& axes_in, const fs::path& out,
               const std::vector<std::string>& args) {
  const tcd::RunConfig config = resolve_config(g);
  std::set<tcd::AblationAxis> axes;
  for (const auto& a : axes_in) axes.insert(tcd::parse_ablation_axis(a));
  const auto train = tcd::load_dataset(config, config.dataset.train_split);
  const auto test = find_samples(config, config.dataset.test_split);
  fs::create_directories(out);
  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  const auto table = tcd::run_ablation_matrix(config, axes, train, test, [&](const std::string& arm, const tcd::StepLog& s) {
    json j = json::parse(tcd::to_jsonl(s));
    j["arm"] = arm;
    log << j.dump() << '\n';
  });
  log.close();
  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"group", r.group}, {"arm", r.arm}, {"params", r.trainable_params}, {"metrics", metrics_json(r.report)}});
  }
  write_text(out / "table.txt", table.format());
  write_text(out / "table.json", rows.dump(2) + "\n");
  write_manifest(out, "ablate", args);
  std::cout << table.format();
  return kExitOk;
}

int cmd_visualize(const Globals& g, const fs::path& checkpoint, const std::string& sample_id, const std::string& split,
                  const std::string& what, bool true_difference, const fs::path& out,
                  const std::vector<std::string>& args) {
  const tcd::VisualKind kind = tcd::parse_visual_kind(what);
  tcd::Trainer trainer = tcd::checkpoint_restore(checkpoint);
  tcd::RunConfig data_config = trainer.config();
  if (!g.config.empty() || !g.sets.empty()) {
    data_config.dataset = resolve_config(g).dataset;
    data_config.dataset.synth.num_classes = trainer.config().model.num_classes;
  }
  const auto samples = find_samples(data_config, split.empty() ? data_config.dataset.test_split : split);
  auto it = std::find_if(samples.begin(), samples.end(), [&](const auto& s) { return s.id == sample_id; });
  if (it == samples.end()) throw tcd::DataError("sample '" + sample_id + "' not found in the dataset split");
  for (const auto& f : tcd::write_visualization(trainer, *it, kind, out, true_difference)) std::cout << f.string() << '\n';
  write_manifest(out, "visualize", args);
  return kExitOk;
}

int cmd_synth(const Globals& g, const std::string& spec_path, const fs::path& out, std::int64_t n,
              const std::string& split, const std::vector<std::string>& args) {
  tcd::SynthSpec spec;
  if (!spec_path.empty()) {
    spec = tcd::parse_synth_spec(slurp(spec_path));
  } else {
    spec = resolve_config(g).dataset.synth;
  }
  if (g.seed) spec.seed = *g.seed;
  if (n < 1) throw tcd::ConfigError("-n must be >= 1");
  std::vector<tcd::BiTemporalSample> samples;
  double ratio = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    samples.push_back(tcd::synth_dataset_sample(spec, split, i));
    ratio += samples.back().change_ratio();
  }
  tcd::write_scd_dataset(out, samples, split);
  tcd::DatasetSpec ds;
  ds.root = out;
  ds.layout = tcd::DatasetLayout::Scd;
  ds.class_names = tcd::default_class_names(spec.num_classes);
  const std::size_t ok = tcd::validate_split(ds, split);
  write_manifest(out, "synth", args);
  std::cout << "wrote " << ok << " samples to " << out.string() << ", mean change ratio " << ratio / static_cast<double>(n)
            << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-temporal change detection with transition-consistency training"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Run config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "Override the run seed");
  app.add_option("--set", g.sets, "Override a config field, key.path=value")->take_all();

  fs::path out = "run";
  std::string resume, checkpoint, task, split, baseline, sample, what, spec, synth_split = "train";
  std::int64_t steps = 0, n = 10;
  bool stratify = false, true_difference = false;
  std::vector<std::string> axes;

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--out", out, "Run directory");
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_option("--steps", steps, "Stop after this global step");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--task", task, "bcd or scd; must match the checkpoint");
  eval->add_option("--split", split, "Dataset split (default: the config's test split)");
  eval->add_flag("--stratify", stratify, "Add per-class accuracy by change-ratio stratum");
  eval->add_option("--baseline", baseline, "Baseline checkpoint for stratum deltas");
  eval->add_option("--out", out, "Output directory");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation matrix");
  ablate->add_option("--axes", axes, "loss_terms, asi, directionality")->delimiter(',');
  ablate->add_option("--out", out, "Output directory");

  auto* vis = app.add_subcommand("visualize", "Render feature maps for one sample");
  vis->add_option("--checkpoint", checkpoint)->required();
  vis->add_option("--sample", sample, "Sample id")->required();
  vis->add_option("--split", split, "Dataset split (default: the config's test split)");
  vis->add_option("--what", what, "diff_features or recon_similarity")->required();
  vis->add_flag("--true-difference", true_difference, "Use the exact token difference as transition");
  vis->add_option("--out", out, "Output directory");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset on disk");
  synth->add_option("--spec", spec, "Generator spec (JSON); defaults to the run config's dataset.synth");
  synth->add_option("--out", out, "Dataset root")->required();
  synth->add_option("-n", n, "Number of samples");
  synth->add_option("--split", synth_split, "Split name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (*seed_opt) g.seed = seed;
  const std::vector<std::string> args(argv + 1, argv + argc);

  try {
    if (*train) return cmd_train(g, out, resume, steps, args);
    if (*eval) return cmd_eval(g, checkpoint, task, split, stratify, baseline, out, args);
    if (*ablate) return cmd_ablate(g, axes, out, args);
    if (*vis) return cmd_visualize(g, checkpoint, sample, split, what, true_difference, out, args);
    if (*synth) return cmd_synth(g, spec, out, n, synth_split, args);
  } catch (const tcd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const tcd::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const tcd::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
