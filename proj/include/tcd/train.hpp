// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tcd/consistency.hpp"
#include "tcd/data.hpp"
#include "tcd/metrics.hpp"
#include "tcd/model.hpp"
#include "tcd/ttg.hpp"

namespace tcd {

struct LossConfig {
  LossWeights weights;
  bool enable_recon = true;
  bool enable_trans = true;
  /// Unset means the task default (two-way for SCD, backward for BCD).
  std::optional<Directionality> directionality;

  Directionality resolved_directionality(Task task) const {
    return directionality ? *directionality : default_directionality(task);
  }
  bool operator==(const LossConfig&) const = default;
};

struct OptimizerConfig {
  std::string kind = "adam";
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 0.0;
  bool operator==(const OptimizerConfig&) const = default;
};

struct ScheduleConfig {
  std::string kind = "linear";  // linear decay to 0 at the last step, or constant
  /// Total optimizer steps; 0 derives it from epochs and the training set size.
  std::int64_t total_steps = 0;
  bool operator==(const ScheduleConfig&) const = default;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | directory
  SynthSpec synth;
  std::int64_t train_size = 200;
  std::int64_t test_size = 50;
  std::filesystem::path root;
  DatasetLayout layout = DatasetLayout::Scd;
  std::string train_split = "train";
  std::string test_split = "test";
  /// Random square crop per training sample; 0 keeps full rasters.
  std::int64_t crop_size = 0;
  double min_change_ratio = 0.0;
};

struct RunConfig {
  Task task = Task::SCD;
  std::uint64_t seed = 0;
  ModelConfig model;
  TTGConfig ttg;
  LossConfig losses;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  std::int64_t batch_size = 8;
  std::int64_t epochs = 200;
  DatasetConfig dataset;
  /// Category names; empty means generated defaults for num_classes.
  std::vector<std::string> class_names;
  /// Optional precomputed text-embedding file.
  std::optional<std::filesystem::path> text_embeddings;

  /// Keeps task and num_classes consistent across sub-configs, then checks
  /// every sub-config. Throws ConfigError.
  void validate() const;
  std::vector<std::string> resolved_class_names() const;
  /// Copy with model.task, model.num_classes and synth.num_classes aligned to
  /// the top-level task and the class list.
  RunConfig normalized() const;
};

std::vector<std::string> default_class_names(std::int64_t k);

/// Parses a JSON config; unknown keys, wrong types and invalid values raise
/// ConfigError naming the field (and line for syntax errors).
RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
/// Applies `dotted.key=value` overrides to a config.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides);
std::string dump_run_config(const RunConfig& config);
/// Parses a standalone generator spec (the fields of dataset.synth).
SynthSpec parse_synth_spec(const std::string& text);

enum class ParamScope { Full, Inference, Generator };

/// Adam with optional L2 weight decay, moments keyed by parameter name.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const OptimizerConfig& config);

  void step(const nn::ParamList& params, double lr);
  std::int64_t steps() const { return t_; }

  struct Moments {
    Tensor m, v;
  };
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  OptimizerConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct TrainState {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::string best_metric_name;
  std::optional<double> best_metric;
};

struct Batch {
  Tensor x1, x2;  // [B, 3, H, W]
  std::vector<LabelMap> change;
  std::vector<LabelMap> sem_t1, sem_t2;  // SCD only
};

Batch make_batch(std::span<const BiTemporalSample> samples, Task task);

struct StepLog {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  LossReport losses;
};

std::string to_jsonl(const StepLog& log);

/// Model, transition generator, frozen class embeddings and optimizer.
class Trainer {
 public:
  explicit Trainer(const RunConfig& config);

  const RunConfig& config() const { return config_; }
  const ChangeModel& model() const { return model_; }
  ChangeModel& model() { return model_; }
  const TransitionGenerator& generator() const { return generator_; }
  TransitionGenerator& generator() { return generator_; }
  const ClassEmbeddingSet& embeddings() const { return embeddings_; }
  ClassEmbeddingSet& embeddings() { return embeddings_; }
  Adam& optimizer() { return optimizer_; }
  const Adam& optimizer() const { return optimizer_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

  /// Trainable parameters: model followed by the generator (when used).
  nn::ParamList parameters() const;
  std::int64_t param_count(ParamScope scope) const;

  /// Learning rate applied at `step` for a run of `total_steps`.
  double learning_rate(std::int64_t step, std::int64_t total_steps) const;

  /// Differentiable loss of one batch without touching parameters.
  WeightedLoss compute_loss(const Batch& batch) const;
  /// One forward, backward and optimizer update. Throws NumericError naming
  /// the first non-finite term, leaving parameters untouched.
  LossReport train_step(const Batch& batch, std::int64_t total_steps);

  /// Steps per epoch for a training set of `n` samples.
  std::int64_t steps_per_epoch(std::int64_t n) const;
  std::int64_t total_steps(std::int64_t n) const;
  /// Runs until `until_step` (default: the end of the schedule). Batches are
  /// a pure function of (seed, epoch), so resumed runs match uninterrupted ones.
  void fit(std::span<const BiTemporalSample> train, const std::function<void(const StepLog&)>& on_step = {},
           std::optional<std::int64_t> until_step = std::nullopt);

 private:
  RunConfig config_;
  ChangeModel model_;
  TransitionGenerator generator_;
  ClassEmbeddingSet embeddings_;
  Adam optimizer_;
  TrainState state_;
};

/// Total parameters of model plus generator, per scope.
std::int64_t param_count(const ChangeModel& model, const TransitionGenerator& generator, ParamScope scope);

struct Prediction {
  LabelMap change;
  std::optional<LabelMap> sem_t1, sem_t2;
};

using PredictionHook = std::function<void(const BiTemporalSample&, Prediction&)>;

struct EvalReport {
  Task task = Task::BCD;
  std::size_t samples = 0;
  ConfusionMatrix change_cm;             // 2 x 2
  std::optional<ConfusionMatrix> scd_cm;  // (K+1) x (K+1)
  BcdMetrics change;
  std::optional<ScdMetrics> scd;
  /// Per-sample maps for stratified reporting (SCD: both phases stacked).
  std::vector<StratifiedSample> per_sample;
};

struct EvalOptions {
  std::int64_t batch_size = 8;
  bool keep_samples = false;
  PredictionHook hook;
};

/// Runs forward_inference only. Throws InputError on an empty dataset and
/// ConfigError when `task` differs from the model's task.
EvalReport evaluate(const ChangeModel& model, std::span<const BiTemporalSample> data, Task task,
                    const EvalOptions& options = {});
Prediction predict(const PredictionSet& set, std::int64_t index);
std::string format_report(const EvalReport& report);
/// Labels of the maps kept in EvalReport::per_sample.
std::vector<std::string> stratum_class_names(Task task, const std::vector<std::string>& class_names);

enum class AblationAxis { LossTerms, Asi, Directionality };
std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(const std::string& s);

struct AblationRow {
  std::string group;
  std::string arm;
  RunConfig config;
  std::int64_t trainable_params = 0;
  LossReport final_loss;
  EvalReport report;
};

struct AblationTable {
  Task task = Task::BCD;
  std::vector<AblationRow> rows;
  std::string format() const;
};

/// Arm configs for the requested axes; an empty set yields the single
/// baseline (change losses only).
std::vector<std::pair<std::string, std::vector<std::pair<std::string, RunConfig>>>> ablation_arms(
    const RunConfig& base, const std::set<AblationAxis>& axes);

/// Trains every arm from the same seed and evaluates it. Identical arm
/// configs are trained once.
AblationTable run_ablation_matrix(const RunConfig& base, const std::set<AblationAxis>& axes,
                                  std::span<const BiTemporalSample> train, std::span<const BiTemporalSample> test,
                                  const std::function<void(const std::string&, const StepLog&)>& on_step = {});

/// Training and test samples described by the dataset config.
std::vector<BiTemporalSample> load_dataset(const RunConfig& config, const std::string& split);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void checkpoint_save(const Trainer& trainer, const std::filesystem::path& path);
/// Restores parameters, optimizer moments and state into `trainer`. Throws
/// DataError on a bad file or version and ShapeError naming the first
/// mismatched parameter.
void checkpoint_load(Trainer& trainer, const std::filesystem::path& path);
/// Reads only the stored run config.
RunConfig checkpoint_config(const std::filesystem::path& path);
/// Builds a trainer from the stored config and restores it.
Trainer checkpoint_restore(const std::filesystem::path& path);

}  // namespace tcd
