// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tcd/errors.hpp"
#include "tcd/train.hpp"

namespace tcd {

using nlohmann::json;

namespace {

std::string shape_name(ShapeKind k) { return k == ShapeKind::Rectangle ? "rectangle" : "blob"; }

ShapeKind parse_shape(const std::string& s) {
  if (s == "rectangle") return ShapeKind::Rectangle;
  if (s == "blob") return ShapeKind::Blob;
  throw ConfigError("unknown synth shape '" + s + "' (expected rectangle or blob)");
}

json to_json(const RunConfig& c) {
  json shapes = json::array();
  for (auto s : c.dataset.synth.shapes) shapes.push_back(shape_name(s));
  return json{
      {"task", to_string(c.task)},
      {"seed", c.seed},
      {"model",
       {{"in_channels", c.model.in_channels},
        {"stage_channels", c.model.stage_channels},
        {"stage_strides", c.model.stage_strides},
        {"num_classes", c.model.num_classes},
        {"decoder_width", c.model.decoder_width},
        {"attention_heads", c.model.attention_heads},
        {"sr_ratios", c.model.sr_ratios},
        {"blocks_per_stage", c.model.blocks_per_stage},
        {"mlp_ratio", c.model.mlp_ratio}}},
      {"ttg",
       {{"num_experts", c.ttg.num_experts},
        {"fusion_dim", c.ttg.fusion_dim},
        {"decoder_layers", c.ttg.decoder_layers},
        {"attention_heads", c.ttg.attention_heads},
        {"asi_enabled", c.ttg.asi_enabled},
        {"text_dim", c.ttg.text_dim},
        {"pos_grid", c.ttg.pos_grid}}},
      {"losses",
       {{"lambda1", c.losses.weights.lambda1},
        {"lambda2", c.losses.weights.lambda2},
        {"tau", c.losses.weights.tau},
        {"enable_recon", c.losses.enable_recon},
        {"enable_trans", c.losses.enable_trans},
        {"directionality", c.losses.directionality ? json(to_string(*c.losses.directionality)) : json(nullptr)}}},
      {"optimizer",
       {{"kind", c.optimizer.kind},
        {"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"weight_decay", c.optimizer.weight_decay},
        {"grad_clip", c.optimizer.grad_clip}}},
      {"schedule", {{"kind", c.schedule.kind}, {"total_steps", c.schedule.total_steps}}},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"dataset",
       {{"kind", c.dataset.kind},
        {"synth",
         {{"height", c.dataset.synth.height},
          {"width", c.dataset.synth.width},
          {"num_classes", c.dataset.synth.num_classes},
          {"change_ratio_target", c.dataset.synth.change_ratio_target},
          {"change_ratio_max", c.dataset.synth.change_ratio_max},
          {"shapes", shapes},
          {"pseudo_change_noise", c.dataset.synth.pseudo_change_noise},
          {"seed", c.dataset.synth.seed}}},
        {"train_size", c.dataset.train_size},
        {"test_size", c.dataset.test_size},
        {"root", c.dataset.root.string()},
        {"layout", to_string(c.dataset.layout)},
        {"train_split", c.dataset.train_split},
        {"test_split", c.dataset.test_split},
        {"crop_size", c.dataset.crop_size},
        {"min_change_ratio", c.dataset.min_change_ratio}}},
      {"class_names", c.class_names},
      {"text_embeddings", c.text_embeddings ? json(c.text_embeddings->string()) : json(nullptr)},
  };
}

// Rejects keys that the default schema does not have. Null defaults mark
// optional fields and accept any value.
void check_known(const json& user, const json& schema, const std::string& prefix) {
  if (!user.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config field '" + path + "'");
    const json& s = schema.at(it.key());
    if (s.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config field '" + path + "' must be an object");
      check_known(it.value(), s, path);
    }
  }
}

class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  template <typename T>
  T get(const std::string& path) const {
    const json& v = at(path);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + path + "' has the wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  template <typename T, std::size_t N>
  std::array<T, N> array(const std::string& path) const {
    const auto v = get<std::vector<T>>(path);
    if (v.size() != N) throw ConfigError("config field '" + path + "' must have " + std::to_string(N) + " entries");
    std::array<T, N> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
  }

  const json& at(const std::string& path) const {
    const json* cur = &root_;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) cur = &cur->at(part);
    return *cur;
  }

 private:
  const json& root_;
};

RunConfig from_json(const json& j) {
  const Reader r(j);
  RunConfig c;
  c.task = parse_task(r.get<std::string>("task"));
  c.seed = r.get<std::uint64_t>("seed");
  c.model.in_channels = r.get<std::int64_t>("model.in_channels");
  c.model.stage_channels = r.array<std::int64_t, 4>("model.stage_channels");
  c.model.stage_strides = r.array<std::int64_t, 4>("model.stage_strides");
  c.model.num_classes = r.get<std::int64_t>("model.num_classes");
  c.model.decoder_width = r.get<std::int64_t>("model.decoder_width");
  c.model.attention_heads = r.array<int, 4>("model.attention_heads");
  c.model.sr_ratios = r.array<int, 4>("model.sr_ratios");
  c.model.blocks_per_stage = r.get<int>("model.blocks_per_stage");
  c.model.mlp_ratio = r.get<int>("model.mlp_ratio");
  c.ttg.num_experts = r.get<int>("ttg.num_experts");
  c.ttg.fusion_dim = r.get<std::int64_t>("ttg.fusion_dim");
  c.ttg.decoder_layers = r.get<int>("ttg.decoder_layers");
  c.ttg.attention_heads = r.get<int>("ttg.attention_heads");
  c.ttg.asi_enabled = r.get<bool>("ttg.asi_enabled");
  c.ttg.text_dim = r.get<std::int64_t>("ttg.text_dim");
  c.ttg.pos_grid = r.get<std::int64_t>("ttg.pos_grid");
  c.losses.weights.lambda1 = r.get<double>("losses.lambda1");
  c.losses.weights.lambda2 = r.get<double>("losses.lambda2");
  c.losses.weights.tau = r.get<double>("losses.tau");
  c.losses.enable_recon = r.get<bool>("losses.enable_recon");
  c.losses.enable_trans = r.get<bool>("losses.enable_trans");
  if (!r.at("losses.directionality").is_null()) {
    c.losses.directionality = parse_directionality(r.get<std::string>("losses.directionality"));
  }
  c.optimizer.kind = r.get<std::string>("optimizer.kind");
  c.optimizer.lr = r.get<double>("optimizer.lr");
  c.optimizer.beta1 = r.get<double>("optimizer.beta1");
  c.optimizer.beta2 = r.get<double>("optimizer.beta2");
  c.optimizer.eps = r.get<double>("optimizer.eps");
  c.optimizer.weight_decay = r.get<double>("optimizer.weight_decay");
  c.optimizer.grad_clip = r.get<double>("optimizer.grad_clip");
  c.schedule.kind = r.get<std::string>("schedule.kind");
  c.schedule.total_steps = r.get<std::int64_t>("schedule.total_steps");
  c.batch_size = r.get<std::int64_t>("batch_size");
  c.epochs = r.get<std::int64_t>("epochs");
  c.dataset.kind = r.get<std::string>("dataset.kind");
  auto& s = c.dataset.synth;
  s.height = r.get<std::int64_t>("dataset.synth.height");
  s.width = r.get<std::int64_t>("dataset.synth.width");
  s.num_classes = r.get<std::int64_t>("dataset.synth.num_classes");
  s.change_ratio_target = r.get<double>("dataset.synth.change_ratio_target");
  s.change_ratio_max = r.get<double>("dataset.synth.change_ratio_max");
  s.shapes.clear();
  for (const auto& name : r.get<std::vector<std::string>>("dataset.synth.shapes")) s.shapes.insert(parse_shape(name));
  s.pseudo_change_noise = r.get<double>("dataset.synth.pseudo_change_noise");
  s.seed = r.get<std::uint64_t>("dataset.synth.seed");
  c.dataset.train_size = r.get<std::int64_t>("dataset.train_size");
  c.dataset.test_size = r.get<std::int64_t>("dataset.test_size");
  c.dataset.root = r.get<std::string>("dataset.root");
  c.dataset.layout = parse_layout(r.get<std::string>("dataset.layout"));
  c.dataset.train_split = r.get<std::string>("dataset.train_split");
  c.dataset.test_split = r.get<std::string>("dataset.test_split");
  c.dataset.crop_size = r.get<std::int64_t>("dataset.crop_size");
  c.dataset.min_change_ratio = r.get<double>("dataset.min_change_ratio");
  c.class_names = r.get<std::vector<std::string>>("class_names");
  if (!r.at("text_embeddings").is_null()) c.text_embeddings = r.get<std::string>("text_embeddings");
  return c;
}

json apply_override(json j, const json& schema, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings
  }
  json* cur = &j;
  const json* sch = &schema;
  std::stringstream ss(key);
  std::string part, done;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    done += (i ? "." : "") + parts[i];
    if (!sch->is_object() || !sch->contains(parts[i])) throw ConfigError("unknown config field '" + done + "' in --set");
    sch = &sch->at(parts[i]);
    cur = &(*cur)[parts[i]];
  }
  if (sch->is_object()) throw ConfigError("--set target '" + key + "' is a section, not a field");
  *cur = value;
  return j;
}

std::string line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) line += text[i] == '\n' ? 1 : 0;
  return std::to_string(line);
}

RunConfig finish(json merged, const json& schema, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) merged = apply_override(std::move(merged), schema, o);
  RunConfig c = from_json(merged).normalized();
  c.validate();
  return c;
}

}  // namespace

std::vector<std::string> default_class_names(std::int64_t k) {
  static const std::vector<std::string> kNames{"water", "ground", "low vegetation", "tree", "building", "playground"};
  std::vector<std::string> out;
  for (std::int64_t i = 0; i < k; ++i) {
    out.push_back(i < static_cast<std::int64_t>(kNames.size()) ? kNames[static_cast<std::size_t>(i)]
                                                               : "class " + std::to_string(i));
  }
  return out;
}

std::vector<std::string> RunConfig::resolved_class_names() const {
  return class_names.empty() ? default_class_names(model.num_classes) : class_names;
}

RunConfig RunConfig::normalized() const {
  RunConfig c = *this;
  c.model.task = c.task;
  if (!c.class_names.empty()) c.model.num_classes = static_cast<std::int64_t>(c.class_names.size());
  if (c.dataset.kind == "synthetic") c.dataset.synth.num_classes = c.model.num_classes;
  return c;
}

void RunConfig::validate() const {
  if (model.task != task) throw ConfigError("model task " + to_string(model.task) + " differs from run task " + to_string(task));
  model.validate();
  ttg.validate();
  losses.weights.validate();
  if (!class_names.empty() && static_cast<std::int64_t>(class_names.size()) != model.num_classes) {
    throw ConfigError("class_names has " + std::to_string(class_names.size()) + " entries but model.num_classes is " +
                      std::to_string(model.num_classes));
  }
  if (optimizer.kind != "adam") throw ConfigError("optimizer.kind '" + optimizer.kind + "' unsupported (expected adam)");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("optimizer.lr must be >= 0");
  if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps must be > 0");
  if (optimizer.weight_decay < 0.0 || optimizer.grad_clip < 0.0) {
    throw ConfigError("optimizer.weight_decay and optimizer.grad_clip must be >= 0");
  }
  if (schedule.kind != "linear" && schedule.kind != "constant") {
    throw ConfigError("schedule.kind '" + schedule.kind + "' unsupported (expected linear or constant)");
  }
  if (schedule.total_steps < 0) throw ConfigError("schedule.total_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (dataset.kind == "synthetic") {
    dataset.synth.validate();
    if (dataset.synth.num_classes != model.num_classes) {
      throw ConfigError("dataset.synth.num_classes " + std::to_string(dataset.synth.num_classes) +
                        " differs from model.num_classes " + std::to_string(model.num_classes));
    }
    if (dataset.train_size < 1 || dataset.test_size < 0) throw ConfigError("dataset sizes must be positive");
  } else if (dataset.kind == "directory") {
    if (dataset.root.empty()) throw ConfigError("dataset.root is required for directory datasets");
    if ((dataset.layout == DatasetLayout::Scd) != (task == Task::SCD)) {
      throw ConfigError("dataset.layout " + to_string(dataset.layout) + " does not match task " + to_string(task));
    }
  } else {
    throw ConfigError("dataset.kind '" + dataset.kind + "' unsupported (expected synthetic or directory)");
  }
  if (dataset.crop_size < 0 || dataset.crop_size % 32 != 0) throw ConfigError("dataset.crop_size must be a multiple of 32");
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  const json schema = to_json(RunConfig{});
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config syntax error at line " + line_of(text, e.byte) + ": " + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  check_known(user, schema, "");
  json merged = schema;
  merged.merge_patch(user);
  // merge_patch drops null-valued keys; restore optional fields.
  if (!merged["losses"].contains("directionality")) merged["losses"]["directionality"] = nullptr;
  if (!merged.contains("text_embeddings")) merged["text_embeddings"] = nullptr;
  return finish(std::move(merged), schema, overrides);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  const json schema = to_json(RunConfig{});
  return finish(to_json(base), schema, overrides);
}

std::string dump_run_config(const RunConfig& config) { return to_json(config).dump(2); }

SynthSpec parse_synth_spec(const std::string& text) {
  json spec;
  try {
    spec = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("synth spec syntax error at line " + line_of(text, e.byte) + ": " + e.what());
  }
  if (!spec.is_object()) throw ConfigError("synth spec must be a JSON object");
  json wrapped{{"dataset", {{"synth", spec}}}};
  if (spec.contains("num_classes")) wrapped["model"] = {{"num_classes", spec["num_classes"]}};
  try {
    return parse_run_config(wrapped.dump()).dataset.synth;
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    const std::string prefix = "dataset.synth.";
    for (auto pos = msg.find(prefix); pos != std::string::npos; pos = msg.find(prefix)) msg.erase(pos, prefix.size());
    throw ConfigError(msg);
  }
}

}  // namespace tcd
