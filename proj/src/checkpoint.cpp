// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "tcd/errors.hpp"
#include "tcd/train.hpp"

namespace tcd {

// Layout: magic, u32 version, u64 header length, JSON header, u64 array
// count, then per array: u32 name length, name, u32 rank, i64 dims, f64 data.
// Integers and doubles are stored in host byte order.

namespace {

constexpr char kMagic[8] = {'T', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("truncated checkpoint " + path.string());
  return v;
}

void put_array(std::ostream& os, const std::string& name, const Tensor& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

struct Contents {
  nlohmann::json header;
  std::map<std::string, Tensor> arrays;
};

Contents read_file(const std::filesystem::path& path, bool header_only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(path.string() + " is not a checkpoint");
  const auto version = take<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint " + path.string() + " has version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  }
  const auto hlen = take<std::uint64_t>(in, path);
  std::string text(hlen, '\0');
  in.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint " + path.string());
  Contents c;
  try {
    c.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (header_only) return c;
  const auto count = take<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = take<std::uint32_t>(in, path);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const auto rank = take<std::uint32_t>(in, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(take<std::int64_t>(in, path));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint " + path.string());
    c.arrays.emplace(std::move(name), std::move(t));
  }
  return c;
}

}  // namespace

void checkpoint_save(const Trainer& trainer, const std::filesystem::path& path) {
  const TrainState& st = trainer.state();
  nlohmann::json header{
      {"config", nlohmann::json::parse(dump_run_config(trainer.config()))},
      {"step", st.step},
      {"epoch", st.epoch},
      {"adam_steps", trainer.optimizer().steps()},
      {"best_metric_name", st.best_metric_name},
      {"best_metric", st.best_metric ? nlohmann::json(*st.best_metric) : nlohmann::json(nullptr)},
  };
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));

    const auto params = trainer.parameters();
    const auto& moments = trainer.optimizer().moments();
    std::uint64_t count = params.size() + 2 * moments.size() + 1;
    put<std::uint64_t>(os, count);
    for (const auto& p : params) put_array(os, "param/" + p.name, p.var.value());
    for (const auto& [name, m] : moments) {
      put_array(os, "adam.m/" + name, m.m);
      put_array(os, "adam.v/" + name, m.v);
    }
    put_array(os, "text/embeddings", trainer.embeddings().embeddings);
    if (!os) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

void checkpoint_load(Trainer& trainer, const std::filesystem::path& path) {
  Contents c = read_file(path, false);
  const auto params = trainer.parameters();
  // Validate everything before mutating the trainer.
  for (const auto& p : params) {
    auto it = c.arrays.find("param/" + p.name);
    if (it == c.arrays.end()) throw ShapeError("checkpoint " + path.string() + " lacks parameter " + p.name);
    if (it->second.shape() != p.var.shape()) {
      throw ShapeError("parameter " + p.name + ": checkpoint shape " + to_string(it->second.shape()) +
                       " vs model shape " + to_string(p.var.shape()));
    }
  }
  auto emb = c.arrays.find("text/embeddings");
  if (emb == c.arrays.end() || emb->second.shape() != trainer.embeddings().embeddings.shape()) {
    throw ShapeError("checkpoint class embeddings do not match the configured class list");
  }

  for (const auto& p : params) const_cast<ag::Var&>(p.var).mutable_value() = c.arrays.at("param/" + p.name);
  trainer.embeddings().embeddings = emb->second;
  auto& moments = trainer.optimizer().moments();
  moments.clear();
  for (auto& [name, t] : c.arrays) {
    if (name.rfind("adam.m/", 0) == 0) moments[name.substr(7)].m = t;
    if (name.rfind("adam.v/", 0) == 0) moments[name.substr(7)].v = t;
  }
  const auto& h = c.header;
  trainer.optimizer().set_steps(h.at("adam_steps").get<std::int64_t>());
  TrainState& st = trainer.state();
  st.step = h.at("step").get<std::int64_t>();
  st.epoch = h.at("epoch").get<std::int64_t>();
  st.best_metric_name = h.at("best_metric_name").get<std::string>();
  st.best_metric.reset();
  if (!h.at("best_metric").is_null()) st.best_metric = h.at("best_metric").get<double>();
}

RunConfig checkpoint_config(const std::filesystem::path& path) {
  const Contents c = read_file(path, true);
  return parse_run_config(c.header.at("config").dump());
}

Trainer checkpoint_restore(const std::filesystem::path& path) {
  RunConfig config = checkpoint_config(path);
  // The stored embeddings are restored below; a file path may no longer exist.
  config.text_embeddings.reset();
  Trainer trainer(config);
  checkpoint_load(trainer, path);
  return trainer;
}

}  // namespace tcd
