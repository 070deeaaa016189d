// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include "tcd/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "tcd/errors.hpp"
#include "tcd/png_io.hpp"
#include "tcd/rng.hpp"

namespace tcd {

namespace fs = std::filesystem;

double BiTemporalSample::change_ratio() const {
  std::int64_t labelled = 0, changed = 0;
  for (Label v : change.data) {
    if (v == kIgnoreLabel) continue;
    ++labelled;
    changed += v != 0 ? 1 : 0;
  }
  return labelled ? static_cast<double>(changed) / static_cast<double>(labelled) : 0.0;
}

std::string to_string(DatasetLayout layout) { return layout == DatasetLayout::Bcd ? "bcd" : "scd"; }

DatasetLayout parse_layout(const std::string& s) {
  if (s == "bcd") return DatasetLayout::Bcd;
  if (s == "scd") return DatasetLayout::Scd;
  throw ConfigError("unknown dataset layout '" + s + "' (expected bcd or scd)");
}

namespace {

fs::path split_file(const DatasetSpec& spec, const std::string& split) {
  auto it = spec.splits.find(split);
  if (it != spec.splits.end()) return it->second.is_absolute() ? it->second : spec.root / it->second;
  return spec.root / (split + ".txt");
}

Tensor to_tensor(const png::Image& img) {
  Tensor t({3, img.height, img.width});
  const std::int64_t hw = img.height * img.width;
  for (std::int64_t p = 0; p < hw; ++p)
    for (std::int64_t c = 0; c < 3; ++c) t[c * hw + p] = img.data[static_cast<std::size_t>(p * 3 + c)] / 255.0;
  return t;
}

std::string shape_str(std::int64_t h, std::int64_t w) { return std::to_string(h) + "x" + std::to_string(w); }

void check_size(const fs::path& path, std::int64_t h, std::int64_t w, std::int64_t eh, std::int64_t ew) {
  if (h != eh || w != ew) {
    throw DataError("size mismatch: " + path.string() + " is " + shape_str(h, w) + " but the phase-1 image is " +
                    shape_str(eh, ew));
  }
}

LabelMap binarize(LabelMap m) {
  for (auto& v : m.data) v = v != 0 ? 1 : 0;
  return m;
}

void check_classes(const fs::path& path, const LabelMap& m, std::size_t k) {
  for (Label v : m.data) {
    if (v != kIgnoreLabel && v >= k) {
      throw DataError("label " + std::to_string(v) + " in " + path.string() + " is >= num_classes " + std::to_string(k));
    }
  }
}

}  // namespace

std::vector<std::string> list_split(const DatasetSpec& spec, const std::string& split) {
  if (!fs::exists(spec.root)) throw DataError("dataset root does not exist: " + spec.root.string());
  const fs::path file = split_file(spec, split);
  std::ifstream in(file);
  if (!in) throw DataError("missing split file " + file.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (spec.min_change_ratio > 0.0) {
    std::erase_if(ids, [&](const std::string& id) { return load_sample(spec, id).change_ratio() < spec.min_change_ratio; });
  }
  return ids;
}

BiTemporalSample load_sample(const DatasetSpec& spec, const std::string& id) {
  BiTemporalSample s;
  s.id = id;
  const fs::path pa = spec.root / "A" / (id + ".png");
  const fs::path pb = spec.root / "B" / (id + ".png");
  const png::Image a = png::read_rgb(pa);
  const png::Image b = png::read_rgb(pb);
  check_size(pb, b.height, b.width, a.height, a.width);
  if (a.height % 32 != 0 || a.width % 32 != 0) {
    throw DataError("image " + pa.string() + " is " + shape_str(a.height, a.width) + "; both sides must be divisible by 32");
  }
  s.image_t1 = to_tensor(a);
  s.image_t2 = to_tensor(b);

  if (spec.layout == DatasetLayout::Bcd) {
    const fs::path pl = spec.root / "label" / (id + ".png");
    s.change = binarize(png::read_labels(pl));
    check_size(pl, s.change.height, s.change.width, a.height, a.width);
    return s;
  }

  const fs::path pla = spec.root / "labelA" / (id + ".png");
  const fs::path plb = spec.root / "labelB" / (id + ".png");
  s.sem_t1 = png::read_labels(pla);
  s.sem_t2 = png::read_labels(plb);
  check_size(pla, s.sem_t1->height, s.sem_t1->width, a.height, a.width);
  check_size(plb, s.sem_t2->height, s.sem_t2->width, a.height, a.width);
  if (!spec.class_names.empty()) {
    check_classes(pla, *s.sem_t1, spec.class_names.size());
    check_classes(plb, *s.sem_t2, spec.class_names.size());
  }
  const fs::path pc = spec.root / "change" / (id + ".png");
  if (fs::exists(pc)) {
    s.change = binarize(png::read_labels(pc));
    check_size(pc, s.change.height, s.change.width, a.height, a.width);
  } else {
    s.change = LabelMap(a.height, a.width, 0);
    for (std::size_t i = 0; i < s.change.data.size(); ++i) {
      const Label l1 = s.sem_t1->data[i];
      const Label l2 = s.sem_t2->data[i];
      if (l1 == kIgnoreLabel || l2 == kIgnoreLabel) {
        s.change.data[i] = kIgnoreLabel;
      } else {
        s.change.data[i] = l1 != l2 ? 1 : 0;
      }
    }
  }
  return s;
}

std::size_t validate_split(const DatasetSpec& spec, const std::string& split) {
  const auto ids = list_split(spec, split);
  for (const auto& id : ids) load_sample(spec, id);
  return ids.size();
}

void SynthSpec::validate() const {
  if (height < 32 || width < 32 || height % 32 != 0 || width % 32 != 0) {
    throw ConfigError("synth canvas " + shape_str(height, width) + " must be positive multiples of 32");
  }
  if (num_classes < 2) throw ConfigError("synth.num_classes must be >= 2");
  if (num_classes >= kIgnoreLabel) throw ConfigError("synth.num_classes too large");
  if (change_ratio_target < 0.0 || change_ratio_target > 1.0) throw ConfigError("synth.change_ratio_target must be in [0, 1]");
  if (change_ratio_max < 0.0 || change_ratio_max > 1.0) throw ConfigError("synth.change_ratio_max must be in [0, 1]");
  if (shapes.empty()) throw ConfigError("synth.shapes must not be empty");
  if (pseudo_change_noise < 0.0) throw ConfigError("synth.pseudo_change_noise must be >= 0");
}

std::vector<std::array<double, 3>> class_palette(std::int64_t num_classes) {
  static constexpr std::array<std::array<double, 3>, 8> kBase{{{0.85, 0.20, 0.15},
                                                               {0.15, 0.55, 0.20},
                                                               {0.20, 0.30, 0.85},
                                                               {0.90, 0.85, 0.25},
                                                               {0.55, 0.35, 0.15},
                                                               {0.60, 0.60, 0.60},
                                                               {0.10, 0.80, 0.80},
                                                               {0.75, 0.30, 0.75}}};
  std::vector<std::array<double, 3>> out;
  for (std::int64_t k = 0; k < num_classes; ++k) {
    if (k < static_cast<std::int64_t>(kBase.size())) {
      out.push_back(kBase[static_cast<std::size_t>(k)]);
    } else {
      Rng rng(mix_seed(0x5eed, static_cast<std::uint64_t>(k)));
      out.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)});
    }
  }
  return out;
}

namespace {

// Pixels covered by a random shape with side lengths in [min_side, max_side].
std::vector<std::int64_t> random_shape(Rng& rng, const SynthSpec& spec, std::int64_t min_side, std::int64_t max_side) {
  std::vector<ShapeKind> kinds(spec.shapes.begin(), spec.shapes.end());
  const ShapeKind kind = kinds[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(kinds.size())))];
  max_side = std::max(min_side, max_side);
  const std::int64_t sh = min_side + rng.below(max_side - min_side + 1);
  const std::int64_t sw = min_side + rng.below(max_side - min_side + 1);
  const std::int64_t y0 = rng.below(std::max<std::int64_t>(1, spec.height - sh + 1));
  const std::int64_t x0 = rng.below(std::max<std::int64_t>(1, spec.width - sw + 1));
  std::vector<std::int64_t> px;
  const double cy = y0 + sh / 2.0, cx = x0 + sw / 2.0;
  for (std::int64_t y = y0; y < std::min(spec.height, y0 + sh); ++y) {
    for (std::int64_t x = x0; x < std::min(spec.width, x0 + sw); ++x) {
      if (kind == ShapeKind::Blob) {
        const double dy = (y + 0.5 - cy) / (sh / 2.0);
        const double dx = (x + 0.5 - cx) / (sw / 2.0);
        if (dy * dy + dx * dx > 1.0) continue;
      }
      px.push_back(y * spec.width + x);
    }
  }
  return px;
}

Label other_class(Rng& rng, Label current, std::int64_t k) {
  const auto shift = 1 + rng.below(k - 1);
  return static_cast<Label>((current + shift) % k);
}

void render(const LabelMap& sem, const SynthSpec& spec, Rng& rng, double gain, const std::array<double, 3>& offset,
            Tensor& out) {
  const auto palette = class_palette(spec.num_classes);
  const std::int64_t hw = spec.height * spec.width;
  out = Tensor({3, spec.height, spec.width});
  for (std::int64_t p = 0; p < hw; ++p) {
    const auto& col = palette[sem.data[static_cast<std::size_t>(p)]];
    for (std::int64_t c = 0; c < 3; ++c) {
      const double v = col[static_cast<std::size_t>(c)] * gain + offset[static_cast<std::size_t>(c)] + 0.04 * rng.normal();
      out[c * hw + p] = std::clamp(v, 0.0, 1.0);
    }
  }
}

}  // namespace

BiTemporalSample synth_pair(const SynthSpec& spec) {
  spec.validate();
  const std::int64_t n = spec.height * spec.width;
  const double target = spec.change_ratio_target;
  const double lo = 0.8 * target;
  const double hi = 1.2 * target;
  const std::int64_t side = std::min(spec.height, spec.width);

  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(attempt)));
    LabelMap sem1(spec.height, spec.width, static_cast<Label>(rng.below(spec.num_classes)));
    const std::int64_t regions = 4 + rng.below(7);
    for (std::int64_t r = 0; r < regions; ++r) {
      const auto cls = static_cast<Label>(rng.below(spec.num_classes));
      for (auto p : random_shape(rng, spec, side / 8, side / 2)) sem1.data[static_cast<std::size_t>(p)] = cls;
    }
    LabelMap sem2 = sem1;
    std::int64_t changed = 0;
    if (target > 0.0) {
      for (int tries = 0; tries < 300 && static_cast<double>(changed) < lo * n; ++tries) {
        // Shapes sized to the remaining need so the band is reachable.
        const double need = std::max(hi * n - static_cast<double>(changed), 1.0);
        const auto max_side = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::sqrt(need) * 1.1), 2, side);
        const auto px = random_shape(rng, spec, std::max<std::int64_t>(1, max_side / 3), max_side);
        const Label to = other_class(rng, sem1.data[static_cast<std::size_t>(px.empty() ? 0 : px.front())], spec.num_classes);
        std::int64_t delta = 0;
        for (auto p : px) {
          const auto i = static_cast<std::size_t>(p);
          const bool was = sem2.data[i] != sem1.data[i];
          const bool now = to != sem1.data[i];
          delta += static_cast<std::int64_t>(now) - static_cast<std::int64_t>(was);
        }
        if (static_cast<double>(changed + delta) > hi * n) continue;
        for (auto p : px) sem2.data[static_cast<std::size_t>(p)] = to;
        changed += delta;
      }
      const double ratio = static_cast<double>(changed) / static_cast<double>(n);
      if (ratio < lo || ratio > hi) continue;
    }

    BiTemporalSample s;
    s.id = "synth-" + std::to_string(spec.seed);
    s.change = LabelMap(spec.height, spec.width, 0);
    for (std::size_t i = 0; i < s.change.data.size(); ++i) s.change.data[i] = sem1.data[i] != sem2.data[i] ? 1 : 0;
    Rng paint(mix_seed(spec.seed, 0xc0105));
    render(sem1, spec, paint, 1.0, {0.0, 0.0, 0.0}, s.image_t1);
    const double j = spec.pseudo_change_noise;
    const double gain = 1.0 + paint.uniform(-j, j);
    const std::array<double, 3> offset{paint.uniform(-j, j) * 0.5, paint.uniform(-j, j) * 0.5, paint.uniform(-j, j) * 0.5};
    render(sem2, spec, paint, gain, offset, s.image_t2);
    s.sem_t1 = std::move(sem1);
    s.sem_t2 = std::move(sem2);
    return s;
  }
  throw DataError("synthetic change ratio " + std::to_string(target) + " unreachable after 100 attempts");
}

BiTemporalSample synth_dataset_sample(const SynthSpec& spec, const std::string& split, std::int64_t index) {
  SynthSpec s = spec;
  s.seed = mix_seed(mix_seed(spec.seed, fnv1a(split)), static_cast<std::uint64_t>(index));
  if (spec.change_ratio_max > spec.change_ratio_target) {
    Rng rng(mix_seed(s.seed, 0x7a26e7));
    s.change_ratio_target = rng.uniform(spec.change_ratio_target, spec.change_ratio_max);
  }
  BiTemporalSample out = synth_pair(s);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05lld", split.c_str(), static_cast<long long>(index));
  out.id = buf;
  return out;
}

BiTemporalSample crop_augment(const BiTemporalSample& sample, std::int64_t out_size, std::uint64_t seed) {
  const std::int64_t h = sample.height();
  const std::int64_t w = sample.width();
  if (out_size < 32 || out_size % 32 != 0 || out_size > h || out_size > w) {
    throw InputError("crop size " + std::to_string(out_size) + " must be a multiple of 32 within " + shape_str(h, w));
  }
  if (out_size == h && out_size == w) return sample;
  Rng rng(seed);
  const std::int64_t y0 = rng.below(h - out_size + 1);
  const std::int64_t x0 = rng.below(w - out_size + 1);
  auto crop_map = [&](const LabelMap& m) {
    LabelMap o(out_size, out_size);
    for (std::int64_t y = 0; y < out_size; ++y)
      for (std::int64_t x = 0; x < out_size; ++x) o.at(y, x) = m.at(y0 + y, x0 + x);
    return o;
  };
  auto crop_img = [&](const Tensor& t) {
    const std::int64_t c = t.dim(0);
    Tensor o({c, out_size, out_size});
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < out_size; ++y)
        for (std::int64_t x = 0; x < out_size; ++x) o[(ch * out_size + y) * out_size + x] = t[(ch * h + y0 + y) * w + x0 + x];
    return o;
  };
  BiTemporalSample out;
  out.id = sample.id;
  out.image_t1 = crop_img(sample.image_t1);
  out.image_t2 = crop_img(sample.image_t2);
  if (sample.sem_t1) out.sem_t1 = crop_map(*sample.sem_t1);
  if (sample.sem_t2) out.sem_t2 = crop_map(*sample.sem_t2);
  out.change = crop_map(sample.change);
  return out;
}

void write_scd_dataset(const fs::path& root, const std::vector<BiTemporalSample>& samples, const std::string& split) {
  for (const char* d : {"A", "B", "labelA", "labelB", "change"}) fs::create_directories(root / d);
  auto to_png = [](const Tensor& t) {
    png::Image img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.channels = 3;
    const std::int64_t hw = img.height * img.width;
    img.data.resize(static_cast<std::size_t>(hw * 3));
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t c = 0; c < 3; ++c)
        img.data[static_cast<std::size_t>(p * 3 + c)] = static_cast<std::uint8_t>(std::lround(std::clamp(t[c * hw + p], 0.0, 1.0) * 255.0));
    return img;
  };
  std::ofstream list(root / (split + ".txt"));
  if (!list) throw DataError("cannot write split file under " + root.string());
  for (const auto& s : samples) {
    if (!s.sem_t1 || !s.sem_t2) throw InputError("write_scd_dataset: sample " + s.id + " has no semantic masks");
    png::write_rgb(root / "A" / (s.id + ".png"), to_png(s.image_t1));
    png::write_rgb(root / "B" / (s.id + ".png"), to_png(s.image_t2));
    png::write_labels(root / "labelA" / (s.id + ".png"), *s.sem_t1);
    png::write_labels(root / "labelB" / (s.id + ".png"), *s.sem_t2);
    png::write_labels(root / "change" / (s.id + ".png"), s.change);
    list << s.id << '\n';
  }
}

}  // namespace tcd
