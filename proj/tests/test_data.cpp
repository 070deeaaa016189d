// Copyright 2026 The tcd Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tcd/data.hpp"
#include "tcd/errors.hpp"
#include "tcd/png_io.hpp"

namespace tcd {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("tcd_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

png::Image rgb(std::int64_t h, std::int64_t w, std::uint8_t v) {
  png::Image img;
  img.height = h;
  img.width = w;
  img.channels = 3;
  img.data.assign(static_cast<std::size_t>(h * w * 3), v);
  return img;
}

void write_split(const fs::path& root, const std::string& split, const std::vector<std::string>& ids) {
  std::ofstream out(root / (split + ".txt"));
  for (const auto& id : ids) out << id << "\n";
}

void write_bcd(const fs::path& root, const std::string& id, std::int64_t h, std::int64_t w, std::int64_t hb) {
  for (const char* d : {"A", "B", "label"}) fs::create_directories(root / d);
  png::write_rgb(root / "A" / (id + ".png"), rgb(h, w, 10));
  png::write_rgb(root / "B" / (id + ".png"), rgb(hb, w, 200));
  LabelMap l(h, w, 0);
  l.at(0, 0) = 255;
  png::write_labels(root / "label" / (id + ".png"), l);
}

void write_scd(const fs::path& root, const std::string& id, const LabelMap& a, const LabelMap& b) {
  for (const char* d : {"A", "B", "labelA", "labelB"}) fs::create_directories(root / d);
  png::write_rgb(root / "A" / (id + ".png"), rgb(a.height, a.width, 0));
  png::write_rgb(root / "B" / (id + ".png"), rgb(a.height, a.width, 255));
  png::write_labels(root / "labelA" / (id + ".png"), a);
  png::write_labels(root / "labelB" / (id + ".png"), b);
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

TEST(Loader, BcdTriplet) {
  TempDir dir("bcd_triplet");
  write_bcd(dir.path(), "s0", 32, 64, 32);
  write_split(dir.path(), "train", {"s0"});
  DatasetSpec spec{dir.path(), DatasetLayout::Bcd};
  EXPECT_EQ(list_split(spec, "train"), std::vector<std::string>{"s0"});
  const BiTemporalSample s = load_sample(spec, "s0");
  EXPECT_FALSE(s.sem_t1.has_value());
  EXPECT_FALSE(s.sem_t2.has_value());
  EXPECT_EQ(s.image_t1.shape(), (Shape{3, 32, 64}));
  EXPECT_DOUBLE_EQ(s.image_t1[0], 10.0 / 255.0);
  EXPECT_DOUBLE_EQ(s.image_t2[0], 200.0 / 255.0);
  EXPECT_EQ(s.change.at(0, 0), 1);
  EXPECT_EQ(s.change.at(0, 1), 0);
  EXPECT_EQ(validate_split(spec, "train"), 1u);
}

TEST(Loader, DistinctDiagnostics) {
  TempDir dir("diagnostics");
  write_bcd(dir.path(), "bad_size", 32, 32, 64);
  DatasetSpec spec{dir.path(), DatasetLayout::Bcd};

  const std::string missing = message_of([&] { load_sample(spec, "absent"); });
  EXPECT_NE(missing.find("missing"), std::string::npos) << missing;

  const std::string size = message_of([&] { load_sample(spec, "bad_size"); });
  EXPECT_NE(size.find("size mismatch"), std::string::npos) << size;
  EXPECT_NE(size.find("64x32"), std::string::npos) << size;
  EXPECT_NE(size.find("32x32"), std::string::npos) << size;

  LabelMap a(32, 32, 0), b(32, 32, 0);
  b.at(3, 3) = 7;
  write_scd(dir.path(), "bad_label", a, b);
  DatasetSpec scd{dir.path(), DatasetLayout::Scd, 256, {"a", "b", "c"}};
  const std::string label = message_of([&] { load_sample(scd, "bad_label"); });
  EXPECT_NE(label.find("label 7"), std::string::npos) << label;

  const std::string split = message_of([&] { list_split(spec, "nosuch"); });
  EXPECT_NE(split.find("split"), std::string::npos) << split;
  EXPECT_THROW(list_split(DatasetSpec{dir.path() / "gone"}, "train"), DataError);
}

TEST(Loader, RejectsSidesNotDivisibleBy32) {
  TempDir dir("divisible");
  write_bcd(dir.path(), "odd", 48, 32, 48);
  EXPECT_THROW(load_sample(DatasetSpec{dir.path(), DatasetLayout::Bcd}, "odd"), DataError);
}

TEST(Loader, DerivedChangeMask) {
  TempDir dir("derived");
  LabelMap a(32, 32, 2);
  write_scd(dir.path(), "same", a, a);
  LabelMap b = a;
  b.at(1, 2) = 0;
  b.at(5, 5) = kIgnoreLabel;
  write_scd(dir.path(), "diff", a, b);
  DatasetSpec spec{dir.path(), DatasetLayout::Scd, 256, {"a", "b", "c"}};

  const BiTemporalSample same = load_sample(spec, "same");
  for (Label v : same.change.data) EXPECT_EQ(v, 0);
  const BiTemporalSample diff = load_sample(spec, "diff");
  EXPECT_EQ(diff.change.at(1, 2), 1);
  EXPECT_EQ(diff.change.at(5, 5), kIgnoreLabel);
  EXPECT_EQ(diff.change.at(0, 0), 0);
  EXPECT_DOUBLE_EQ(diff.change_ratio(), 1.0 / 1023.0);

  // A provided change mask wins over the derived one.
  fs::create_directories(dir.path() / "change");
  png::write_labels(dir.path() / "change" / "same.png", LabelMap(32, 32, 1));
  for (Label v : load_sample(spec, "same").change.data) EXPECT_EQ(v, 1);
}

TEST(Loader, MinChangeRatioFiltersSplit) {
  TempDir dir("filter");
  LabelMap a(32, 32, 0), b(32, 32, 0);
  write_scd(dir.path(), "still", a, a);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 32; ++x) b.at(y, x) = 1;
  write_scd(dir.path(), "moved", a, b);
  write_split(dir.path(), "train", {"still", "moved"});
  DatasetSpec spec{dir.path(), DatasetLayout::Scd};
  EXPECT_EQ(list_split(spec, "train").size(), 2u);
  spec.min_change_ratio = 0.05;
  EXPECT_EQ(list_split(spec, "train"), std::vector<std::string>{"moved"});
}

TEST(Synth, SpecValidation) {
  SynthSpec s;
  EXPECT_NO_THROW(s.validate());
  s.height = 40;
  EXPECT_THROW(s.validate(), ConfigError);
  s = SynthSpec{};
  s.change_ratio_target = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = SynthSpec{};
  s.shapes.clear();
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Synth, ZeroTargetMeansJitterOnly) {
  SynthSpec s;
  s.change_ratio_target = 0.0;
  s.seed = 3;
  const BiTemporalSample p = synth_pair(s);
  for (Label v : p.change.data) EXPECT_EQ(v, 0);
  EXPECT_EQ(*p.sem_t1, *p.sem_t2);
  EXPECT_FALSE(p.image_t1 == p.image_t2);
}

TEST(Synth, DeterministicPerSeed) {
  SynthSpec s;
  s.seed = 11;
  const BiTemporalSample a = synth_pair(s), b = synth_pair(s);
  EXPECT_EQ(a.image_t1, b.image_t1);
  EXPECT_EQ(a.image_t2, b.image_t2);
  EXPECT_EQ(a.change, b.change);
  s.seed = 12;
  EXPECT_FALSE(synth_pair(s).change == a.change);
}

TEST(Synth, RealizedRatioWithinTolerance) {
  SynthSpec s;
  s.change_ratio_target = 0.25;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    s.seed = seed;
    const BiTemporalSample p = synth_pair(s);
    EXPECT_GE(p.change_ratio(), 0.20);
    EXPECT_LE(p.change_ratio(), 0.30);
  }
}

TEST(Synth, ChangeMaskEqualsLabelDifference) {
  SynthSpec s;
  s.num_classes = 6;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    s.seed = seed;
    const BiTemporalSample p = synth_pair(s);
    for (std::size_t i = 0; i < p.change.data.size(); ++i) {
      EXPECT_EQ(p.change.data[i], p.sem_t1->data[i] != p.sem_t2->data[i] ? 1 : 0);
      EXPECT_LT(p.sem_t1->data[i], 6);
    }
    for (double v : p.image_t1.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synth, DatasetSamplesAreStableAndRangeAware) {
  SynthSpec s;
  s.change_ratio_target = 0.05;
  s.change_ratio_max = 0.5;
  const BiTemporalSample a = synth_dataset_sample(s, "train", 3), b = synth_dataset_sample(s, "train", 3);
  EXPECT_EQ(a.id, "train_00003");
  EXPECT_EQ(a.change, b.change);
  EXPECT_FALSE(synth_dataset_sample(s, "test", 3).change == a.change);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 40; ++i) {
    const double r = synth_dataset_sample(s, "train", i).change_ratio();
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    EXPECT_GE(r, 0.05 * 0.8);
    EXPECT_LE(r, 0.5 * 1.2);
  }
  EXPECT_LT(lo, 0.15);
  EXPECT_GT(hi, 0.35);
}

TEST(Crop, Invariants) {
  SynthSpec s;
  s.height = 128;
  s.width = 128;
  s.seed = 5;
  const BiTemporalSample p = synth_pair(s);

  const BiTemporalSample same = crop_augment(p, 128, 1);
  EXPECT_EQ(same.image_t1.shape(), (Shape{3, 128, 128}));
  EXPECT_EQ(same.change, p.change);
  EXPECT_EQ(same.image_t2, p.image_t2);

  const BiTemporalSample a = crop_augment(p, 64, 9), b = crop_augment(p, 64, 9);
  EXPECT_EQ(a.change, b.change);
  EXPECT_EQ(a.image_t1, b.image_t1);
  EXPECT_EQ(a.change.height, 64);

  EXPECT_THROW(crop_augment(p, 48, 1), InputError);
  EXPECT_THROW(crop_augment(p, 160, 1), InputError);
}

TEST(Crop, WindowIsSharedByRastersAndMasks) {
  // Marker pixels encode their own position so a crop can be traced back.
  BiTemporalSample s;
  s.id = "marker";
  s.image_t1 = Tensor({3, 64, 64});
  s.image_t2 = Tensor({3, 64, 64});
  s.change = LabelMap(64, 64);
  s.sem_t1 = LabelMap(64, 64);
  s.sem_t2 = LabelMap(64, 64);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const double code = (y * 64 + x) / 4096.0;
      for (int c = 0; c < 3; ++c) {
        s.image_t1[(c * 64 + y) * 64 + x] = code;
        s.image_t2[(c * 64 + y) * 64 + x] = code;
      }
      s.change.at(y, x) = static_cast<Label>((y + x) % 2);
      s.sem_t1->at(y, x) = static_cast<Label>(y % 200);
      s.sem_t2->at(y, x) = static_cast<Label>(x % 200);
    }
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const BiTemporalSample c = crop_augment(s, 32, seed);
    const auto code = static_cast<int>(std::lround(c.image_t1[0] * 4096.0));
    const int oy = code / 64, ox = code % 64;
    EXPECT_EQ(c.sem_t1->at(0, 0), oy);
    EXPECT_EQ(c.sem_t2->at(0, 0), ox);
    EXPECT_EQ(c.change.at(0, 0), (oy + ox) % 2);
    EXPECT_EQ(static_cast<int>(std::lround(c.image_t2[31 * 32 + 31] * 4096.0)), (oy + 31) * 64 + ox + 31);
  }

  LabelMap all(64, 64, 1);
  s.change = all;
  EXPECT_EQ(crop_augment(s, 32, 4).change_ratio(), 1.0);
}

TEST(Disk, ScdRoundTrip) {
  TempDir dir("round_trip");
  SynthSpec s;
  s.seed = 2;
  std::vector<BiTemporalSample> samples{synth_dataset_sample(s, "train", 0), synth_dataset_sample(s, "train", 1)};
  write_scd_dataset(dir.path(), samples, "train");
  DatasetSpec spec{dir.path(), DatasetLayout::Scd, 64, {"a", "b", "c", "d"}};
  EXPECT_EQ(validate_split(spec, "train"), 2u);
  const auto ids = list_split(spec, "train");
  ASSERT_EQ(ids.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const BiTemporalSample back = load_sample(spec, ids[i]);
    EXPECT_EQ(back.change, samples[i].change);
    EXPECT_EQ(*back.sem_t1, *samples[i].sem_t1);
    EXPECT_EQ(*back.sem_t2, *samples[i].sem_t2);
    EXPECT_LE(max_abs_diff(back.image_t1, samples[i].image_t1), 0.5 / 255.0 + 1e-12);
  }
}

TEST(Layout, Names) {
  EXPECT_EQ(parse_layout("bcd"), DatasetLayout::Bcd);
  EXPECT_EQ(parse_layout(to_string(DatasetLayout::Scd)), DatasetLayout::Scd);
  EXPECT_THROW(parse_layout("xyz"), ConfigError);
}

}  // namespace
}  // namespace tcd
