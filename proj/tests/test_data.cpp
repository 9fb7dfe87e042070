// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "fbnet/data.hpp"
#include "fbnet/error.hpp"
#include "fbnet/tensor_io.hpp"

using namespace fbnet;
using namespace fbnet::data;
namespace fs = std::filesystem;

namespace {

bool same_sample(const Sample& a, const Sample& b) {
  return a.labels == b.labels && a.image.shape() == b.image.shape() &&
         std::memcmp(a.image.data().data(), b.image.data().data(),
                     a.image.numel() * sizeof(float)) == 0;
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fbnet_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A sample whose first image channel encodes its own label (label / 16),
// built from axis-aligned blocks.
Sample marker_sample(std::mt19937_64& rng, std::int64_t h, std::int64_t w) {
  Sample s;
  s.id = "marker";
  s.labels = IntTensor({h, w}, 0);
  for (int n = 0; n < 6; ++n) {
    const std::int64_t bh = 12 + rng() % 20, bw = 12 + rng() % 20;
    const std::int64_t top = rng() % (h - bh), left = rng() % (w - bw);
    const auto cls = static_cast<std::int32_t>(1 + rng() % 4);
    for (std::int64_t y = top; y < top + bh; ++y) {
      for (std::int64_t x = left; x < left + bw; ++x) s.labels.data()[y * w + x] = cls;
    }
  }
  s.image = Tensor<float>({3, h, w}, 0.5f);
  for (std::int64_t i = 0; i < h * w; ++i) s.image.data()[i] = s.labels.data()[i] / 16.0f;
  return s;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic under the seed") {
  SyntheticSpec spec;
  auto a = generate_synthetic(spec, 6);
  auto b = generate_synthetic(spec, 6);
  for (int i = 0; i < 6; ++i) CHECK(same_sample(a[i], b[i]));
  CHECK(a[3].id == "000003");
  spec.seed = 2;
  auto c = generate_synthetic(spec, 6);
  CHECK_FALSE(same_sample(a[0], c[0]));
  CHECK(generate_synthetic(spec, 0).empty());
}

TEST_CASE("synthetic labels stay in range and images in [0, 1]") {
  std::mt19937_64 rng(1);
  for (int classes : {2, 3, 5, 9}) {
    SyntheticSpec spec;
    spec.num_classes = classes;
    spec.height = 24 + 8 * static_cast<int>(rng() % 5);
    spec.width = 24 + 8 * static_cast<int>(rng() % 5);
    spec.max_extent = std::min(spec.height, spec.width);
    spec.seed = rng();
    for (const auto& s : generate_synthetic(spec, 10)) {
      CHECK(s.labels.shape() == Shape{spec.height, spec.width});
      CHECK(s.image.shape() == Shape{3, spec.height, spec.width});
      for (auto v : s.labels.data()) CHECK(((v >= 0 && v < classes) || v == 255));
      for (float v : s.image.data()) CHECK((v >= 0.0f && v <= 1.0f));
      CHECK_NOTHROW(check_labels(s, classes));
    }
  }
}

TEST_CASE("noise-free synthetic pixels carry their class color exactly") {
  SyntheticSpec spec;
  spec.noise = 0;
  spec.jitter = 0;
  std::set<int> seen;
  for (const auto& s : generate_synthetic(spec, 20)) {
    const auto hw = s.height() * s.width();
    for (std::int64_t p = 0; p < hw; ++p) {
      const int cls = s.labels.data()[p];
      if (cls == 0) continue;
      seen.insert(cls);
      const auto color = class_color(cls, spec.num_classes);
      const double r = s.image.data()[p];
      const bool dark = std::abs(r - 0.5 * color[0]) < 1e-6 && color[0] > 1e-3;
      for (int c = 0; c < 3; ++c) {
        const double want = (dark ? 0.5 : 1.0) * color[c];
        CHECK(std::abs(s.image.data()[c * hw + p] - want) < 1e-6);
      }
    }
  }
  CHECK(seen.size() == 4);
}

TEST_CASE("without noise and jitter a 1x1 linear probe separates a class perfectly") {
  SyntheticSpec spec;
  spec.noise = 0;
  spec.jitter = 0;
  const auto ds = generate_synthetic(spec, 16);
  const int target = 1;
  // Perceptron on (r, g, b, 1) for class `target` versus the rest.
  std::vector<std::array<double, 4>> x;
  std::vector<int> y;
  for (const auto& s : ds) {
    const auto hw = s.height() * s.width();
    for (std::int64_t p = 0; p < hw; ++p) {
      x.push_back({s.image.data()[p], s.image.data()[hw + p], s.image.data()[2 * hw + p], 1.0});
      y.push_back(s.labels.data()[p] == target ? 1 : -1);
    }
  }
  std::array<double, 4> w{};
  auto correct = [&] {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += w[k] * x[i][k];
      ok += (s > 0 ? 1 : -1) == y[i] ? 1 : 0;
    }
    return ok;
  };
  for (int epoch = 0; epoch < 500 && correct() < x.size(); ++epoch) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += w[k] * x[i][k];
      if ((s > 0 ? 1 : -1) != y[i]) {
        for (int k = 0; k < 4; ++k) w[k] += y[i] * x[i][k];
      }
    }
  }
  CHECK(correct() == x.size());
}

TEST_CASE("synthetic spec parsing") {
  auto spec = SyntheticSpec::parse("# toy\nnum_classes = 4\nnoise=0.1\nseed=9\n");
  CHECK(spec.num_classes == 4);
  CHECK(spec.noise == 0.1);
  CHECK(spec.seed == 9u);
  CHECK(SyntheticSpec::parse(spec.to_text()).to_text() == spec.to_text());
  CHECK_THROWS_AS(SyntheticSpec::parse("colour=red\n"), ConfigError);
  CHECK_THROWS_AS(SyntheticSpec::parse("num_classes=1\n"), ConfigError);
  CHECK_THROWS_AS(SyntheticSpec::parse("noise=abc\n"), ConfigError);
  CHECK_THROWS_AS(SyntheticSpec::parse("noise\n"), ConfigError);
  CHECK_THROWS_AS(SyntheticSpec::parse("seed=1\nseed=2\n"), ConfigError);
}

TEST_CASE("dataset files round trip bitwise") {
  auto dir = fresh_dir("roundtrip");
  SyntheticSpec spec;
  auto ds = generate_synthetic(spec, 5);
  save_dataset(dir, ds);
  std::ofstream(dir / "README.txt") << "unrelated\n";
  auto back = load_dataset(dir);
  REQUIRE(back.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(back[i].id == ds[i].id);
    CHECK(same_sample(back[i], ds[i]));
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset loading errors") {
  auto dir = fresh_dir("errors");
  CHECK(load_dataset(dir).empty());
  CHECK_THROWS_AS(load_dataset(dir / "missing"), IoError);

  SyntheticSpec spec;
  auto ds = generate_synthetic(spec, 2);
  save_dataset(dir, ds);
  io::save_fbt(dir / "zzz_orphan.img.fbt", ds[0].image);
  try {
    load_dataset(dir);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("zzz_orphan") != std::string::npos);
  }
  fs::remove(dir / "zzz_orphan.img.fbt");

  io::save_fbt(dir / "000001.lbl.fbt", IntTensor({10, 10}));
  CHECK_THROWS_AS(load_dataset(dir), DataError);
  fs::remove_all(dir);

  Sample bad = ds[0];
  bad.labels.data()[5] = 7;
  CHECK_THROWS_AS(check_labels(bad, 5), DataError);
  bad.labels.data()[5] = 255;
  CHECK_NOTHROW(check_labels(bad, 5));
}

TEST_CASE("augmentation no-op path is the identity") {
  SyntheticSpec spec;
  const auto s = generate_sample(spec, 0);
  AugmentConfig cfg;
  cfg.base_size = 64;
  cfg.crop_size = 64;
  AugmentParams p;
  p.scale = 1.0;
  p.flip = false;
  CHECK(same_sample(apply_augment(s, cfg, p), s));
}

TEST_CASE("augmentation keeps labels valid") {
  SyntheticSpec spec;
  AugmentConfig cfg;
  std::mt19937_64 rng(3);
  for (const auto& s : generate_synthetic(spec, 10)) {
    for (int k = 0; k < 10; ++k) {
      const auto a = augment(s, cfg, rng);
      CHECK(a.labels.shape() == Shape{64, 64});
      for (auto v : a.labels.data()) CHECK(((v >= 0 && v < spec.num_classes) || v == 255));
    }
  }
}

TEST_CASE("1000x600 resize and crop yields 480x480") {
  AugmentConfig cfg;
  cfg.base_size = 520;
  cfg.crop_size = 480;
  Sample s;
  s.image = Tensor<float>({3, 600, 1000}, 0.25f);
  s.labels = IntTensor({600, 1000}, 1);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 4; ++k) {
    const auto a = augment(s, cfg, rng);
    CHECK(a.image.shape() == Shape{3, 480, 480});
    CHECK(a.labels.shape() == Shape{480, 480});
  }
}

TEST_CASE("augmentation keeps image and labels aligned") {
  std::mt19937_64 rng(5);
  AugmentConfig cfg;
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = marker_sample(rng, 64 + 8 * (trial % 3), 64);
    const auto a = augment(s, cfg, rng);
    const std::int64_t h = a.height(), w = a.width();
    for (std::int64_t y = 2; y < h - 2; ++y) {
      for (std::int64_t x = 2; x < w - 2; ++x) {
        const auto label = a.labels.data()[y * w + x];
        if (label == 255) continue;
        bool uniform = true;
        for (int dy = -2; dy <= 2 && uniform; ++dy) {
          for (int dx = -2; dx <= 2; ++dx) {
            if (a.labels.data()[(y + dy) * w + x + dx] != label) {
              uniform = false;
              break;
            }
          }
        }
        if (!uniform) continue;
        const auto decoded = std::lround(a.image.data()[y * w + x] * 16.0);
        CHECK(decoded == label);
        ++checked;
      }
    }
  }
  CHECK(checked > 10000);
}

TEST_CASE("augmentation is deterministic under a seeded stream") {
  SyntheticSpec spec;
  const auto s = generate_sample(spec, 1);
  AugmentConfig cfg;
  for (std::uint64_t epoch = 0; epoch < 5; ++epoch) {
    auto r1 = derive_rng(7, epoch, 1);
    auto r2 = derive_rng(7, epoch, 1);
    CHECK(same_sample(augment(s, cfg, r1), augment(s, cfg, r2)));
  }
  auto a = derive_rng(7, 0, 1), b = derive_rng(7, 1, 0);
  CHECK(a() != b());
}

TEST_CASE("scale factors are uniform on [0.5, 2]") {
  AugmentConfig cfg;
  std::mt19937_64 rng(6);
  const int n = 10000;
  std::vector<double> draws;
  for (int i = 0; i < n; ++i) draws.push_back(draw_augment(64, 64, cfg, rng).scale);
  std::sort(draws.begin(), draws.end());
  double d = 0;
  for (int i = 0; i < n; ++i) {
    const double f = (draws[i] - 0.5) / 1.5;
    d = std::max({d, std::abs(f - double(i) / n), std::abs(f - double(i + 1) / n)});
  }
  CHECK(draws.front() >= 0.5);
  CHECK(draws.back() <= 2.0);
  CHECK(d < 1.36 / std::sqrt(double(n)));
}

TEST_CASE("eval resize") {
  std::mt19937_64 rng(7);
  SyntheticSpec spec;
  spec.height = 72;
  spec.width = 96;
  const auto s = generate_sample(spec, 0);
  CHECK(same_sample(eval_resize(s, 72), s));
  for (int trial = 0; trial < 20; ++trial) {
    Sample r;
    const std::int64_t h = 10 + rng() % 90, w = 10 + rng() % 90;
    r.image = Tensor<float>({3, h, w});
    for (auto& v : r.image.data()) v = static_cast<float>(rng() % 1000) / 1000.0f;
    r.labels = IntTensor({h, w});
    for (auto& v : r.labels.data()) v = static_cast<std::int32_t>(rng() % 5);
    const std::int64_t base = 20 + rng() % 60;
    const auto once = eval_resize(r, base);
    CHECK(std::min(once.height(), once.width()) == base);
    const double ratio = double(w) / double(h);
    const double got = double(once.width()) / double(once.height());
    // Rounding moves the longer side by at most half a pixel.
    CHECK(std::abs(got - ratio) <= 0.5 / base + 1e-12);
    CHECK(same_sample(eval_resize(once, base), once));
  }
}

TEST_CASE("crop, pad, flip and label subsampling") {
  Sample s;
  s.image = Tensor<float>({3, 2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 1, 2, 3, 4, 5, 6, 1, 2, 3,
                                                        4, 5, 6});
  s.labels = IntTensor({2, 3}, {0, 1, 2, 3, 4, 0});
  const auto f = flip_sample(s);
  CHECK(f.labels == IntTensor({2, 3}, {2, 1, 0, 0, 4, 3}));
  CHECK(f.image.data()[0] == 3.0f);
  const auto p = pad_sample(s, 3, 4);
  CHECK(p.labels == IntTensor({3, 4}, {0, 1, 2, 255, 3, 4, 0, 255, 255, 255, 255, 255}));
  CHECK(p.image.data()[3] == 0.0f);
  const auto c = crop_sample(s, 1, 1, 1, 2);
  CHECK(c.labels == IntTensor({1, 2}, {4, 0}));
  CHECK_THROWS_AS(crop_sample(s, 1, 2, 1, 2), ShapeError);

  IntTensor big({8, 8});
  for (int i = 0; i < 64; ++i) big.data()[i] = i;
  CHECK(downsample_labels(big, 4) == IntTensor({2, 2}, {18, 22, 50, 54}));
  CHECK(downsample_labels(big, 8) == IntTensor({1, 1}, {36}));
}

TEST_CASE("class histogram sums to the pixel count") {
  SyntheticSpec spec;
  const auto ds = generate_synthetic(spec, 7);
  const auto hist = class_histogram(ds, spec.num_classes);
  std::int64_t sum = 0;
  for (auto v : hist) sum += v;
  CHECK(sum == 7 * 64 * 64);
  CHECK(hist.back() == 0);
}
