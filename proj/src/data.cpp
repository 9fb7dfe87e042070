// SPDX-License-Identifier: Apache-2.0
#include "fbnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "fbnet/error.hpp"
#include "fbnet/keyvalue.hpp"
#include "fbnet/ops.hpp"
#include "fbnet/tensor_io.hpp"

namespace fbnet::data {

namespace fs = std::filesystem;

std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

// ---- synthetic spec ----

void SyntheticSpec::validate() const {
  if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must lie in [2, 255]");
  if (height < 1 || width < 1) throw ConfigError("canvas extent must be positive");
  if (min_shapes < 0 || max_shapes < min_shapes) {
    throw ConfigError("shape count range must satisfy 0 <= min_shapes <= max_shapes");
  }
  if (min_extent < 2 || max_extent < min_extent) {
    throw ConfigError("shape extent range must satisfy 2 <= min_extent <= max_extent");
  }
  if (noise < 0 || jitter < 0 || texture < 0) {
    throw ConfigError("noise, jitter and texture must be non-negative");
  }
}

bool SyntheticSpec::set(const std::string& key, const std::string& value) {
  if (key == "num_classes") num_classes = kv::to_int(key, value);
  else if (key == "height") height = kv::to_int(key, value);
  else if (key == "width") width = kv::to_int(key, value);
  else if (key == "min_shapes") min_shapes = kv::to_int(key, value);
  else if (key == "max_shapes") max_shapes = kv::to_int(key, value);
  else if (key == "min_extent") min_extent = kv::to_int(key, value);
  else if (key == "max_extent") max_extent = kv::to_int(key, value);
  else if (key == "noise") noise = kv::to_double(key, value);
  else if (key == "jitter") jitter = kv::to_double(key, value);
  else if (key == "texture") texture = kv::to_double(key, value);
  else if (key == "seed") seed = kv::to_uint64(key, value);
  else return false;
  return true;
}

SyntheticSpec SyntheticSpec::parse(const std::string& text) {
  SyntheticSpec spec;
  for (const auto& e : kv::parse(text)) {
    if (!spec.set(e.key, e.value)) {
      throw ConfigError("line " + std::to_string(e.line) + ": unknown synthetic-spec key '" +
                        e.key + "'");
    }
  }
  spec.validate();
  return spec;
}

SyntheticSpec SyntheticSpec::load(const fs::path& path) {
  return parse(kv::read_file(path.string()));
}

std::string SyntheticSpec::to_text() const {
  std::string out;
  auto put = [&](const char* k, const std::string& v) { out += std::string(k) + "=" + v + "\n"; };
  put("num_classes", std::to_string(num_classes));
  put("height", std::to_string(height));
  put("width", std::to_string(width));
  put("min_shapes", std::to_string(min_shapes));
  put("max_shapes", std::to_string(max_shapes));
  put("min_extent", std::to_string(min_extent));
  put("max_extent", std::to_string(max_extent));
  put("noise", kv::format_double(noise));
  put("jitter", kv::format_double(jitter));
  put("texture", kv::format_double(texture));
  put("seed", std::to_string(seed));
  return out;
}

// ---- generator ----

std::array<double, 3> class_color(int cls, int num_classes) {
  if (cls <= 0) return {0.5, 0.5, 0.5};
  // Evenly spaced hues at high saturation.
  const double hue = 6.0 * (cls - 1) / std::max(1, num_classes - 1);
  const double v = 0.85, s = 0.8;
  const double c = v * s;
  const double x = c * (1 - std::abs(std::fmod(hue, 2.0) - 1));
  const double m = v - c;
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hue)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& ch : rgb) ch += m;
  return rgb;
}

namespace {

enum class ShapeKind { kRectangle, kEllipse, kStripes, kTriangle };

std::string sample_id(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(index));
  return buf;
}

}  // namespace

Sample generate_sample(const SyntheticSpec& spec, std::int64_t index) {
  spec.validate();
  auto rng = derive_rng(spec.seed, static_cast<std::uint64_t>(index), 0x5eed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::int64_t h = spec.height, w = spec.width, hw = h * w;

  Sample s;
  s.id = sample_id(index);
  s.image = Tensor<float>({3, h, w});
  s.labels = IntTensor({h, w}, 0);
  std::vector<double> rgb(3 * hw);

  // Background: grey level with a faint tint and a low-frequency pattern.
  const double grey = 0.35 + 0.25 * unit(rng);
  double tint[3];
  for (auto& t : tint) t = 0.04 * (unit(rng) - 0.5);
  const double fy = 2 * std::numbers::pi * (0.5 + 2.5 * unit(rng)) / h;
  const double fx = 2 * std::numbers::pi * (0.5 + 2.5 * unit(rng)) / w;
  const double phase = 2 * std::numbers::pi * unit(rng);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double pattern = spec.texture * std::sin(fy * y + phase) * std::cos(fx * x - phase);
      for (int c = 0; c < 3; ++c) rgb[c * hw + y * w + x] = grey + tint[c] + pattern;
    }
  }

  const int count =
      spec.min_shapes + static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                      spec.max_shapes - spec.min_shapes + 1));
  for (int n = 0; n < count; ++n) {
    const int cls = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.num_classes - 1));
    const auto kind = static_cast<ShapeKind>((cls - 1) % 4);
    const auto extent_range = static_cast<std::uint64_t>(spec.max_extent - spec.min_extent + 1);
    const std::int64_t bh = std::min<std::int64_t>(h, spec.min_extent + rng() % extent_range);
    const std::int64_t bw = std::min<std::int64_t>(w, spec.min_extent + rng() % extent_range);
    const std::int64_t top = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(h - bh + 1));
    const std::int64_t left = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(w - bw + 1));
    auto color = class_color(cls, spec.num_classes);
    for (auto& c : color) c += spec.jitter * (2 * unit(rng) - 1);
    const bool vertical = unit(rng) < 0.5;
    const int period = 6;

    for (std::int64_t y = top; y < top + bh; ++y) {
      for (std::int64_t x = left; x < left + bw; ++x) {
        const double py = (y - top + 0.5) / bh, px = (x - left + 0.5) / bw;  // in (0, 1)
        bool inside = true;
        double shade = 1.0;
        switch (kind) {
          case ShapeKind::kRectangle: break;
          case ShapeKind::kEllipse: {
            const double dy = 2 * py - 1, dx = 2 * px - 1;
            inside = dx * dx + dy * dy <= 1.0;
            break;
          }
          case ShapeKind::kStripes: {
            const std::int64_t along = vertical ? x - left : y - top;
            if ((along / (period / 2)) % 2 == 1) shade = 0.5;
            break;
          }
          case ShapeKind::kTriangle:
            inside = std::abs(px - 0.5) <= 0.5 * py;
            break;
        }
        if (!inside) continue;
        s.labels.data()[y * w + x] = cls;
        for (int c = 0; c < 3; ++c) rgb[c * hw + y * w + x] = shade * color[c];
      }
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto img = s.image.data();
  for (std::int64_t i = 0; i < 3 * hw; ++i) {
    const double noisy = rgb[i] + (spec.noise > 0 ? spec.noise * gauss(rng) : 0.0);
    img[i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
  return s;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::int64_t n) {
  if (n < 0) throw ConfigError("sample count must be non-negative");
  Dataset ds;
  ds.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) ds.push_back(generate_sample(spec, i));
  return ds;
}

// ---- files ----

namespace {

constexpr std::string_view kImageSuffix = ".img.fbt";
constexpr std::string_view kLabelSuffix = ".lbl.fbt";

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void save_sample(const fs::path& dir, const Sample& s) {
  io::save_fbt(dir / (s.id + std::string(kImageSuffix)), s.image);
  io::save_fbt(dir / (s.id + std::string(kLabelSuffix)), s.labels);
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  for (const auto& s : ds) save_sample(dir, s);
}

Dataset load_dataset(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("dataset directory '" + dir.string() + "' not found");
  struct Pair {
    fs::path image, labels;
  };
  std::map<std::string, Pair> pairs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (ends_with(name, kImageSuffix)) {
      pairs[name.substr(0, name.size() - kImageSuffix.size())].image = entry.path();
    } else if (ends_with(name, kLabelSuffix)) {
      pairs[name.substr(0, name.size() - kLabelSuffix.size())].labels = entry.path();
    }
  }
  std::string orphans;
  for (const auto& [id, p] : pairs) {
    if (p.image.empty() || p.labels.empty()) {
      orphans += (orphans.empty() ? "" : ", ") + id + (p.image.empty() ? " (no image)" : " (no labels)");
    }
  }
  if (!orphans.empty()) throw DataError("unpaired dataset files: " + orphans);

  Dataset ds;
  for (const auto& [id, p] : pairs) {
    Sample s;
    s.id = id;
    s.image = io::load_f32(p.image);
    s.labels = io::load_i32(p.labels);
    if (s.labels.rank() != 2 || s.image.rank() != 3 || s.image.dim(0) != 3 ||
        s.image.dim(1) != s.labels.dim(0) || s.image.dim(2) != s.labels.dim(1)) {
      throw DataError("sample '" + id + "': image " + shape_str(s.image.shape()) +
                      " does not match labels " + shape_str(s.labels.shape()));
    }
    ds.push_back(std::move(s));
  }
  return ds;
}

void check_labels(const Sample& s, int num_classes) {
  for (std::int32_t v : s.labels.data()) {
    if (v != kIgnoreLabel && (v < 0 || v >= num_classes)) {
      throw DataError("sample '" + s.id + "' has label " + std::to_string(v) + " outside [0, " +
                      std::to_string(num_classes - 1) + "] and not 255");
    }
  }
}

// ---- geometric transforms ----

Sample resize_sample(const Sample& s, std::int64_t height, std::int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("resize target must be positive");
  if (height == s.height() && width == s.width()) return s;
  const std::int64_t h = s.height(), w = s.width();
  Tensor<float> batched({1, 3, h, w}, std::vector<float>(s.image.data().begin(), s.image.data().end()));
  auto resized = ops::resize_bilinear(batched, height, width);
  Sample out;
  out.id = s.id;
  out.image = Tensor<float>({3, height, width},
                            std::vector<float>(resized.data().begin(), resized.data().end()));
  out.labels = IntTensor({height, width});
  auto nearest = [](std::int64_t dst, std::int64_t in, std::int64_t outn) {
    return std::min<std::int64_t>(in - 1, static_cast<std::int64_t>((dst + 0.5) * in / outn));
  };
  for (std::int64_t y = 0; y < height; ++y) {
    const auto sy = nearest(y, h, height);
    for (std::int64_t x = 0; x < width; ++x) {
      out.labels.data()[y * width + x] = s.labels.data()[sy * w + nearest(x, w, width)];
    }
  }
  return out;
}

std::pair<std::int64_t, std::int64_t> base_extent(std::int64_t height, std::int64_t width,
                                                  std::int64_t base) {
  const std::int64_t shorter = std::min(height, width);
  auto scaled = [&](std::int64_t v) {
    return v == shorter ? base : std::max<std::int64_t>(1, std::llround(double(v) * base / shorter));
  };
  return {scaled(height), scaled(width)};
}

Sample eval_resize(const Sample& s, std::int64_t base) {
  const auto [h, w] = base_extent(s.height(), s.width(), base);
  return resize_sample(s, h, w);
}

Sample pad_sample(const Sample& s, std::int64_t height, std::int64_t width) {
  const std::int64_t h = s.height(), w = s.width();
  if (height <= h && width <= w) return s;
  height = std::max(height, h);
  width = std::max(width, w);
  Sample out;
  out.id = s.id;
  out.image = Tensor<float>({3, height, width}, 0.0f);
  out.labels = IntTensor({height, width}, kIgnoreLabel);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.image.data()[(c * height + y) * width + x] = s.image.data()[(c * h + y) * w + x];
      }
      out.labels.data()[y * width + x] = s.labels.data()[y * w + x];
    }
  }
  return out;
}

Sample crop_sample(const Sample& s, std::int64_t top, std::int64_t left, std::int64_t height,
                   std::int64_t width) {
  const std::int64_t h = s.height(), w = s.width();
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > h || left + width > w) {
    throw ShapeError("crop window exceeds the sample extent");
  }
  Sample out;
  out.id = s.id;
  out.image = Tensor<float>({3, height, width});
  out.labels = IntTensor({height, width});
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.image.data()[(c * height + y) * width + x] =
            s.image.data()[(c * h + top + y) * w + left + x];
      }
      out.labels.data()[y * width + x] = s.labels.data()[(top + y) * w + left + x];
    }
  }
  return out;
}

Sample flip_sample(const Sample& s) {
  const std::int64_t h = s.height(), w = s.width();
  Sample out;
  out.id = s.id;
  out.image = Tensor<float>({3, h, w});
  out.labels = IntTensor({h, w});
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.image.data()[(c * h + y) * w + x] = s.image.data()[(c * h + y) * w + (w - 1 - x)];
      }
      out.labels.data()[y * w + x] = s.labels.data()[y * w + (w - 1 - x)];
    }
  }
  return out;
}

IntTensor downsample_labels(const IntTensor& labels, int factor) {
  if (factor < 1) throw ConfigError("label downsampling factor must be positive");
  const std::int64_t h = labels.dim(0), w = labels.dim(1);
  const std::int64_t oh = h / factor, ow = w / factor;
  if (oh < 1 || ow < 1) throw ShapeError("label map too small to downsample");
  IntTensor out({oh, ow});
  for (std::int64_t y = 0; y < oh; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      out.data()[y * ow + x] = labels.data()[(factor * y + factor / 2) * w + factor * x + factor / 2];
    }
  }
  return out;
}

// ---- augmentation ----

void AugmentConfig::validate() const {
  if (base_size < 1 || crop_size < 1) throw ConfigError("base_size and crop_size must be positive");
  if (crop_size % 8 != 0) throw ConfigError("crop_size must be divisible by 8");
  if (!(scale_min > 0) || scale_max < scale_min) {
    throw ConfigError("scale range must satisfy 0 < scale_min <= scale_max");
  }
}

namespace {

std::pair<std::int64_t, std::int64_t> scaled_extent(std::int64_t height, std::int64_t width,
                                                    const AugmentConfig& cfg, double scale) {
  const double shorter = static_cast<double>(std::min(height, width));
  const double factor = cfg.base_size * scale / shorter;
  return {std::max<std::int64_t>(1, std::llround(height * factor)),
          std::max<std::int64_t>(1, std::llround(width * factor))};
}

}  // namespace

AugmentParams draw_augment(std::int64_t height, std::int64_t width, const AugmentConfig& cfg,
                           std::mt19937_64& rng) {
  AugmentParams p;
  p.scale = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
  const auto [h, w] = scaled_extent(height, width, cfg, p.scale);
  const std::int64_t slack_y = std::max<std::int64_t>(0, h - cfg.crop_size);
  const std::int64_t slack_x = std::max<std::int64_t>(0, w - cfg.crop_size);
  p.top = std::uniform_int_distribution<std::int64_t>(0, slack_y)(rng);
  p.left = std::uniform_int_distribution<std::int64_t>(0, slack_x)(rng);
  p.flip = cfg.flip && std::bernoulli_distribution(0.5)(rng);
  return p;
}

Sample apply_augment(const Sample& s, const AugmentConfig& cfg, const AugmentParams& params) {
  const auto [h, w] = scaled_extent(s.height(), s.width(), cfg, params.scale);
  Sample out = pad_sample(resize_sample(s, h, w), cfg.crop_size, cfg.crop_size);
  out = crop_sample(out, params.top, params.left, cfg.crop_size, cfg.crop_size);
  return params.flip ? flip_sample(out) : out;
}

Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  return apply_augment(s, cfg, draw_augment(s.height(), s.width(), cfg, rng));
}

std::vector<std::int64_t> class_histogram(const Dataset& ds, int num_classes) {
  std::vector<std::int64_t> hist(static_cast<std::size_t>(num_classes) + 1, 0);
  for (const auto& s : ds) {
    for (std::int32_t v : s.labels.data()) {
      if (v >= 0 && v < num_classes) ++hist[static_cast<std::size_t>(v)];
      else ++hist.back();
    }
  }
  return hist;
}

}  // namespace fbnet::data
