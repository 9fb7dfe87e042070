// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fbnet/tensor.hpp"

namespace fbnet::data {

inline constexpr std::int32_t kIgnoreLabel = 255;

struct Sample {
  std::string id;
  Tensor<float> image;  // [3 x H x W], values in [0, 1]
  IntTensor labels;     // [H x W], values in {0..L-1} or 255

  std::int64_t height() const { return labels.dim(0); }
  std::int64_t width() const { return labels.dim(1); }
};

using Dataset = std::vector<Sample>;

// Independent RNG stream for a (seed, a, b) triple, e.g. (seed, epoch, index).
std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Parameters of the synthetic scene generator. Each image has a textured,
// low-saturation background (class 0) with shapes painted over it. Class c
// (c >= 1) has shape type (c - 1) mod 4 from {rectangle, ellipse, stripes,
// triangle} and its own saturated base color; per-shape color jitter and
// per-pixel Gaussian noise blur the color cues.
struct SyntheticSpec {
  int num_classes = 5;
  int height = 64;
  int width = 64;
  int min_shapes = 2;
  int max_shapes = 4;
  int min_extent = 14;  // shape bounding-box side, pixels
  int max_extent = 30;
  double noise = 0.05;   // std-dev of additive per-pixel noise
  double jitter = 0.08;  // max per-channel offset of a shape's color
  double texture = 0.12;  // amplitude of the background pattern
  std::uint64_t seed = 1;

  void validate() const;
  // key=value lines; '#' starts a comment. Unknown keys throw ConfigError.
  static SyntheticSpec parse(const std::string& text);
  static SyntheticSpec load(const std::filesystem::path& path);
  std::string to_text() const;
  // Applies one key=value pair; returns false if the key is unknown.
  bool set(const std::string& key, const std::string& value);
};

// Base color of a class in the synthetic generator (RGB in [0, 1]).
std::array<double, 3> class_color(int cls, int num_classes);

Sample generate_sample(const SyntheticSpec& spec, std::int64_t index);
// Samples are named 000000, 000001, ... and depend only on (spec, index).
Dataset generate_synthetic(const SyntheticSpec& spec, std::int64_t n);

// Writes <id>.img.fbt (f32 [3 x H x W]) and <id>.lbl.fbt (i32 [H x W]).
void save_sample(const std::filesystem::path& dir, const Sample& s);
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
// Reads every <id>.img.fbt / <id>.lbl.fbt pair, sorted by id. Other files
// are ignored. Throws DataError on an unpaired file or a shape mismatch.
Dataset load_dataset(const std::filesystem::path& dir);

// Throws DataError if a label lies outside {0..L-1} and is not 255.
void check_labels(const Sample& s, int num_classes);

// Bilinear resize for the image (align-corners false), nearest for labels.
Sample resize_sample(const Sample& s, std::int64_t height, std::int64_t width);
// Extents after scaling the smaller side to `base`, aspect ratio kept.
std::pair<std::int64_t, std::int64_t> base_extent(std::int64_t height, std::int64_t width,
                                                  std::int64_t base);
Sample eval_resize(const Sample& s, std::int64_t base);
// Pads bottom/right to the requested extent with image 0 / label 255.
Sample pad_sample(const Sample& s, std::int64_t height, std::int64_t width);
Sample crop_sample(const Sample& s, std::int64_t top, std::int64_t left, std::int64_t height,
                   std::int64_t width);
Sample flip_sample(const Sample& s);

// Nearest-neighbour label subsampling by an integer factor: output (i, j)
// takes input (f i + f / 2, f j + f / 2).
IntTensor downsample_labels(const IntTensor& labels, int factor);

struct AugmentConfig {
  std::int64_t base_size = 72;
  std::int64_t crop_size = 64;
  double scale_min = 0.5;
  double scale_max = 2.0;
  bool flip = true;

  void validate() const;
};

struct AugmentParams {
  double scale = 1.0;
  bool flip = false;
  std::int64_t top = 0, left = 0;  // crop origin in the scaled (padded) image
};

// Draws scale, then crop origin, then flip from `rng`.
AugmentParams draw_augment(std::int64_t height, std::int64_t width, const AugmentConfig& cfg,
                           std::mt19937_64& rng);
// Smaller side to base_size, then scale by params.scale (one combined
// resize), pad to crop_size if needed, crop, optional horizontal flip.
Sample apply_augment(const Sample& s, const AugmentConfig& cfg, const AugmentParams& params);
Sample augment(const Sample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

// Per-class pixel counts; index L counts ignored pixels.
std::vector<std::int64_t> class_histogram(const Dataset& ds, int num_classes);

}  // namespace fbnet::data
