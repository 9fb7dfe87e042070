// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "fbnet/data.hpp"
#include "fbnet/model.hpp"
#include "fbnet/optim.hpp"

namespace fbnet {

// model.* keys. Returns false for an unknown key.
bool set_model_key(ModelConfig& cfg, const std::string& key, const std::string& value);
// Every model.* key, one key=value per line, in a fixed order.
std::string model_config_text(const ModelConfig& cfg);

// Everything a train / ablate run needs, read from a key=value file:
//
//   seed, out_dir
//   model.{strategy, stage_channels, blocks_per_stage, c_mid, c_sam,
//          cam_ratio, sam_ratio, sam_qk_bias, num_classes, head_dropout}
//   optim.{base_lr, momentum, weight_decay, lr_power,
//          backbone_lr_multiplier, epochs, batch_size, aux_weight}
//   data.{dir, val_dir, val_fraction}
//   synth.{count, num_classes, height, width, min_shapes, max_shapes,
//          min_extent, max_extent, noise, jitter, texture, seed}
//   aug.{enabled, base_size, crop_size, scale_min, scale_max, flip}
//
// With data.dir empty the synthetic generator supplies synth.count samples.
// An empty out_dir disables all run files.
// Without data.val_dir the last val_fraction of the ids (sorted) is held out.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  ModelConfig model;
  OptimConfig optim;
  std::string data_dir;
  std::string val_dir;
  double val_fraction = 0.2;
  std::int64_t synth_count = 250;
  data::SyntheticSpec synth;
  bool augment = true;
  data::AugmentConfig aug;

  void validate() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  // All resolved keys; parse(to_text()) reproduces the config.
  std::string to_text() const;
};

}  // namespace fbnet
