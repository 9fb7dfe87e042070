// SPDX-License-Identifier: Apache-2.0
#include "fbnet/run_config.hpp"

#include <sstream>
#include <vector>

#include "fbnet/error.hpp"
#include "fbnet/keyvalue.hpp"

namespace fbnet {
namespace {

std::array<int, 4> to_int4(const std::string& key, const std::string& value) {
  std::vector<std::string> items;
  std::istringstream in(value);
  for (std::string item; std::getline(in, item, ',');) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    items.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  if (items.size() != 4) {
    throw ConfigError("key '" + key + "': expected four comma-separated integers, got '" + value + "'");
  }
  std::array<int, 4> out{};
  for (int i = 0; i < 4; ++i) out[i] = kv::to_int(key, items[i]);
  return out;
}

std::string int4_text(const std::array<int, 4>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + "," +
         std::to_string(v[3]);
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

bool set_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "model.strategy") cfg.strategy = parse_strategy(value);
  else if (key == "model.stage_channels") cfg.backbone.stage_channels = to_int4(key, value);
  else if (key == "model.blocks_per_stage") cfg.backbone.blocks_per_stage = to_int4(key, value);
  else if (key == "model.c_mid") cfg.c_mid = kv::to_int(key, value);
  else if (key == "model.c_sam") cfg.c_sam = kv::to_int(key, value);
  else if (key == "model.cam_ratio") cfg.cam_ratio = kv::to_int(key, value);
  else if (key == "model.sam_ratio") cfg.sam_ratio = kv::to_int(key, value);
  else if (key == "model.sam_qk_bias") cfg.sam_qk_bias = kv::to_bool(key, value);
  else if (key == "model.num_classes") cfg.num_classes = kv::to_int(key, value);
  else if (key == "model.head_dropout") cfg.head_dropout = kv::to_double(key, value);
  else return false;
  return true;
}

std::string model_config_text(const ModelConfig& c) {
  std::string out;
  auto put = [&](const char* k, const std::string& v) { out += std::string(k) + "=" + v + "\n"; };
  put("model.strategy", std::string(strategy_key(c.strategy)));
  put("model.stage_channels", int4_text(c.backbone.stage_channels));
  put("model.blocks_per_stage", int4_text(c.backbone.blocks_per_stage));
  put("model.c_mid", std::to_string(c.c_mid));
  put("model.c_sam", std::to_string(c.c_sam));
  put("model.cam_ratio", std::to_string(c.cam_ratio));
  put("model.sam_ratio", std::to_string(c.sam_ratio));
  put("model.sam_qk_bias", bool_text(c.sam_qk_bias));
  put("model.num_classes", std::to_string(c.num_classes));
  put("model.head_dropout", kv::format_double(c.head_dropout));
  return out;
}

void RunConfig::validate() const {
  model.validate();
  optim.validate();
  if (!(val_fraction > 0) || val_fraction >= 1) throw ConfigError("data.val_fraction must lie in (0, 1)");
  if (data_dir.empty()) {
    synth.validate();
    if (synth_count < 2) throw ConfigError("synth.count must be at least 2");
    if (synth.num_classes != model.num_classes) {
      throw ConfigError("synth.num_classes (" + std::to_string(synth.num_classes) +
                        ") differs from model.num_classes (" + std::to_string(model.num_classes) + ")");
    }
  }
  aug.validate();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  for (const auto& e : kv::parse(text)) {
    const std::string& k = e.key;
    const std::string& v = e.value;
    bool known = true;
    if (k == "seed") c.seed = kv::to_uint64(k, v);
    else if (k == "out_dir") c.out_dir = v;
    else if (k.rfind("model.", 0) == 0) known = set_model_key(c.model, k, v);
    else if (k == "optim.base_lr") c.optim.base_lr = kv::to_double(k, v);
    else if (k == "optim.momentum") c.optim.momentum = kv::to_double(k, v);
    else if (k == "optim.weight_decay") c.optim.weight_decay = kv::to_double(k, v);
    else if (k == "optim.lr_power") c.optim.lr_power = kv::to_double(k, v);
    else if (k == "optim.backbone_lr_multiplier") c.optim.backbone_lr_multiplier = kv::to_double(k, v);
    else if (k == "optim.epochs") c.optim.epochs = kv::to_int(k, v);
    else if (k == "optim.batch_size") c.optim.batch_size = kv::to_int(k, v);
    else if (k == "optim.aux_weight") c.optim.aux_weight = kv::to_double(k, v);
    else if (k == "data.dir") c.data_dir = v;
    else if (k == "data.val_dir") c.val_dir = v;
    else if (k == "data.val_fraction") c.val_fraction = kv::to_double(k, v);
    else if (k == "synth.count") c.synth_count = kv::to_int64(k, v);
    else if (k.rfind("synth.", 0) == 0) known = c.synth.set(k.substr(6), v);
    else if (k == "aug.enabled") c.augment = kv::to_bool(k, v);
    else if (k == "aug.base_size") c.aug.base_size = kv::to_int64(k, v);
    else if (k == "aug.crop_size") c.aug.crop_size = kv::to_int64(k, v);
    else if (k == "aug.scale_min") c.aug.scale_min = kv::to_double(k, v);
    else if (k == "aug.scale_max") c.aug.scale_max = kv::to_double(k, v);
    else if (k == "aug.flip") c.aug.flip = kv::to_bool(k, v);
    else known = false;
    if (!known) {
      throw ConfigError("line " + std::to_string(e.line) + ": unknown config key '" + k + "'");
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return parse(kv::read_file(path.string()));
}

std::string RunConfig::to_text() const {
  std::string out;
  auto put = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  put("seed", std::to_string(seed));
  put("out_dir", out_dir);
  out += model_config_text(model);
  put("optim.base_lr", kv::format_double(optim.base_lr));
  put("optim.momentum", kv::format_double(optim.momentum));
  put("optim.weight_decay", kv::format_double(optim.weight_decay));
  put("optim.lr_power", kv::format_double(optim.lr_power));
  put("optim.backbone_lr_multiplier", kv::format_double(optim.backbone_lr_multiplier));
  put("optim.epochs", std::to_string(optim.epochs));
  put("optim.batch_size", std::to_string(optim.batch_size));
  put("optim.aux_weight", kv::format_double(optim.aux_weight));
  put("data.dir", data_dir);
  put("data.val_dir", val_dir);
  put("data.val_fraction", kv::format_double(val_fraction));
  put("synth.count", std::to_string(synth_count));
  std::istringstream spec(synth.to_text());
  for (std::string line; std::getline(spec, line);) out += "synth." + line + "\n";
  put("aug.enabled", bool_text(augment));
  put("aug.base_size", std::to_string(aug.base_size));
  put("aug.crop_size", std::to_string(aug.crop_size));
  put("aug.scale_min", kv::format_double(aug.scale_min));
  put("aug.scale_max", kv::format_double(aug.scale_max));
  put("aug.flip", bool_text(aug.flip));
  return out;
}

}  // namespace fbnet
