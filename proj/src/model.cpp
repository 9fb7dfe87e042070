// SPDX-License-Identifier: Apache-2.0
#include "fbnet/model.hpp"

#include <algorithm>
#include <cctype>

#include "fbnet/error.hpp"

namespace fbnet {

std::string_view strategy_key(Strategy s) {
  switch (s) {
    case Strategy::kSam: return "SAM";
    case Strategy::kCam: return "CAM";
    case Strategy::kFf: return "FF";
    case Strategy::kParallel: return "PARALLEL";
    case Strategy::kSeries: return "SERIES";
    case Strategy::kFull: return "FULL";
  }
  return "?";
}

std::string_view strategy_label(Strategy s) {
  switch (s) {
    case Strategy::kSam: return "SAM";
    case Strategy::kCam: return "CAM";
    case Strategy::kFf: return "FF";
    case Strategy::kParallel: return "CAM+ SAM (parallel)";
    case Strategy::kSeries: return "CAM+ SAM (series)";
    case Strategy::kFull: return "FF+ SAM+ CAM";
  }
  return "?";
}

Strategy parse_strategy(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (Strategy s : kAllStrategies) {
    if (upper == strategy_key(s)) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(text) +
                    "' (expected SAM, CAM, FF, PARALLEL, SERIES or FULL)");
}

ModelConfig ModelConfig::toy() { return {}; }

ModelConfig ModelConfig::large() {
  ModelConfig c;
  c.backbone.stage_channels = {64, 128, 256, 512};
  c.backbone.blocks_per_stage = {2, 2, 2, 2};
  c.c_mid = 256;
  c.c_sam = 512;
  c.num_classes = 150;
  return c;
}

bool ModelConfig::has_sam() const { return strategy != Strategy::kCam && strategy != Strategy::kFf; }

bool ModelConfig::has_cam() const { return strategy != Strategy::kSam && strategy != Strategy::kFf; }

bool ModelConfig::has_fusion() const {
  return strategy == Strategy::kFf || strategy == Strategy::kFull;
}

void ModelConfig::validate() const {
  backbone.validate();
  if (c_mid < 1 || c_sam < 1) throw ConfigError("c_mid and c_sam must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (sam_ratio < 1) throw ConfigError("sam_ratio must be positive");
  if (head_dropout < 0 || head_dropout >= 1) throw ConfigError("head_dropout must lie in [0, 1)");
  if (has_cam() && (cam_ratio < 1 || cam_channels() % cam_ratio != 0)) {
    throw ConfigError("cam_ratio " + std::to_string(cam_ratio) + " must divide the " +
                      std::to_string(cam_channels()) + " CAM input channels");
  }
}

template <typename T>
MidTransform<T>::MidTransform(int in_channels, int out_channels, std::mt19937_64& rng)
    : first(in_channels, out_channels, 3, same3x3(), rng),
      second(out_channels, out_channels, 3, same3x3(), rng) {}

template <typename T>
Tensor<T> MidTransform<T>::operator()(const Tensor<T>& x, const ForwardMode& mode) const {
  return second(first(x, mode), mode);
}

template <typename T>
void MidTransform<T>::collect(const std::string& prefix, TensorList<T>& out) const {
  first.collect(prefix + ".conv1", ParamGroup::kHead, out);
  second.collect(prefix + ".conv2", ParamGroup::kHead, out);
}

template <typename T>
ClassifierHead<T>::ClassifierHead(int in_channels, int num_classes, double p, std::mt19937_64& rng)
    : hidden(in_channels, std::max(1, in_channels / 4), 3, same3x3(), rng),
      classifier(std::max(1, in_channels / 4), num_classes, 1, {}, true, rng),
      dropout(p) {}

template <typename T>
Tensor<T> ClassifierHead<T>::operator()(const Tensor<T>& x, const ForwardMode& mode) const {
  auto h = hidden(x, mode);
  if (mode.training && dropout > 0) {
    if (mode.dropout_rng == nullptr) {
      throw ContractError("training forward with dropout needs an RNG");
    }
    h = ops::dropout(h, static_cast<T>(dropout), *mode.dropout_rng, true);
  }
  return classifier(h);
}

template <typename T>
void ClassifierHead<T>::collect(const std::string& prefix, TensorList<T>& out) const {
  hidden.collect(prefix + ".hidden", ParamGroup::kHead, out);
  classifier.collect(prefix + ".classifier", ParamGroup::kHead, out);
}

template <typename T>
Tensor<T> fuse_features(const Tensor<T>& f1, const Tensor<T>& f2, const Tensor<T>& f3,
                        const Tensor<T>& f4) {
  const Tensor<T> parts[] = {f1, ops::upsample_bilinear(f2, 2), ops::upsample_bilinear(f3, 2),
                             ops::upsample_bilinear(f4, 2)};
  for (const auto& p : parts) {
    if (p.dim(0) != f1.dim(0) || p.dim(2) != f1.dim(2) || p.dim(3) != f1.dim(3)) {
      throw ShapeError("feature fusion: upsampled map " + shape_str(p.shape()) +
                       " does not align with " + shape_str(f1.shape()));
    }
  }
  return ops::concat_channels<T>(parts);
}

template <typename T>
FBNet<T>::FBNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  backbone_ = Backbone<T>(config_.backbone, rng);
  const auto& ch = config_.backbone.stage_channels;
  if (config_.has_fusion()) {
    for (int i = 0; i < 3; ++i) mids_.emplace_back(ch[i], config_.c_mid, rng);
  }
  branch4_ = MidTransform<T>(ch[3], config_.c_sam, rng);
  if (config_.has_sam()) {
    sam_.emplace(config_.c_sam, config_.sam_key_channels(), config_.sam_qk_bias, rng);
  }
  if (config_.has_cam()) {
    cam_.emplace(config_.cam_channels(), config_.cam_ratio, rng);
  }
  const int head_in = config_.has_fusion() ? config_.fused_channels() : config_.c_sam;
  head_ = ClassifierHead<T>(head_in, config_.num_classes, config_.head_dropout, rng);
  if (config_.aux_enabled()) {
    aux_head_.emplace(config_.c_sam, config_.num_classes, config_.head_dropout, rng);
  }
}

template <typename T>
NetworkOutput<T> FBNet<T>::forward(const Tensor<T>& img, const ForwardMode& mode,
                                   AttentionTrace<T>* trace) const {
  const auto f = backbone_(img, mode);
  const Tensor<T> x4 = branch4_(f[3], mode);

  auto run_sam = [&](const Tensor<T>& x) {
    auto out = sam_->forward_with_attention(x);
    if (trace) {
      trace->sam = out.attention;
      trace->sam_height = x.dim(2);
      trace->sam_width = x.dim(3);
    }
    return out.features;
  };
  auto run_cam = [&](const Tensor<T>& y) {
    auto out = cam_->forward_with_attention(y);
    if (trace) trace->cam = out.attention;
    return out.features;
  };

  NetworkOutput<T> result;
  Tensor<T> top;  // features entering the main head, at 1/4 resolution
  switch (config_.strategy) {
    case Strategy::kSam: {
      auto s = run_sam(x4);
      result.aux_logits = (*aux_head_)(s, mode);
      top = ops::upsample_bilinear(s, 2);
      break;
    }
    case Strategy::kCam:
      top = ops::upsample_bilinear(run_cam(x4), 2);
      break;
    case Strategy::kSeries: {
      auto s = run_sam(run_cam(x4));
      result.aux_logits = (*aux_head_)(s, mode);
      top = ops::upsample_bilinear(s, 2);
      break;
    }
    case Strategy::kParallel: {
      auto s = run_sam(x4);
      result.aux_logits = (*aux_head_)(s, mode);
      top = ops::upsample_bilinear(ops::add(run_cam(x4), s), 2);
      break;
    }
    case Strategy::kFf:
    case Strategy::kFull: {
      Tensor<T> deep = x4;
      if (config_.strategy == Strategy::kFull) {
        deep = run_sam(x4);
        result.aux_logits = (*aux_head_)(deep, mode);
      }
      auto fused = fuse_features(mids_[0](f[0], mode), mids_[1](f[1], mode), mids_[2](f[2], mode),
                                 deep);
      top = config_.strategy == Strategy::kFull ? run_cam(fused) : fused;
      break;
    }
  }
  result.main_logits = head_(top, mode);
  return result;
}

template <typename T>
TensorList<T> FBNet<T>::tensors() const {
  TensorList<T> out;
  backbone_.collect("backbone", out);
  for (std::size_t i = 0; i < mids_.size(); ++i) {
    mids_[i].collect("mid" + std::to_string(i + 1), out);
  }
  branch4_.collect("branch4", out);
  if (sam_) sam_->collect("sam", ParamGroup::kHead, out);
  if (cam_) cam_->collect("cam", ParamGroup::kHead, out);
  head_.collect("head", out);
  if (aux_head_) aux_head_->collect("aux_head", out);
  return out;
}

template <typename T>
TensorList<T> FBNet<T>::parameters() const {
  TensorList<T> all = tensors();
  TensorList<T> out;
  for (auto& t : all) {
    if (t.trainable) out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
ParameterCount FBNet<T>::count_parameters() const {
  ParameterCount count;
  for (const auto& p : parameters()) {
    const std::string module = p.name.substr(0, p.name.find('.'));
    if (count.per_module.empty() || count.per_module.back().first != module) {
      count.per_module.emplace_back(module, 0);
    }
    count.per_module.back().second += p.tensor.numel();
    count.total += p.tensor.numel();
  }
  return count;
}

template class MidTransform<float>;
template class MidTransform<double>;
template class ClassifierHead<float>;
template class ClassifierHead<double>;
template class FBNet<float>;
template class FBNet<double>;
template Tensor<float> fuse_features(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, const Tensor<float>&);
template Tensor<double> fuse_features(const Tensor<double>&, const Tensor<double>&,
                                      const Tensor<double>&, const Tensor<double>&);

}  // namespace fbnet
