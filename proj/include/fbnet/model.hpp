// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fbnet/attention.hpp"
#include "fbnet/backbone.hpp"

namespace fbnet {

// Component combinations compared in the ablation study.
enum class Strategy { kSam, kCam, kFf, kParallel, kSeries, kFull };

inline constexpr Strategy kAllStrategies[] = {Strategy::kSam,      Strategy::kCam,
                                              Strategy::kFf,       Strategy::kParallel,
                                              Strategy::kSeries,   Strategy::kFull};

// Config-file key: SAM, CAM, FF, PARALLEL, SERIES, FULL.
std::string_view strategy_key(Strategy s);
// Row label used in the ablation table.
std::string_view strategy_label(Strategy s);
// Accepts the config key (case-insensitive); throws ConfigError otherwise.
Strategy parse_strategy(std::string_view text);

struct ModelConfig {
  BackboneConfig backbone;
  int c_mid = 32;      // width of each mid-level transform
  int c_sam = 64;      // SAM width (the fourth fused branch)
  int cam_ratio = 4;   // CAM bottleneck C / C_hidden
  int sam_ratio = 8;   // SAM C / C_hat, C_hat floored at 1
  bool sam_qk_bias = true;
  int num_classes = 5;
  double head_dropout = 0.1;
  Strategy strategy = Strategy::kFull;

  static ModelConfig toy();
  static ModelConfig large();

  int fused_channels() const { return 3 * c_mid + c_sam; }
  int sam_key_channels() const { return c_sam / sam_ratio > 0 ? c_sam / sam_ratio : 1; }
  bool has_sam() const;
  bool has_cam() const;
  bool has_fusion() const;
  // The auxiliary head is attached to the SAM output, so it exists iff a SAM does.
  bool aux_enabled() const { return has_sam(); }
  // Channels entering CAM for this strategy.
  int cam_channels() const { return has_fusion() ? fused_channels() : c_sam; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Two 3x3 conv + BN + ReLU layers, each with `out_channels` kernels.
template <typename T>
class MidTransform {
 public:
  MidTransform() = default;
  MidTransform(int in_channels, int out_channels, std::mt19937_64& rng);

  Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const;
  void collect(const std::string& prefix, TensorList<T>& out) const;

  ConvBnRelu<T> first, second;
};

// 3x3 conv (C -> C/4) + BN + ReLU + dropout + 1x1 conv (C/4 -> L), raw logits.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(int in_channels, int num_classes, double dropout, std::mt19937_64& rng);

  Tensor<T> operator()(const Tensor<T>& x, const ForwardMode& mode) const;
  void collect(const std::string& prefix, TensorList<T>& out) const;

  ConvBnRelu<T> hidden;
  Conv2d<T> classifier;
  double dropout = 0.0;
};

// Upsamples the three 1/8-resolution maps by 2 and concatenates all four
// along channels in the order [f1, f2, f3, f4].
template <typename T>
Tensor<T> fuse_features(const Tensor<T>& f1, const Tensor<T>& f2, const Tensor<T>& f3,
                        const Tensor<T>& f4);

template <typename T>
struct NetworkOutput {
  Tensor<T> main_logits;                // [B x L x H/4 x W/4]
  std::optional<Tensor<T>> aux_logits;  // [B x L x H/8 x W/8]
};

// Attention tensors captured during a forward pass for inspection.
template <typename T>
struct AttentionTrace {
  Tensor<T> cam;  // [B x C x h x w] channel attention probabilities
  Tensor<T> sam;  // [B x N x N] spatial attention
  std::int64_t sam_height = 0, sam_width = 0;
};

struct ParameterCount {
  std::vector<std::pair<std::string, std::int64_t>> per_module;
  std::int64_t total = 0;
};

template <typename T>
class FBNet {
 public:
  FBNet(const ModelConfig& config, std::uint64_t seed);

  NetworkOutput<T> forward(const Tensor<T>& img, const ForwardMode& mode,
                           AttentionTrace<T>* trace = nullptr) const;

  // Parameters and running statistics, in a fixed order with stable names.
  TensorList<T> tensors() const;
  // Trainable subset of tensors().
  TensorList<T> parameters() const;

  ParameterCount count_parameters() const;
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  Backbone<T> backbone_;
  std::vector<MidTransform<T>> mids_;  // F1..F3 transforms, fusion strategies only
  MidTransform<T> branch4_;            // deepest stage -> C_sam
  std::optional<SamBlock<T>> sam_;
  std::optional<CamBlock<T>> cam_;
  ClassifierHead<T> head_;
  std::optional<ClassifierHead<T>> aux_head_;
};

extern template class FBNet<float>;
extern template class FBNet<double>;

}  // namespace fbnet
