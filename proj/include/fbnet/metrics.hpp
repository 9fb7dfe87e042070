// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fbnet/tensor.hpp"

namespace fbnet {

// counts[c * L + p] = number of pixels with label c predicted as p.
// Pixels labelled with the ignore index are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  // pred and labels must have the same shape. Predictions outside
  // {0..L-1} and labels that are neither valid nor ignored throw.
  void add(const IntTensor& pred, const IntTensor& labels, std::int32_t ignore_index = 255);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  int num_classes() const { return num_classes_; }
  std::int64_t at(int label, int pred) const {
    return counts_[static_cast<std::size_t>(label) * num_classes_ + pred];
  }
  std::int64_t total() const;
  std::int64_t correct() const;
  // TP / (TP + FP + FN); empty when the class is absent from labels and
  // predictions alike.
  std::optional<double> iou(int cls) const;
  const std::vector<std::int64_t>& counts() const { return counts_; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int num_classes_ = 0;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion_matrix(const IntTensor& pred, const IntTensor& labels, int num_classes,
                                 std::int32_t ignore_index = 255);

// Mean IoU over classes present in labels or predictions. Throws
// ContractError when no class is present.
double miou_class_mean(const ConfusionMatrix& m);
// Mean over samples of each sample's class-mean IoU; samples without any
// non-ignored pixel are skipped. Throws ContractError if none remain.
double miou_sample_mean(std::span<const ConfusionMatrix> per_sample);
// trace / sum. Throws ContractError on an empty matrix.
double pixel_accuracy(const ConfusionMatrix& m);

}  // namespace fbnet
