// SPDX-License-Identifier: Apache-2.0
#include "fbnet/metrics.hpp"

#include <numeric>

#include "fbnet/error.hpp"

namespace fbnet {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
  if (num_classes < 0) throw ContractError("negative class count");
}

void ConfusionMatrix::add(const IntTensor& pred, const IntTensor& labels,
                          std::int32_t ignore_index) {
  if (pred.shape() != labels.shape()) {
    throw ShapeError("confusion matrix: predictions " + shape_str(pred.shape()) +
                     " vs labels " + shape_str(labels.shape()));
  }
  const auto p = pred.data();
  const auto l = labels.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (l[i] == ignore_index) continue;
    if (l[i] < 0 || l[i] >= num_classes_) {
      throw ContractError("label " + std::to_string(l[i]) + " outside [0, " +
                          std::to_string(num_classes_) + ")");
    }
    if (p[i] < 0 || p[i] >= num_classes_) {
      throw ContractError("prediction " + std::to_string(p[i]) + " outside [0, " +
                          std::to_string(num_classes_) + ")");
    }
    ++counts_[static_cast<std::size_t>(l[i]) * num_classes_ + p[i]];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw ContractError("confusion matrices differ in size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::correct() const {
  std::int64_t n = 0;
  for (int c = 0; c < num_classes_; ++c) n += at(c, c);
  return n;
}

std::optional<double> ConfusionMatrix::iou(int cls) const {
  std::int64_t row = 0, col = 0;
  for (int k = 0; k < num_classes_; ++k) {
    row += at(cls, k);
    col += at(k, cls);
  }
  const std::int64_t tp = at(cls, cls);
  const std::int64_t uni = row + col - tp;  // TP + FN + FP
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

ConfusionMatrix confusion_matrix(const IntTensor& pred, const IntTensor& labels, int num_classes,
                                 std::int32_t ignore_index) {
  ConfusionMatrix m(num_classes);
  m.add(pred, labels, ignore_index);
  return m;
}

double miou_class_mean(const ConfusionMatrix& m) {
  double sum = 0;
  int present = 0;
  for (int c = 0; c < m.num_classes(); ++c) {
    if (auto v = m.iou(c)) {
      sum += *v;
      ++present;
    }
  }
  if (present == 0) throw ContractError("mIoU of an empty evaluation set");
  return sum / present;
}

double miou_sample_mean(std::span<const ConfusionMatrix> per_sample) {
  double sum = 0;
  int used = 0;
  for (const auto& m : per_sample) {
    if (m.total() == 0) continue;
    sum += miou_class_mean(m);
    ++used;
  }
  if (used == 0) throw ContractError("sample-mean mIoU of an empty evaluation set");
  return sum / used;
}

double pixel_accuracy(const ConfusionMatrix& m) {
  const std::int64_t total = m.total();
  if (total == 0) throw ContractError("pixel accuracy of an empty evaluation set");
  return static_cast<double>(m.correct()) / static_cast<double>(total);
}

}  // namespace fbnet
