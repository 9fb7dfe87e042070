// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fbnet/data.hpp"
#include "fbnet/metrics.hpp"
#include "fbnet/model.hpp"
#include "fbnet/run_config.hpp"

namespace fbnet {

struct MetricsRecord {
  int epoch = 0;  // 1-based
  double main_loss = 0, aux_loss = 0;  // epoch means over training batches
  double lr = 0;                        // rate used by the epoch's last step
  double miou_class = 0, miou_sample = 0, pixel_accuracy = 0;  // validation, in [0, 1]
  double seconds = 0;                   // wall time of the epoch incl. validation
  // Main-output accuracy on the epoch's training batches at the loss
  // resolution (training mode, augmented inputs).
  double train_pixel_accuracy = 0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,main_loss,aux_loss,lr,miou_class,miou_sample,pix_acc,seconds,train_pix_acc";
// One CSV row; mIoU and accuracy as percentages.
std::string metrics_csv_row(const MetricsRecord& r);

// Worker count for evaluation: FBNET_THREADS if set (>= 1), otherwise the
// hardware concurrency.
int worker_threads();

// Prediction at the sample's own resolution: the image is resized so its
// smaller side equals base_size, zero-padded to a multiple of 8, passed
// through the network in eval mode; the 1/4-resolution logits are upsampled
// bilinearly, cropped to the resized extent, resized back to the label
// extent and reduced with argmax.
IntTensor predict(const FBNet<float>& model, const data::Sample& s, std::int64_t base_size);

struct EvalResult {
  ConfusionMatrix total;
  std::vector<ConfusionMatrix> per_sample;
  double miou_class = 0, miou_sample = 0, pixel_accuracy = 0;
};

// Eval-mode forward passes run on up to `threads` threads, each handling an
// interleaved subset of the samples; per-sample integer confusion matrices
// are summed afterwards, so the result does not depend on the thread count.
EvalResult evaluate(const FBNet<float>& model, const data::Dataset& ds, std::int64_t base_size,
                    int threads = worker_threads());

struct DataSplit {
  data::Dataset train, val;
};

// Holds out the last `val_fraction` of the samples (sorted by id).
DataSplit split_dataset(data::Dataset all, double val_fraction);
// Synthetic or on-disk data per the config; labels are validated.
DataSplit prepare_data(const RunConfig& cfg);

struct TrainResult {
  std::vector<MetricsRecord> history;
  int best_epoch = 0;  // first epoch with the maximum validation class-mean mIoU
  double best_miou = 0;
  std::int64_t steps = 0;
  std::vector<double> step_lr;    // learning rate applied at every step
  std::vector<double> step_loss;  // combined loss at every step
  // train_pixel_accuracy of the last epoch.
  double train_pixel_accuracy = 0;
};

// Runs the configured schedule. When cfg.out_dir is non-empty the directory
// receives config.txt (resolved config), metadata.json, metrics.csv,
// best.ckpt and last.ckpt (rewritten after every epoch). A non-finite loss
// or gradient throws NumericalError and leaves the last checkpoint intact.
TrainResult train(FBNet<float>& model, const DataSplit& data, const RunConfig& cfg,
                  std::ostream* log = nullptr);

struct AblationRow {
  Strategy strategy = Strategy::kFull;
  double miou = 0, pixel_accuracy = 0;  // best-epoch validation values, [0, 1]
  int epochs = 0;
  std::int64_t params = 0;
  double seconds = 0;
};

// Trains every strategy with the same seed, data and optimizer settings.
// Each run writes into <out_dir>/<strategy key, lower case>.
std::vector<AblationRow> run_ablation(const RunConfig& base, const DataSplit& data,
                                      std::ostream* log = nullptr);
inline constexpr const char* kAblationHeader = "model,strategy,miou,accuracy,epochs,params";
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

struct AttentionExport {
  std::vector<std::filesystem::path> cam_files, sam_files;
  std::int64_t cam_height = 0, cam_width = 0;
  std::int64_t sam_height = 0, sam_width = 0;
};

// Writes the first `channels` CAM attention channels and `rows` evenly
// spaced SAM attention rows (each reshaped to the SAM grid) as min-max
// normalized P5 PGM files, plus the raw maps as cam.fbt / sam.fbt. Modules
// missing from the strategy are skipped.
AttentionExport export_attention(const FBNet<float>& model, const data::Sample& s,
                                 std::int64_t base_size, const std::filesystem::path& out_dir,
                                 int channels = 8, int rows = 8);

// Binary PGM (P5, maxval 255) of a row-major map, min-max normalized;
// a constant map is written as all zeros.
void write_pgm(const std::filesystem::path& path, const float* values, std::int64_t height,
               std::int64_t width);

}  // namespace fbnet
