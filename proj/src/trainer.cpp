// SPDX-License-Identifier: Apache-2.0
#include "fbnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fbnet/checkpoint.hpp"
#include "fbnet/error.hpp"
#include "fbnet/ops.hpp"
#include "fbnet/optim.hpp"
#include "fbnet/tape.hpp"
#include "fbnet/tensor_io.hpp"

namespace fbnet {

namespace fs = std::filesystem;
using data::Dataset;
using data::Sample;

namespace {

std::int64_t round_up8(std::int64_t v) { return (v + 7) / 8 * 8; }

// RNG stream tags, kept apart so shuffling, augmentation and dropout never
// share a stream.
constexpr std::uint64_t kShuffleStream = 0x5f;
constexpr std::uint64_t kAugmentStream = 0xa6;
constexpr std::uint64_t kDropoutStream = 0xd0;

struct Batch {
  Tensor<float> images;
  IntTensor main_labels, aux_labels;
};

// Pads every sample to the common extent (rounded up to a multiple of 8)
// and stacks them; labels are subsampled to the 1/4 and 1/8 grids.
Batch make_batch(const std::vector<Sample>& samples) {
  std::int64_t h = 0, w = 0;
  for (const auto& s : samples) {
    h = std::max(h, s.height());
    w = std::max(w, s.width());
  }
  h = round_up8(h);
  w = round_up8(w);
  const auto b = static_cast<std::int64_t>(samples.size());
  Batch batch{Tensor<float>({b, 3, h, w}), IntTensor({b, h / 4, w / 4}),
              IntTensor({b, h / 8, w / 8})};
  for (std::int64_t i = 0; i < b; ++i) {
    const Sample p = data::pad_sample(samples[static_cast<std::size_t>(i)], h, w);
    std::copy(p.image.data().begin(), p.image.data().end(),
              batch.images.data().begin() + i * 3 * h * w);
    const auto main = data::downsample_labels(p.labels, 4);
    const auto aux = data::downsample_labels(p.labels, 8);
    std::copy(main.data().begin(), main.data().end(), batch.main_labels.data().begin() + i * main.numel());
    std::copy(aux.data().begin(), aux.data().end(), batch.aux_labels.data().begin() + i * aux.numel());
  }
  return batch;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

nlohmann::ordered_json run_metadata(const FBNet<float>& model, const DataSplit& data,
                                    const RunConfig& cfg) {
  nlohmann::ordered_json meta;
  nlohmann::ordered_json config;
  std::istringstream lines(cfg.to_text());
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  meta["config"] = config;
  const auto& m = model.config();
  meta["strategy_label"] = std::string(strategy_label(m.strategy));
  meta["parameters"] = model.count_parameters().total;
  meta["train_samples"] = data.train.size();
  meta["val_samples"] = data.val.size();
  meta["decisions"] = {
      {"aux_enabled", m.aux_enabled()},
      {"aux_attached_to", m.aux_enabled() ? "SAM output (1/8 resolution)" : "none"},
      {"aux_weight", cfg.optim.aux_weight},
      {"fused_channels", m.has_fusion() ? m.fused_channels() : 0},
      {"sam_key_channels", m.has_sam() ? m.sam_key_channels() : 0},
      {"sam_qk_bias", m.sam_qk_bias},
      {"cam_ratio", m.cam_ratio},
      {"cam_inner_activation", "relu"},
      {"deep_branch", "F4 -> two 3x3 conv+BN+ReLU to c_sam before attention/fusion"},
      {"ignore_index", ops::kIgnoreIndex},
      {"crop_pad_image", 0},
      {"crop_pad_label", data::kIgnoreLabel},
      {"label_resize", "nearest"},
      {"upsampling", "bilinear, align_corners=false"},
      {"loss_resolution", "main 1/4, aux 1/8, labels subsampled nearest"},
      {"evaluation",
       "smaller side resized to aug.base_size, zero-padded to a multiple of 8, logits resized "
       "bilinearly to label resolution"},
      {"epochs_to_convergence", "first epoch with the maximum validation class-mean mIoU"},
      {"batch_norm_momentum", 0.1},
      {"gradient_clipping", false},
  };
  return meta;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

std::string metrics_csv_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.8g,%.8f,%.8f,%.8f,%.3f,%.8f", r.epoch,
                r.main_loss, r.aux_loss, r.lr, 100 * r.miou_class, 100 * r.miou_sample,
                100 * r.pixel_accuracy, r.seconds, 100 * r.train_pixel_accuracy);
  return buf;
}

int worker_threads() {
  if (const char* env = std::getenv("FBNET_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

IntTensor predict(const FBNet<float>& model, const Sample& s, std::int64_t base_size) {
  TapeScope pause(nullptr);
  const Sample resized = data::eval_resize(s, base_size);
  const std::int64_t rh = resized.height(), rw = resized.width();
  const std::int64_t ph = round_up8(rh), pw = round_up8(rw);
  const Sample padded = data::pad_sample(resized, ph, pw);
  Tensor<float> img({1, 3, ph, pw},
                    std::vector<float>(padded.image.data().begin(), padded.image.data().end()));
  const auto logits = model.forward(img, ForwardMode{}).main_logits;
  const auto up = ops::upsample_bilinear(logits, 4);
  const std::int64_t l = up.dim(1);
  Tensor<float> cropped({1, l, rh, rw});
  for (std::int64_t c = 0; c < l; ++c) {
    for (std::int64_t y = 0; y < rh; ++y) {
      const float* src = up.data().data() + (c * ph + y) * pw;
      std::copy(src, src + rw, cropped.data().begin() + (c * rh + y) * rw);
    }
  }
  const auto full = (rh == s.height() && rw == s.width())
                        ? cropped
                        : ops::resize_bilinear(cropped, s.height(), s.width());
  const auto pred = ops::argmax_channels(full);
  return IntTensor({s.height(), s.width()}, std::vector<std::int32_t>(pred.data().begin(), pred.data().end()));
}

EvalResult evaluate(const FBNet<float>& model, const Dataset& ds, std::int64_t base_size,
                    int threads) {
  const int classes = model.config().num_classes;
  const auto n = static_cast<std::int64_t>(ds.size());
  EvalResult result;
  result.per_sample.assign(ds.size(), ConfusionMatrix(classes));
  auto work = [&](std::int64_t first, std::int64_t stride) {
    for (std::int64_t i = first; i < n; i += stride) {
      const auto& s = ds[static_cast<std::size_t>(i)];
      result.per_sample[static_cast<std::size_t>(i)] =
          confusion_matrix(predict(model, s, base_size), s.labels, classes);
    }
  };
  const int workers = static_cast<int>(std::clamp<std::int64_t>(threads, 1, std::max<std::int64_t>(n, 1)));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, workers);
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  result.total = ConfusionMatrix(classes);
  for (const auto& m : result.per_sample) result.total += m;
  result.miou_class = miou_class_mean(result.total);
  result.miou_sample = miou_sample_mean(result.per_sample);
  result.pixel_accuracy = pixel_accuracy(result.total);
  return result;
}

DataSplit split_dataset(Dataset all, double val_fraction) {
  std::sort(all.begin(), all.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
  const auto n = static_cast<std::int64_t>(all.size());
  if (n < 2) throw DataError("need at least 2 samples to hold out a validation split");
  const std::int64_t val = std::clamp<std::int64_t>(std::llround(n * val_fraction), 1, n - 1);
  DataSplit split;
  split.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.end() - val));
  split.val.assign(std::make_move_iterator(all.end() - val), std::make_move_iterator(all.end()));
  return split;
}

DataSplit prepare_data(const RunConfig& cfg) {
  DataSplit split;
  if (cfg.data_dir.empty()) {
    split = split_dataset(data::generate_synthetic(cfg.synth, cfg.synth_count), cfg.val_fraction);
  } else if (cfg.val_dir.empty()) {
    split = split_dataset(data::load_dataset(cfg.data_dir), cfg.val_fraction);
  } else {
    split.train = data::load_dataset(cfg.data_dir);
    split.val = data::load_dataset(cfg.val_dir);
  }
  if (split.train.empty()) throw DataError("training set is empty");
  if (split.val.empty()) throw DataError("validation set is empty");
  for (const auto* part : {&split.train, &split.val}) {
    for (const auto& s : *part) data::check_labels(s, cfg.model.num_classes);
  }
  return split;
}

TrainResult train(FBNet<float>& model, const DataSplit& data, const RunConfig& cfg,
                  std::ostream* log) {
  cfg.validate();
  if (data.train.empty()) throw DataError("training set is empty");
  if (data.val.empty()) throw DataError("validation set is empty");
  const auto& oc = cfg.optim;
  const bool files = !cfg.out_dir.empty();
  const fs::path out_dir = cfg.out_dir;
  std::ofstream csv;
  auto meta = run_metadata(model, data, cfg);
  if (files) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
    write_text(out_dir / "config.txt", cfg.to_text());
    write_text(out_dir / "metadata.json", meta.dump(2) + "\n");
    csv.open(out_dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write metrics.csv in '" + out_dir.string() + "'");
    csv << kMetricsHeader << "\n" << std::flush;
  }

  auto params = model.parameters();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  Sgd<float> opt(params, oc);
  const bool has_aux = model.config().aux_enabled();

  const auto n = static_cast<std::int64_t>(data.train.size());
  const std::int64_t steps_per_epoch = (n + oc.batch_size - 1) / oc.batch_size;
  const std::int64_t total_steps = steps_per_epoch * oc.epochs;

  TrainResult result;
  result.best_miou = -1;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (int epoch = 1; epoch <= oc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = data::derive_rng(cfg.seed ^ kShuffleStream, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double main_sum = 0, aux_sum = 0, lr = 0;
    std::int64_t correct = 0, counted = 0;
    for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<Sample> samples;
      for (std::int64_t k = step * oc.batch_size; k < std::min(n, (step + 1) * oc.batch_size); ++k) {
        const auto idx = order[static_cast<std::size_t>(k)];
        const Sample& s = data.train[static_cast<std::size_t>(idx)];
        if (cfg.augment) {
          auto rng = data::derive_rng(cfg.seed ^ kAugmentStream, static_cast<std::uint64_t>(epoch),
                                      static_cast<std::uint64_t>(idx));
          samples.push_back(data::augment(s, cfg.aug, rng));
        } else {
          samples.push_back(s);
        }
      }
      const Batch batch = make_batch(samples);
      lr = poly_lr(result.steps, total_steps, oc.base_lr, oc.lr_power);

      double main_value = 0, aux_value = 0, total_value = 0;
      {
        Tape tape;
        TapeScope scope(&tape);
        auto drop_rng = data::derive_rng(cfg.seed ^ kDropoutStream, static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(step));
        const auto out = model.forward(batch.images, ForwardMode{true, &drop_rng});
        auto main_loss = ops::cross_entropy(out.main_logits, batch.main_labels);
        auto loss = main_loss;
        main_value = main_loss.item();
        if (has_aux) {
          auto aux_loss = ops::cross_entropy(*out.aux_logits, batch.aux_labels);
          aux_value = aux_loss.item();
          loss = ops::add(main_loss, ops::scale(aux_loss, static_cast<float>(oc.aux_weight)));
        }
        total_value = loss.item();
        if (!std::isfinite(total_value)) {
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step + 1) + "; training aborted");
        }
        const auto pred = ops::argmax_channels(out.main_logits);
        for (std::size_t i = 0; i < pred.data().size(); ++i) {
          const auto label = batch.main_labels.data()[i];
          if (label == ops::kIgnoreIndex) continue;
          ++counted;
          correct += pred.data()[i] == label ? 1 : 0;
        }
        tape.backward(loss);
      }
      opt.step(lr);
      opt.zero_grad();
      ++result.steps;
      result.step_lr.push_back(lr);
      result.step_loss.push_back(total_value);
      main_sum += main_value;
      aux_sum += aux_value;
    }

    const auto eval = evaluate(model, data.val, cfg.aug.base_size);
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.main_loss = main_sum / static_cast<double>(steps_per_epoch);
    rec.aux_loss = aux_sum / static_cast<double>(steps_per_epoch);
    rec.lr = lr;
    rec.miou_class = eval.miou_class;
    rec.miou_sample = eval.miou_sample;
    rec.pixel_accuracy = eval.pixel_accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.train_pixel_accuracy =
        counted > 0 ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
    result.history.push_back(rec);
    result.train_pixel_accuracy = rec.train_pixel_accuracy;

    const bool improved = rec.miou_class > result.best_miou;
    if (improved) {
      result.best_miou = rec.miou_class;
      result.best_epoch = epoch;
    }
    if (files) {
      if (improved) save_checkpoint(out_dir / "best.ckpt", model, cfg.aug.base_size);
      save_checkpoint(out_dir / "last.ckpt", model, cfg.aug.base_size);
      csv << metrics_csv_row(rec) << "\n" << std::flush;
    }
    if (log) {
      char line[200];
      std::snprintf(line, sizeof line,
                    "epoch %3d  loss %.4f  aux %.4f  lr %.5f  mIoU %.2f%%  acc %.2f%%  %.1fs",
                    epoch, rec.main_loss, rec.aux_loss, rec.lr, 100 * rec.miou_class,
                    100 * rec.pixel_accuracy, rec.seconds);
      *log << line << std::endl;
    }
  }

  if (files) {
    const auto& last = result.history.back();
    meta["result"] = {{"best_epoch", result.best_epoch},
                      {"best_miou_class", result.best_miou},
                      {"final_miou_class", last.miou_class},
                      {"final_pixel_accuracy", last.pixel_accuracy},
                      {"steps", result.steps},
                      {"final_loss", result.step_loss.back()}};
    write_text(out_dir / "metadata.json", meta.dump(2) + "\n");
  }
  return result;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const DataSplit& data,
                                      std::ostream* log) {
  std::vector<AblationRow> rows;
  for (Strategy s : kAllStrategies) {
    RunConfig cfg = base;
    cfg.model.strategy = s;
    cfg.out_dir = base.out_dir.empty() ? "" : (fs::path(base.out_dir) / lower(strategy_key(s))).string();
    const auto t0 = std::chrono::steady_clock::now();
    FBNet<float> model(cfg.model, cfg.seed);
    if (log) *log << "== " << strategy_label(s) << " ==" << std::endl;
    const auto result = train(model, data, cfg, log);
    AblationRow row;
    row.strategy = s;
    row.miou = result.best_miou;
    row.pixel_accuracy = result.history[static_cast<std::size_t>(result.best_epoch - 1)].pixel_accuracy;
    row.epochs = result.best_epoch;
    row.params = model.count_parameters().total;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::string text = std::string(kAblationHeader) + "\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "FBNet,%s,%.4f,%.4f,%d,%lld\n",
                  std::string(strategy_label(r.strategy)).c_str(), 100 * r.miou,
                  100 * r.pixel_accuracy, r.epochs, static_cast<long long>(r.params));
    text += buf;
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  write_text(path, text);
}

void write_pgm(const fs::path& path, const float* values, std::int64_t height, std::int64_t width) {
  const std::int64_t n = height * width;
  const auto [lo, hi] = std::minmax_element(values, values + n);
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  std::string bytes(static_cast<std::size_t>(n), '\0');
  if (range > 0) {
    for (std::int64_t i = 0; i < n; ++i) {
      const double v = 255.0 * (static_cast<double>(values[i]) - *lo) / range;
      bytes[static_cast<std::size_t>(i)] = static_cast<char>(std::clamp<long>(std::lround(v), 0, 255));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

AttentionExport export_attention(const FBNet<float>& model, const Sample& s,
                                 std::int64_t base_size, const fs::path& out_dir, int channels,
                                 int rows) {
  if (channels < 0 || rows < 0) throw ConfigError("channel and row counts must be non-negative");
  TapeScope pause(nullptr);
  const Sample resized = data::eval_resize(s, base_size);
  const Sample padded =
      data::pad_sample(resized, round_up8(resized.height()), round_up8(resized.width()));
  Tensor<float> img({1, 3, padded.height(), padded.width()},
                    std::vector<float>(padded.image.data().begin(), padded.image.data().end()));
  AttentionTrace<float> trace;
  model.forward(img, ForwardMode{}, &trace);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  AttentionExport result;
  char name[64];
  if (trace.cam.defined()) {
    const auto c = trace.cam.dim(1), h = trace.cam.dim(2), w = trace.cam.dim(3);
    if (channels > c) {
      throw ConfigError("requested " + std::to_string(channels) + " CAM channels, model has " +
                        std::to_string(c));
    }
    result.cam_height = h;
    result.cam_width = w;
    io::save_fbt(out_dir / "cam.fbt", Tensor<float>({c, h, w}, std::vector<float>(
                                                                   trace.cam.data().begin(),
                                                                   trace.cam.data().end())));
    for (int k = 0; k < channels; ++k) {
      std::snprintf(name, sizeof name, "cam_ch%03d.pgm", k);
      write_pgm(out_dir / name, trace.cam.data().data() + k * h * w, h, w);
      result.cam_files.push_back(out_dir / name);
    }
  }
  if (trace.sam.defined()) {
    const auto n = trace.sam.dim(1);
    if (rows > n) {
      throw ConfigError("requested " + std::to_string(rows) + " SAM rows, attention has " +
                        std::to_string(n));
    }
    result.sam_height = trace.sam_height;
    result.sam_width = trace.sam_width;
    io::save_fbt(out_dir / "sam.fbt", Tensor<float>({n, n}, std::vector<float>(
                                                               trace.sam.data().begin(),
                                                               trace.sam.data().end())));
    for (int r = 0; r < rows; ++r) {
      const std::int64_t row = static_cast<std::int64_t>(r) * n / rows;
      std::snprintf(name, sizeof name, "sam_row%05lld.pgm", static_cast<long long>(row));
      write_pgm(out_dir / name, trace.sam.data().data() + row * n, trace.sam_height,
                trace.sam_width);
      result.sam_files.push_back(out_dir / name);
    }
  }
  return result;
}

}  // namespace fbnet
