// SPDX-License-Identifier: Apache-2.0
// fbnet command-line harness.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "fbnet/checkpoint.hpp"
#include "fbnet/error.hpp"
#include "fbnet/tensor_io.hpp"
#include "fbnet/trainer.hpp"

using namespace fbnet;
namespace fs = std::filesystem;

namespace {

// Exit codes, also listed in the README.
enum Exit : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,  // bad flags, unknown or invalid config keys
  kIo = 3,     // missing or unreadable files
  kNumerical = 4,
  kData = 5,
};

int exit_code(const Error& e) {
  const std::string kind = e.kind();
  if (kind == "config") return kUsage;
  if (kind == "io") return kIo;
  if (kind == "numerical") return kNumerical;
  if (kind == "data") return kData;
  return kOther;
}

void fail_line(const std::string& kind, const std::string& message) {
  std::string flat = message;
  for (auto& c : flat) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "error[" << kind << "]: " << flat << std::endl;
}

RunConfig load_run_config(const std::string& path, std::optional<std::uint64_t> seed) {
  auto cfg = RunConfig::load(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

void print_histogram(const std::vector<std::int64_t>& hist) {
  std::int64_t total = 0;
  for (auto v : hist) total += v;
  std::printf("class,pixels,fraction\n");
  for (std::size_t c = 0; c < hist.size(); ++c) {
    const std::string name = c + 1 == hist.size() ? "ignore" : std::to_string(c);
    std::printf("%s,%lld,%.6f\n", name.c_str(), static_cast<long long>(hist[c]),
                total > 0 ? static_cast<double>(hist[c]) / static_cast<double>(total) : 0.0);
  }
  std::printf("total,%lld,%.6f\n", static_cast<long long>(total), total > 0 ? 1.0 : 0.0);
}

int cmd_gen_data(const std::string& spec_path, const std::string& out, std::int64_t n,
                 std::optional<std::uint64_t> seed) {
  auto spec = data::SyntheticSpec::load(spec_path);
  if (seed) spec.seed = *seed;
  spec.validate();
  if (n < 0) throw ConfigError("--n must be non-negative");
  const auto ds = data::generate_synthetic(spec, n);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create '" + out + "': " + ec.message());
  data::save_dataset(out, ds);
  print_histogram(data::class_histogram(ds, spec.num_classes));
  return kOk;
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed) {
  const auto cfg = load_run_config(config, seed);
  const auto split = prepare_data(cfg);
  FBNet<float> model(cfg.model, cfg.seed);
  std::printf("strategy %s, %lld parameters, %zu train / %zu val samples\n",
              std::string(strategy_label(cfg.model.strategy)).c_str(),
              static_cast<long long>(model.count_parameters().total), split.train.size(),
              split.val.size());
  std::fflush(stdout);
  const auto r = train(model, split, cfg, &std::cout);
  const auto& last = r.history.back();
  std::printf("final miou_class=%.10f miou_sample=%.10f pixel_accuracy=%.10f loss=%.10f\n",
              last.miou_class, last.miou_sample, last.pixel_accuracy, r.step_loss.back());
  std::printf("best epoch %d miou_class=%.10f\n", r.best_epoch, r.best_miou);
  if (!cfg.out_dir.empty()) std::printf("run directory %s\n", cfg.out_dir.c_str());
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& dir) {
  const auto ck = load_checkpoint(checkpoint);
  const auto ds = data::load_dataset(dir);
  if (ds.empty()) throw DataError("no samples in '" + dir + "'");
  for (const auto& s : ds) data::check_labels(s, ck.model.config().num_classes);
  const auto r = evaluate(ck.model, ds, ck.eval_base_size);
  std::printf("samples=%zu miou_class=%.10f miou_sample=%.10f pixel_accuracy=%.10f\n", ds.size(),
              r.miou_class, r.miou_sample, r.pixel_accuracy);
  std::printf("class,iou\n");
  for (int c = 0; c < r.total.num_classes(); ++c) {
    const auto iou = r.total.iou(c);
    if (iou) {
      std::printf("%d,%.6f\n", c, *iou);
    } else {
      std::printf("%d,absent\n", c);
    }
  }
  return kOk;
}

int cmd_ablate(const std::string& config, std::optional<std::uint64_t> seed) {
  const auto cfg = load_run_config(config, seed);
  const auto split = prepare_data(cfg);
  const auto rows = run_ablation(cfg, split, &std::cout);
  const fs::path csv = fs::path(cfg.out_dir.empty() ? "." : cfg.out_dir) / "ablation.csv";
  write_ablation_csv(csv, rows);
  std::printf("%-22s %8s %8s %10s\n", "strategy", "mIoU", "acc", "params");
  for (const auto& r : rows) {
    std::printf("%-22s %8.2f %8.2f %10lld\n", std::string(strategy_label(r.strategy)).c_str(),
                100 * r.miou, 100 * r.pixel_accuracy, static_cast<long long>(r.params));
  }
  std::printf("wrote %s\n", csv.string().c_str());
  return kOk;
}

int cmd_export_attn(const std::string& checkpoint, const std::string& sample,
                    const std::string& out, int channels, int rows) {
  const auto ck = load_checkpoint(checkpoint);
  data::Sample s;
  s.id = fs::path(sample).filename().string();
  s.image = io::load_f32(sample);
  if (s.image.rank() != 3 || s.image.dim(0) != 3) {
    throw ShapeError("sample image must be [3 x H x W]");
  }
  s.labels = IntTensor({s.image.dim(1), s.image.dim(2)});
  const auto ex = export_attention(ck.model, s, ck.eval_base_size, out, channels, rows);
  if (!ex.cam_files.empty() || ck.model.config().has_cam()) {
    std::printf("cam %lldx%lld, %zu maps\n", static_cast<long long>(ex.cam_height),
                static_cast<long long>(ex.cam_width), ex.cam_files.size());
  }
  if (ck.model.config().has_sam()) {
    std::printf("sam %lldx%lld, %zu maps\n", static_cast<long long>(ex.sam_height),
                static_cast<long long>(ex.sam_width), ex.sam_files.size());
  }
  return kOk;
}

int cmd_params(const std::string& config) {
  const auto cfg = load_run_config(config, std::nullopt);
  const auto& m = cfg.model;
  const auto& st = m.backbone.stage_channels;
  std::printf("strategy            %s\n", std::string(strategy_label(m.strategy)).c_str());
  std::printf("backbone stages     %d, %d, %d, %d (blocks %d, %d, %d, %d)\n", st[0], st[1], st[2],
              st[3], m.backbone.blocks_per_stage[0], m.backbone.blocks_per_stage[1],
              m.backbone.blocks_per_stage[2], m.backbone.blocks_per_stage[3]);
  std::printf("branch4 -> SAM      %d\n", m.c_sam);
  if (m.has_sam()) std::printf("SAM query/key       %d\n", m.sam_key_channels());
  if (m.has_fusion()) {
    std::printf("mid transforms      3 x %d\n", m.c_mid);
    std::printf("fused map           %d = 3 x %d + %d\n", m.fused_channels(), m.c_mid, m.c_sam);
  }
  if (m.has_cam()) {
    std::printf("CAM                 %d (bottleneck %d)\n", m.cam_channels(),
                m.cam_channels() / m.cam_ratio);
  }
  std::printf("classes             %d\n", m.num_classes);

  FBNet<float> model(m, cfg.seed);
  const auto count = model.count_parameters();
  std::printf("module,parameters\n");
  for (const auto& [name, n] : count.per_module) {
    std::printf("%s,%lld\n", name.c_str(), static_cast<long long>(n));
  }
  std::printf("total,%lld\n", static_cast<long long>(count.total));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FBNet semantic segmentation harness"};
  app.require_subcommand(1);

  std::string spec, out, config, checkpoint, data_dir, sample;
  std::int64_t n = 0;
  int channels = 8, rows = 8;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen->add_option("--spec", spec, "Generator spec (key=value)")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--n", n, "Number of samples")->required();
  gen->add_option("--seed", seed, "Override the spec seed");

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config, "Run config (key=value)")->required();
  tr->add_option("--seed", seed, "Override the config seed");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", data_dir)->required();

  auto* ab = app.add_subcommand("ablate", "Train every strategy and write ablation.csv");
  ab->add_option("--config", config, "Run config (key=value)")->required();
  ab->add_option("--seed", seed, "Override the config seed");

  auto* ex = app.add_subcommand("export-attn", "Write attention maps of one sample");
  ex->add_option("--checkpoint", checkpoint)->required();
  ex->add_option("--sample", sample, "Image file (.img.fbt)")->required();
  ex->add_option("--out", out, "Output directory")->required();
  ex->add_option("--channels", channels, "CAM channels to write")->capture_default_str();
  ex->add_option("--rows", rows, "SAM rows to write")->capture_default_str();

  auto* pa = app.add_subcommand("params", "Print the channel ledger and parameter counts");
  pa->add_option("--config", config, "Run config (key=value)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    fail_line("usage", e.what());
    return kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(spec, out, n, seed);
    if (*tr) return cmd_train(config, seed);
    if (*ev) return cmd_eval(checkpoint, data_dir);
    if (*ab) return cmd_ablate(config, seed);
    if (*ex) return cmd_export_attn(checkpoint, sample, out, channels, rows);
    if (*pa) return cmd_params(config);
  } catch (const Error& e) {
    fail_line(e.kind(), e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    fail_line("internal", e.what());
    return kOther;
  }
  return kOther;
}
