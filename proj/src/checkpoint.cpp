// SPDX-License-Identifier: Apache-2.0
#include "fbnet/checkpoint.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fbnet/error.hpp"
#include "fbnet/run_config.hpp"
#include "fbnet/tensor_io.hpp"

namespace fbnet {

namespace fs = std::filesystem;

namespace {
constexpr const char* kMagic = "FBNET-CHECKPOINT 1";
}

void save_checkpoint(const fs::path& path, const FBNet<float>& model,
                     std::int64_t eval_base_size) {
  std::ostringstream blob;
  std::ostringstream header;
  header << kMagic << "\n" << model_config_text(model.config());
  header << "eval.base_size=" << eval_base_size << "\n";
  for (const auto& t : model.tensors()) {
    const auto offset = static_cast<std::int64_t>(blob.tellp());
    io::write_fbt(blob, t.tensor);
    const auto bytes = static_cast<std::int64_t>(blob.tellp()) - offset;
    header << "tensor " << t.name << " " << t.tensor.rank();
    for (auto d : t.tensor.shape()) header << " " << d;
    header << " " << offset << " " << bytes << "\n";
  }
  header << "end\n";

  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    const std::string h = header.str(), b = blob.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!out) throw IoError("failed writing checkpoint '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw IoError("'" + path.string() + "' is not an FBNet checkpoint");
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::int64_t offset = 0, bytes = 0;
  };
  ModelConfig cfg;
  std::int64_t base_size = 0;
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      Entry e;
      int rank = 0;
      ls >> e.name >> rank;
      e.shape.resize(static_cast<std::size_t>(std::max(rank, 0)));
      for (auto& d : e.shape) ls >> d;
      ls >> e.offset >> e.bytes;
      if (!ls || rank < 0) throw IoError("malformed checkpoint manifest line: " + line);
      entries.push_back(std::move(e));
      continue;
    }
    const auto eq = line.find('=');
    if (line.rfind("eval.base_size=", 0) == 0) {
      base_size = std::atoll(line.c_str() + eq + 1);
      continue;
    }
    if (eq == std::string::npos || !set_model_key(cfg, line.substr(0, eq), line.substr(eq + 1))) {
      throw IoError("unrecognized checkpoint header line: " + line);
    }
  }
  if (!ended) throw IoError("checkpoint '" + path.string() + "' has a truncated header");
  if (base_size < 1) throw IoError("checkpoint '" + path.string() + "' lacks eval.base_size");
  const auto blob_start = in.tellg();

  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw IoError("checkpoint '" + path.string() + "' holds an invalid model config: " + e.what());
  }
  FBNet<float> model(cfg, 0);
  auto tensors = model.tensors();
  if (tensors.size() != entries.size()) {
    throw IoError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                  std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    auto& t = tensors[i];
    if (e.name != t.name || e.shape != t.tensor.shape()) {
      throw IoError("checkpoint tensor '" + e.name + "' " + shape_str(e.shape) +
                    " does not match model tensor '" + t.name + "' " + shape_str(t.tensor.shape()));
    }
    in.seekg(blob_start + static_cast<std::streamoff>(e.offset));
    auto loaded = io::read_fbt(in);
    const auto* f = std::get_if<Tensor<float>>(&loaded);
    if (!f || f->shape() != e.shape) throw IoError("checkpoint tensor '" + e.name + "' is corrupt");
    std::copy(f->data().begin(), f->data().end(), t.tensor.data().begin());
  }
  return {std::move(model), base_size};
}

}  // namespace fbnet
