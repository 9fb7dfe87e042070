// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "fbnet/model.hpp"

// Checkpoint layout: a plain-text header followed by a binary blob.
//
//   FBNET-CHECKPOINT 1
//   model.<key>=<value>                  one line per model config key
//   eval.base_size=<int>                 evaluation resize target
//   tensor <name> <rank> <dims...> <offset> <bytes>
//   ...
//   end
//   <blob: FBT1 records concatenated; offsets are relative to the blob start>
//
// Both parameters and batch-norm running statistics are stored, so a loaded
// model reproduces eval-mode outputs bit for bit.
namespace fbnet {

// Writes to a temporary sibling file and renames it into place, so an
// interrupted save never clobbers the previous checkpoint.
void save_checkpoint(const std::filesystem::path& path, const FBNet<float>& model,
                     std::int64_t eval_base_size);

struct Checkpoint {
  FBNet<float> model;
  std::int64_t eval_base_size = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fbnet
