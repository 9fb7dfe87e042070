// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <variant>

#include "fbnet/tensor.hpp"

// FBT1 tensor files: the ASCII magic "FBT1", a little-endian u32 rank, rank
// little-endian u32 extents, a u8 dtype code (0 = f32, 1 = f64, 2 = i32) and
// the raw little-endian element buffer.
namespace fbnet::io {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kI32 = 2 };

using AnyTensor = std::variant<Tensor<float>, Tensor<double>, IntTensor>;

void write_fbt(std::ostream& os, const Tensor<float>& t);
void write_fbt(std::ostream& os, const Tensor<double>& t);
void write_fbt(std::ostream& os, const IntTensor& t);
AnyTensor read_fbt(std::istream& is);

void save_fbt(const std::filesystem::path& path, const AnyTensor& t);
AnyTensor load_fbt(const std::filesystem::path& path);

// Typed loaders; throw IoError when the stored dtype differs.
Tensor<float> load_f32(const std::filesystem::path& path);
IntTensor load_i32(const std::filesystem::path& path);

}  // namespace fbnet::io
