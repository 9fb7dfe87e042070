// SPDX-License-Identifier: Apache-2.0
#include "fbnet/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fbnet/error.hpp"

namespace fbnet::io {

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'B', 'T', '1'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("FBT1: truncated header");
  return to_little(v);
}

void write_header(std::ostream& os, const Shape& shape, DType dtype) {
  os.write(kMagic.data(), kMagic.size());
  write_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (auto e : shape) write_u32(os, static_cast<std::uint32_t>(e));
  const auto code = static_cast<char>(dtype);
  os.write(&code, 1);
}

template <typename U>
void write_buffer(std::ostream& os, std::span<const U> data) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size_bytes()));
  } else {
    for (U v : data) {
      U le = to_little(v);
      os.write(reinterpret_cast<const char*>(&le), sizeof le);
    }
  }
  if (!os) throw IoError("FBT1: write failed");
}

template <typename U>
std::vector<U> read_buffer(std::istream& is, std::int64_t count) {
  std::vector<U> out(static_cast<std::size_t>(count));
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(U)));
  if (!is) throw IoError("FBT1: truncated payload");
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : out) v = to_little(v);
  }
  return out;
}

}  // namespace

void write_fbt(std::ostream& os, const Tensor<float>& t) {
  write_header(os, t.shape(), DType::kF32);
  write_buffer(os, t.data());
}

void write_fbt(std::ostream& os, const Tensor<double>& t) {
  write_header(os, t.shape(), DType::kF64);
  write_buffer(os, t.data());
}

void write_fbt(std::ostream& os, const IntTensor& t) {
  write_header(os, t.shape(), DType::kI32);
  write_buffer(os, t.data());
}

AnyTensor read_fbt(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) {
    throw IoError("FBT1: bad magic");
  }
  const std::uint32_t rank = read_u32(is);
  if (rank > 16) {
    throw IoError("FBT1: implausible rank " + std::to_string(rank));
  }
  Shape shape(rank);
  for (auto& e : shape) {
    e = read_u32(is);
    if (e == 0) throw IoError("FBT1: zero extent");
  }
  char code = 0;
  is.read(&code, 1);
  if (!is) throw IoError("FBT1: truncated header");
  const std::int64_t n = shape_numel(shape);
  switch (static_cast<DType>(code)) {
    case DType::kF32:
      return Tensor<float>(std::move(shape), read_buffer<float>(is, n));
    case DType::kF64:
      return Tensor<double>(std::move(shape), read_buffer<double>(is, n));
    case DType::kI32:
      return IntTensor(std::move(shape), read_buffer<std::int32_t>(is, n));
  }
  throw IoError("FBT1: unknown dtype code " + std::to_string(static_cast<int>(code)));
}

void save_fbt(const std::filesystem::path& path, const AnyTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  std::visit([&](const auto& v) { write_fbt(os, v); }, t);
  os.close();
  if (!os) throw IoError("failed writing " + path.string());
}

AnyTensor load_fbt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_fbt(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Tensor<float> load_f32(const std::filesystem::path& path) {
  auto any = load_fbt(path);
  if (auto* t = std::get_if<Tensor<float>>(&any)) return *t;
  throw IoError(path.string() + ": expected an f32 tensor");
}

IntTensor load_i32(const std::filesystem::path& path) {
  auto any = load_fbt(path);
  if (auto* t = std::get_if<IntTensor>(&any)) return *t;
  throw IoError(path.string() + ": expected an i32 tensor");
}

}  // namespace fbnet::io
