/* Copyright 2026 The edgesplit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "edgesplit/error.hpp"

namespace edgesplit {

using Dims = std::vector<std::int64_t>;

inline std::int64_t volume(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::int64_t{1},
                         std::multiplies<>());
}

inline std::string dims_to_string(const Dims& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

// Dense row-major float tensor. Activations are laid out CHW without a batch
// dimension.
struct Tensor {
  Dims dims;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Dims d) : dims(std::move(d)), data(volume(dims), 0.0f) {}
  Tensor(Dims d, std::vector<float> values)
      : dims(std::move(d)), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != volume(dims)) {
      throw Error(ErrorCategory::kIo,
                  "tensor data length " + std::to_string(data.size()) +
                      " does not match dims " + dims_to_string(dims));
    }
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  float& operator[](std::int64_t i) { return data[i]; }
  float operator[](std::int64_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// ASTN blob: magic "ASTN", u32 version=1, u8 dtype (0=f32), u8 ndim,
// u32 dims[ndim], then the row-major f32 payload. All little-endian.
namespace blob {

inline constexpr char kMagic[4] = {'A', 'S', 'T', 'N'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  static_assert(std::endian::native == std::endian::little,
                "big-endian hosts are not supported");
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos,
         const std::string& what) {
  if (pos + sizeof(T) > in.size()) {
    throw IoError("truncated ASTN blob: " + what);
  }
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Tensor& t) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  detail::put_le<std::uint32_t>(out, kVersion);
  detail::put_le<std::uint8_t>(out, kDtypeF32);
  if (t.dims.size() > 255) throw IoError("too many dims for ASTN blob");
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (float v : t.data) detail::put_le<float>(out, v);
  return out;
}

inline Tensor decode(const std::vector<std::uint8_t>& in) {
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) {
    throw IoError("bad ASTN magic");
  }
  std::size_t pos = 4;
  auto version = detail::get_le<std::uint32_t>(in, pos, "version");
  if (version != kVersion) {
    throw IoError("unsupported ASTN version " + std::to_string(version));
  }
  auto dtype = detail::get_le<std::uint8_t>(in, pos, "dtype");
  if (dtype != kDtypeF32) throw IoError("unsupported ASTN dtype");
  auto ndim = detail::get_le<std::uint8_t>(in, pos, "ndim");
  Dims dims;
  for (int i = 0; i < ndim; ++i) {
    dims.push_back(detail::get_le<std::uint32_t>(in, pos, "dims"));
  }
  const auto n = volume(dims);
  if (in.size() - pos != static_cast<std::size_t>(n) * sizeof(float)) {
    throw IoError("ASTN payload length does not match dims " +
                  dims_to_string(dims));
  }
  std::vector<float> data(n);
  std::memcpy(data.data(), in.data() + pos, n * sizeof(float));
  return Tensor(std::move(dims), std::move(data));
}

inline void write_file(const std::filesystem::path& path, const Tensor& t) {
  auto bytes = encode(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

inline Tensor read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace blob
}  // namespace edgesplit
