// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqdyn/numerics/tensor.hpp"

// FDYT binary tensor records:
//   "FDYT" | u8 dtype (0 = f32, 1 = f64) | u8 rank | rank x u64 LE dims |
//   little-endian payload.
// Several records may be concatenated in one stream.
namespace freqdyn::io {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
void write_fdyt(std::ostream& os, const Tensor<T>& t);

/// Reads one record, converting its payload to T.
template <class T>
Tensor<T> read_fdyt(std::istream& is);

template <class T>
void save_fdyt(const std::filesystem::path& path, const Tensor<T>& t);
template <class T>
Tensor<T> load_fdyt(const std::filesystem::path& path);

}  // namespace freqdyn::io
