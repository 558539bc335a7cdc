// SPDX-License-Identifier: Apache-2.0
#include "freqdyn/numerics/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <type_traits>

namespace freqdyn::io {
namespace {

template <class U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::array<unsigned char, sizeof(U)> b;
    std::memcpy(b.data(), &v, sizeof(U));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(U));
    return v;
  }
}

template <class U>
void put(std::ostream& os, U v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw FormatError("FDYT: truncated record");
  return to_le(v);
}

constexpr char kMagic[4] = {'F', 'D', 'Y', 'T'};

}  // namespace

template <class T>
void write_fdyt(std::ostream& os, const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  os.write(kMagic, 4);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(
                            std::is_same_v<T, float> ? DType::f32 : DType::f64));
  if (t.rank() > 255) throw FormatError("FDYT: rank exceeds 255");
  put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
  for (T v : t.data()) put<T>(os, v);
  if (!os) throw FormatError("FDYT: write failed");
}

template <class T>
Tensor<T> read_fdyt(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("FDYT: bad magic");
  const auto code = get<std::uint8_t>(is);
  const auto rank = get<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
  const std::size_t n = shape_size(shape);
  std::vector<T> data(n);
  if (code == static_cast<std::uint8_t>(DType::f32)) {
    for (auto& v : data) v = static_cast<T>(get<float>(is));
  } else if (code == static_cast<std::uint8_t>(DType::f64)) {
    for (auto& v : data) v = static_cast<T>(get<double>(is));
  } else {
    throw FormatError("FDYT: unknown dtype code " + std::to_string(code));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <class T>
void save_fdyt(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  write_fdyt(os, t);
}

template <class T>
Tensor<T> load_fdyt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::ios_base::failure("cannot open " + path.string());
  return read_fdyt<T>(is);
}

template void write_fdyt<float>(std::ostream&, const Tensor<float>&);
template void write_fdyt<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_fdyt<float>(std::istream&);
template Tensor<double> read_fdyt<double>(std::istream&);
template void save_fdyt<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_fdyt<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_fdyt<float>(const std::filesystem::path&);
template Tensor<double> load_fdyt<double>(const std::filesystem::path&);

}  // namespace freqdyn::io
