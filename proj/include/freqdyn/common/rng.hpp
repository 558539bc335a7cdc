// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

// All randomness in a run derives from one seed. Each consumer asks for a
// named substream so adding a new consumer never shifts existing streams.
namespace freqdyn {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name,
                          std::uint64_t index = 0) noexcept;

inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name,
                                 std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, name, index));
}

}  // namespace freqdyn
