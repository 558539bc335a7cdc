// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <optional>

namespace freqdyn {

/// Worker count: explicit value, else FREQDYN_THREADS, else hardware
/// concurrency. Always at least 1.
std::size_t resolve_threads(std::optional<std::size_t> requested = std::nullopt);

/// Process-wide cap used by parallel_for; set once by the CLI.
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Runs fn(i) for i in [0, n) on up to max_threads() workers. Each index is
/// visited exactly once; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace freqdyn
