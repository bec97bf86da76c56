#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace ckm {

// Worker count: CKMFORGE_THREADS if set and positive, else hardware concurrency.
int worker_count();

// Runs body(i) for i in [0, n). Items are independent; order of completion is unspecified,
// results must be written to per-item slots. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body, int threads = 0);

// Stream seed for item `index` of a run seeded with `base` (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace ckm
