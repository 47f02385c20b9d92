#pragma once

#include <cstddef>
#include <functional>

namespace mcw {

/// Worker-thread count: MCW_WORKERS env var if set, else hardware concurrency.
std::size_t worker_count();

// Work is cut into chunks along fixed boundaries, independent of worker count;
// callers reduce per-chunk results in chunk order, so numerical output never
// depends on how many threads ran.
std::size_t chunk_count(std::size_t n);

/// Runs fn(begin, end, chunk_index) over fixed chunks of [0, n).
void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

} // namespace mcw
