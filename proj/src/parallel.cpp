#include "mcw/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mcw {

namespace {

constexpr std::size_t kChunkGrain = 256; // minimum indices per chunk
constexpr std::size_t kMaxChunks = 64;

std::size_t env_workers() {
    const char* s = std::getenv("MCW_WORKERS");
    if (s == nullptr) return 0;
    long v = std::strtol(s, nullptr, 10);
    return v > 0 ? static_cast<std::size_t>(v) : 0;
}

} // namespace

std::size_t worker_count() {
    std::size_t w = env_workers();
    if (w == 0) w = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    return w;
}

std::size_t chunk_count(std::size_t n) {
    if (n == 0) return 0;
    std::size_t c = (n + kChunkGrain - 1) / kChunkGrain;
    return std::min(std::max<std::size_t>(1, c), kMaxChunks);
}

void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    std::size_t chunks = chunk_count(n);
    if (chunks == 0) return;

    auto chunk_bounds = [&](std::size_t c) {
        std::size_t begin = c * n / chunks;
        std::size_t end = (c + 1) * n / chunks;
        return std::pair<std::size_t, std::size_t>(begin, end);
    };

    std::size_t workers = std::min(worker_count(), chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) {
            auto [b, e] = chunk_bounds(c);
            fn(b, e, c);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            std::size_t c = next.fetch_add(1);
            if (c >= chunks) break;
            auto [b, e] = chunk_bounds(c);
            fn(b, e, c);
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t i = 1; i < workers; ++i) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

} // namespace mcw
