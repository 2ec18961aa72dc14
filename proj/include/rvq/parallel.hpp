#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace rvq {

/// Run fn(i) for i in [0, n) across up to `threads` workers using a static
/// block split. Callers must write results into per-index slots (and merge in
/// index order afterwards) so the outcome is independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (n == 0) return;
    std::size_t workers = threads < 1 ? 1 : static_cast<std::size_t>(threads);
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([begin, end, &fn] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (std::thread& t : pool) t.join();
}

} // namespace rvq
