#pragma once

#include <thread>
#include <vector>

namespace hpl {

/// Runs fn(i) for i in [0, n) across up to `workers` threads. Work items
/// must be independent; callers keep determinism by deriving any randomness
/// from the item index, never from thread identity or scheduling.
template <typename Fn>
void parallel_for(int n, int workers, Fn&& fn) {
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int k = std::min(workers, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(k));
    for (int w = 0; w < k; ++w) {
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += k) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace hpl
