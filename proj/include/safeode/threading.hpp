#ifndef SAFEODE_THREADING_HPP
#define SAFEODE_THREADING_HPP

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace safeode {

inline int worker_count(int n_items, int requested = 0) {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("SAFEODE_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) hw = v;
    }
    if (requested > 0) hw = requested;
    return std::max(1, std::min(hw, n_items));
}

// Runs fn(i) for i in [0, n). Each index owns its output slot, so results are
// identical no matter how work is scheduled.
template <class Fn>
void parallel_for(int n, Fn&& fn, int requested_threads = 0) {
    if (n <= 0) return;
    int workers = worker_count(n, requested_threads);
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace safeode

#endif
