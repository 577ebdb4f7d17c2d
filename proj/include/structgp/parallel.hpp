#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace structgp {

/// Worker-pool width: min(hardware, STRUCTGP_THREADS if set).
inline int worker_count() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("STRUCTGP_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1 && cap < n) n = cap;
    }
    return n;
}

/// Deterministic parallel map over [0, n): each index writes only its own
/// output slot, so the result is independent of the thread schedule.
template <typename Fn>
void parallel_for(long n, Fn&& fn, int max_threads = 0) {
    int workers = worker_count();
    if (max_threads > 0 && max_threads < workers) workers = max_threads;
    if (workers <= 1 || n < 2 * workers) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const long chunk = (n + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        const long lo = t * chunk;
        const long hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (long i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace structgp
