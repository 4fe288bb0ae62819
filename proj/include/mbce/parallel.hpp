#ifndef MBCE_PARALLEL_HPP
#define MBCE_PARALLEL_HPP

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mbce {

// Worker count from MBCE_THREADS; defaults to 1 so runs are sequential (and
// trivially reproducible) unless the user opts in.
inline int thread_count() {
    if (const char* env = std::getenv("MBCE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

// Static block partition; each index is processed exactly once and workers
// write only to their own output slots, so results do not depend on n_threads.
inline void parallel_for(size_t n, const std::function<void(size_t)>& body,
                         int n_threads = 0) {
    if (n == 0) return;
    if (n_threads <= 0) n_threads = thread_count();
    if (n_threads <= 1 || n == 1) {
        for (size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const size_t workers = std::min(size_t(n_threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (size_t i = w; i < n; i += workers) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace mbce

#endif
