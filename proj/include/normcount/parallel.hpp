#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace normcount {

// worker count: explicit value, else NORMCOUNT_THREADS, else hardware concurrency
inline int thread_count(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* s = std::getenv("NORMCOUNT_THREADS")) {
        int t = std::atoi(s);
        if (t > 0) return t;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// f(i) for i in [0, n); iterations are claimed dynamically
template <class F>
void parallel_for(long n, int threads, F&& f) {
    threads = static_cast<int>(std::min<long>(std::max(1, threads), std::max(1L, n)));
    if (threads == 1) {
        for (long i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::atomic<bool> failed{false};
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            try {
                for (long i; (i = next++) < n && !failed;) f(i);
            } catch (...) {
                if (!failed.exchange(true)) err = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace normcount
