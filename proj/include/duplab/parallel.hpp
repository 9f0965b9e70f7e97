#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace duplab {

// Runs fn(0..n_tasks) on a fixed-size worker pool. Tasks must write only to
// their own output slots; results are then independent of scheduling order.
inline void run_parallel(std::size_t n_tasks, std::size_t n_workers,
                         const std::function<void(std::size_t)>& fn) {
    if (n_tasks == 0) return;
    if (n_workers <= 1 || n_tasks == 1) {
        for (std::size_t i = 0; i < n_tasks; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n_tasks || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t count = std::min(n_workers, n_tasks);
    pool.reserve(count);
    for (std::size_t w = 0; w < count; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// Worker count from the DUPLAB_WORKERS environment variable, defaulting to
// the hardware concurrency.
std::size_t default_workers();

}  // namespace duplab
