#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace aftkm {

// Runs fn(0) .. fn(jobs-1) on up to `workers` threads.  Job pickup order is
// arbitrary but callers index their outputs by job id, so results do not
// depend on the worker count.  The first exception thrown by any job is
// rethrown on the calling thread after all workers finish.
inline void parallel_for(int jobs, int workers, const std::function<void(int)>& fn) {
    if (jobs <= 0) return;
    if (workers <= 1 || jobs == 1) {
        for (int j = 0; j < jobs; ++j) fn(j);
        return;
    }
    int nthreads = std::min(workers, jobs);
    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr err;
    std::mutex err_mu;
    auto body = [&] {
        for (;;) {
            int j = next.fetch_add(1);
            if (j >= jobs || failed.load()) return;
            try {
                fn(j);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

inline int hardware_workers() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace aftkm
