#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace semirep {

// Runs fn(i) for i in [0, count) on up to `threads` workers. Work items are
// independent and write only their own output slots, so results are identical
// to the serial order regardless of the thread count; the first exception (by
// work index) is rethrown after all workers join.
inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (count <= 0) return;
    if (threads <= 1 || count == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    const int workers = std::min(threads, count);
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<size_t>(count));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace semirep
