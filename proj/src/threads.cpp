#include "semirep/threads.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace semirep {

namespace {
int g_max_threads = 1;
}  // namespace

void set_max_threads(int count) { g_max_threads = count < 1 ? 1 : count; }

int max_threads() { return g_max_threads; }

void parallel_for(int count, const std::function<void(int)>& body) {
    if (count <= 0) return;
    const int workers = g_max_threads < count ? g_max_threads : count;
    if (workers <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    // Contiguous blocks: worker w handles [w*chunk, min((w+1)*chunk, count)).
    const int chunk = (count + workers - 1) / workers;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            const int lo = w * chunk;
            const int hi = (w + 1) * chunk < count ? (w + 1) * chunk : count;
            try {
                for (int i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace semirep
