#pragma once

#include <functional>

namespace semirep {

// Global worker cap applied by parallel_for (CLI --threads). 1 = serial.
void set_max_threads(int count);
int max_threads();

// Runs body(i) for i in [0, count). Work is split into contiguous index blocks,
// one per worker; each body writes only to its own index's output slot, so
// results are identical for any thread count. Exceptions are captured and the
// first one (by index) rethrown after all workers join.
void parallel_for(int count, const std::function<void(int)>& body);

}  // namespace semirep
