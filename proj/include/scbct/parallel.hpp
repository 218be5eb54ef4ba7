#pragma once

#include <cstdint>
#include <functional>

namespace scbct {

// Process-wide worker cap. 0 restores the hardware default.
void set_thread_count(int n);
int thread_count();

// Runs fn(begin, end) over disjoint chunks of [0, n). Callers must write each
// output element from exactly one chunk so results never depend on the
// schedule or the worker count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace scbct
