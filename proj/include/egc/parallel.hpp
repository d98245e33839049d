#pragma once

#include <cstddef>
#include <functional>

namespace egc {

// Number of workers actually used for `threads` requested (0 = all cores).
int resolve_threads(int threads);

// Runs fn(i) for i in [0, n). Work is split into fixed-size chunks handed to
// workers, so results accumulated per index are independent of the thread
// count. fn must be safe to call concurrently for distinct i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  int threads = 0);

}  // namespace egc
