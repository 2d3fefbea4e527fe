#pragma once

#include <cstddef>
#include <functional>

namespace bop {

// Worker count for parallel loops: BOP_NUM_THREADS if set and positive,
// otherwise the hardware concurrency (at least 1).
std::size_t thread_count();

// Overrides the worker count for this process; 0 restores the default.
void set_thread_count(std::size_t n);

// Splits [0, n) into contiguous chunks of at least `grain` items and runs
// body(begin, end) on each, possibly concurrently. Callers must write to
// disjoint outputs; any reduction happens afterwards in index order so results
// do not depend on the worker count.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace bop
