#pragma once

#include <cstddef>
#include <functional>

namespace kolmo {

/// Worker count from KOLMO_THREADS (default 1, clamped to [1, 256]).
int thread_count();

/// Runs body(i) for i in [0, n) over contiguous chunks. Results must not depend
/// on the schedule: each index writes only its own outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace kolmo
