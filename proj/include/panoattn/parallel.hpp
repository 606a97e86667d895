#pragma once

#include <cstddef>
#include <functional>

namespace panoattn {

/// Worker count: PANOATTN_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n) over contiguous chunks. Bodies must write
/// disjoint outputs; results then do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace panoattn
