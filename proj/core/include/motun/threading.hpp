#pragma once

#include <cstddef>
#include <functional>

namespace motun {

/// Runs fn(i) for i in [0, n) across up to `threads` workers with a static
/// index partition. Results must be written to per-index slots so the outcome
/// is identical for any thread count; reductions happen in index order on the
/// caller side.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace motun
