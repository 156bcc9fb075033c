#pragma once

#include <functional>

namespace odpg {

// Process-wide worker count for op-internal parallelism. Work is
// partitioned statically by index (i -> worker i % workers), so results
// are bit-identical across runs for a fixed thread count; single-threaded
// runs carry the bit-exact determinism guarantee.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n) on the persistent pool.
void parallel_for(int n, const std::function<void(int)>& fn);

// Variant exposing the executing worker id (0 <= w < num_threads()), for
// per-worker scratch buffers.
void parallel_for_worker(int n, const std::function<void(int, int)>& fn);

}  // namespace odpg
