#pragma once

#include <functional>

namespace patchseg {

/// Worker count: `requested` when positive, else PATCHSEG_WORKERS, else the
/// hardware concurrency.
int resolve_workers(int requested);

/// Calls fn(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; the first exception thrown is rethrown after all workers
/// stop.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace patchseg
