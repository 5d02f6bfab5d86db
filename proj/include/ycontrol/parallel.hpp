#pragma once

#include <functional>

namespace ycontrol {

// Runs body(i) for i in [0, count) on up to `threads` workers (<= 1 means
// inline). Tasks are claimed dynamically; callers must write results into
// per-task slots so the outcome does not depend on scheduling. The first
// exception thrown by any task is rethrown after all workers stop.
void parallel_for(int count, int threads, const std::function<void(int)>& body);

int hardware_threads();

}  // namespace ycontrol
