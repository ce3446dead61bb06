#pragma once

#include <cstddef>
#include <functional>

namespace moefn {

/// Process-wide worker count used by parallel_for. 0 means "use MOEFN_THREADS,
/// else 1".
void set_thread_count(std::size_t threads);
std::size_t thread_count();

/// Runs body(i) for i in [0, count) on up to thread_count() workers. Each
/// index must write only its own output slot; callers aggregate in index
/// order, so results never depend on the worker count. The first exception
/// thrown by any body is rethrown on the calling thread.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace moefn
