#pragma once

namespace ilq {

// Applies the ILQ_THREADS cap to the OpenMP worker pool. Unset or invalid
// values leave the default (logical cores).
void init_threads_from_env();

int worker_count();

}  // namespace ilq
