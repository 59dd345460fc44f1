#include "ilq/runtime.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ilq {

void init_threads_from_env() {
    const char* v = std::getenv("ILQ_THREADS");
    if (!v) return;
    try {
        const int n = std::stoi(v);
        if (n >= 1) {
#ifdef _OPENMP
            omp_set_num_threads(n);
#endif
        }
    } catch (...) {
        // ignore malformed values
    }
}

int worker_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace ilq
