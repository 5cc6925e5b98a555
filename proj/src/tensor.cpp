#include "tensor.hpp"

#include <atomic>

namespace ad {

namespace {
std::atomic<bool> g_finite_checks{false};

// Keep BLAS single-threaded: the library parallelises across examples itself,
// and a fixed intra-op schedule keeps reductions bit-reproducible.
const bool g_blas_init = [] {
    openblas_set_num_threads(1);
    return true;
}();
}  // namespace

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }

}  // namespace ad
