// Compiled with fast-math and native tuning (see CMakeLists) so the loops
// lower to the glibc vector math routines. Nothing here reassociates user
// arithmetic: each loop body is a single elementwise libm call.

#include "mfsgd/batch_math.hpp"

#include <cmath>

namespace mfsgd {

void tanh_batch(const double* u, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(u[i]);
}

void sin_batch(const double* u, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::sin(u[i]);
}

void cos_batch(const double* u, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::cos(u[i]);
}

}  // namespace mfsgd
