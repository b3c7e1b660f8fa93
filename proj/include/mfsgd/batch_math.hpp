#pragma once

#include <cstddef>

namespace mfsgd {

// Batched transcendentals from a fast-math translation unit so the compiler
// can use the vector math library. Each call is elementwise and pure; results
// may differ from the scalar libm by a few ulp but are deterministic for a
// given binary.
void tanh_batch(const double* u, double* out, std::size_t n);
void sin_batch(const double* u, double* out, std::size_t n);
void cos_batch(const double* u, double* out, std::size_t n);

}  // namespace mfsgd
