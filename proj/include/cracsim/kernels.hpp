#pragma once

#include <vector>

#include "cracsim/ckpt_engine.hpp"

namespace cracsim {

// The standard kernel set used by the built-in workloads.
//
//   fill8   (1 buffer; scalars: value, len)        bytes[i] = value
//   add8    (1 buffer; scalars: addend, len)       bytes[i] += addend (wrapping)
//   affine8 (1 buffer; scalars: mul, add, len)     bytes[i] = bytes[i]*mul + add (wrapping)
//   dot_f32 (x, y, out; scalars: n)                out.f32[0] = sum x[i]*y[i]
//   gemv_f32(A, x, y; scalars: m, k)               y = A.x, row-major f32
//   gemm_f32(A, B, C; scalars: m, k, n)            C = A.B, row-major f32
//
// Accumulation order is a fixed serial loop; results are bit-stable.
std::vector<KernelDescriptor> standard_kernels();

// Body lookup for restart.
const KernelCatalog& standard_catalog();

}  // namespace cracsim
