#include "cracsim/kernels.hpp"

#include <cstring>

#include "cracsim/errors.hpp"

namespace cracsim {
namespace {

void fill8_body(KernelArgs& args) {
  const uint8_t value = static_cast<uint8_t>(args.scalars()[0]);
  const uint64_t len = args.scalars()[1];
  auto out = args.write(0, 0, len);
  std::memset(out.data(), value, out.size());
}

void add8_body(KernelArgs& args) {
  const uint8_t addend = static_cast<uint8_t>(args.scalars()[0]);
  const uint64_t len = args.scalars()[1];
  auto out = args.write(0, 0, len);
  for (uint8_t& b : out) b = static_cast<uint8_t>(b + addend);
}

void affine8_body(KernelArgs& args) {
  const uint8_t mul = static_cast<uint8_t>(args.scalars()[0]);
  const uint8_t add = static_cast<uint8_t>(args.scalars()[1]);
  const uint64_t len = args.scalars()[2];
  auto out = args.write(0, 0, len);
  for (uint8_t& b : out) b = static_cast<uint8_t>(b * mul + add);
}

// Four-lane accumulation with a fixed combine order: deterministic and
// bit-stable, but not limited by one serial add chain.
float dot4(const float* x, const float* y, uint64_t n) {
  float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
  uint64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 += x[i] * y[i];
    a1 += x[i + 1] * y[i + 1];
    a2 += x[i + 2] * y[i + 2];
    a3 += x[i + 3] * y[i + 3];
  }
  float acc = (a0 + a1) + (a2 + a3);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// Buffer windows handed to the f32 kernels must be 4-byte aligned; the
// built-in workloads only ever pass offsets that are multiples of 4.
void dot_f32_body(KernelArgs& args) {
  const uint64_t n = args.scalars()[0];
  auto xb = args.read(0, 0, n * 4);
  auto yb = args.read(1, 0, n * 4);
  auto ob = args.write(2, 0, 4);
  const float acc = dot4(reinterpret_cast<const float*>(xb.data()),
                         reinterpret_cast<const float*>(yb.data()), n);
  std::memcpy(ob.data(), &acc, 4);
}

void gemv_f32_body(KernelArgs& args) {
  const uint64_t m = args.scalars()[0];
  const uint64_t k = args.scalars()[1];
  auto ab = args.read(0, 0, m * k * 4);
  auto xb = args.read(1, 0, k * 4);
  auto yb = args.write(2, 0, m * 4);
  const float* a = reinterpret_cast<const float*>(ab.data());
  const float* x = reinterpret_cast<const float*>(xb.data());
  float* y = reinterpret_cast<float*>(yb.data());
  for (uint64_t i = 0; i < m; ++i) y[i] = dot4(a + i * k, x, k);
}

void gemm_f32_body(KernelArgs& args) {
  const uint64_t m = args.scalars()[0];
  const uint64_t k = args.scalars()[1];
  const uint64_t n = args.scalars()[2];
  auto ab = args.read(0, 0, m * k * 4);
  auto bb = args.read(1, 0, k * n * 4);
  auto cb = args.write(2, 0, m * n * 4);
  const float* a = reinterpret_cast<const float*>(ab.data());
  const float* b = reinterpret_cast<const float*>(bb.data());
  float* c = reinterpret_cast<float*>(cb.data());
  for (uint64_t i = 0; i < m; ++i) {
    for (uint64_t j = 0; j < n; ++j) {
      const float* bj = b + j;
      float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
      uint64_t p = 0;
      for (; p + 4 <= k; p += 4) {
        a0 += a[i * k + p] * bj[p * n];
        a1 += a[i * k + p + 1] * bj[(p + 1) * n];
        a2 += a[i * k + p + 2] * bj[(p + 2) * n];
        a3 += a[i * k + p + 3] * bj[(p + 3) * n];
      }
      float acc = (a0 + a1) + (a2 + a3);
      for (; p < k; ++p) acc += a[i * k + p] * bj[p * n];
      c[i * n + j] = acc;
    }
  }
}

}  // namespace

std::vector<KernelDescriptor> standard_kernels() {
  return {
      {"fill8", 1, 2, fill8_body},       {"add8", 1, 2, add8_body},
      {"affine8", 1, 3, affine8_body},   {"dot_f32", 3, 1, dot_f32_body},
      {"gemv_f32", 3, 2, gemv_f32_body}, {"gemm_f32", 3, 3, gemm_f32_body},
  };
}

const KernelCatalog& standard_catalog() {
  static const KernelCatalog catalog = [] {
    KernelCatalog c;
    for (const auto& d : standard_kernels()) c.emplace(d.name, d.body);
    return c;
  }();
  return catalog;
}

}  // namespace cracsim
