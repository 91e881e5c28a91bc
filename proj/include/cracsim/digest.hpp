#pragma once

#include <cstdint>
#include <span>

namespace cracsim {

// FNV-1a over bytes. Workload digests are pinned in tests; the fold order and
// this function are load-bearing for reproducibility.
class Fnv64 {
 public:
  static constexpr uint64_t kBasis = 0xCBF29CE484222325ULL;

  Fnv64() = default;
  // Resume folding from a previously saved value().
  explicit Fnv64(uint64_t state) : h_(state) {}

  void fold(std::span<const uint8_t> bytes) {
    for (uint8_t b : bytes) {
      h_ ^= b;
      h_ *= 0x100000001B3ULL;
    }
  }

  void fold_u64(uint64_t v) {
    for (size_t i = 0; i < 8; ++i) {
      h_ ^= static_cast<uint8_t>(v >> (8 * i));
      h_ *= 0x100000001B3ULL;
    }
  }

  uint64_t value() const { return h_; }

 private:
  uint64_t h_ = kBasis;
};

}  // namespace cracsim
