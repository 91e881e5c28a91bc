#pragma once

#include <cstdint>

namespace cracsim {

// Simulated device address space. Allocation addresses are a pure function of
// the call order, never of the seed; restart relies on that.
inline constexpr uint64_t kArenaBase = 0x0D00'0000'0000ULL;
inline constexpr uint64_t kAlign = 256;
inline constexpr uint64_t kPageSize = 4096;
inline constexpr uint32_t kMaxStreams = 128;

enum class AllocationKind : uint8_t {
  Device = 1,
  PinnedHost = 2,
  Managed = 3,
};

constexpr const char* allocation_kind_name(AllocationKind k) {
  switch (k) {
    case AllocationKind::Device: return "device";
    case AllocationKind::PinnedHost: return "pinned";
    case AllocationKind::Managed: return "managed";
  }
  return "?";
}

enum class PageSide : uint8_t { Host = 0, Device = 1 };
enum class AccessMode : uint8_t { Read = 0, Write = 1 };

// A device-side byte window: allocation id plus byte offset into it.
struct BufferRef {
  uint64_t id = 0;
  uint64_t offset = 0;
};

struct AllocationRecord {
  uint64_t id = 0;
  AllocationKind kind = AllocationKind::Device;
  uint64_t size = 0;  // requested bytes; arena extent is size rounded up to kAlign
  uint64_t address = 0;
  bool freed = false;

  bool operator==(const AllocationRecord&) const = default;
};

inline constexpr uint64_t round_up_align(uint64_t n) { return (n + kAlign - 1) & ~(kAlign - 1); }

inline constexpr uint64_t page_count_for(uint64_t size) {
  return (size + kPageSize - 1) / kPageSize;
}

// splitmix64: cheap stateless per-index randomness for workloads and tests.
inline constexpr uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace cracsim
