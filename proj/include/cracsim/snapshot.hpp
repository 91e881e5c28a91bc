#pragma once

#include <cstdint>
#include <vector>

#include "cracsim/shim.hpp"

namespace cracsim {

inline constexpr uint32_t kEngineVersion = 1;

struct SnapshotMeta {
  uint64_t seed = 0;
  uint64_t arena_bytes = 0;
  uint32_t engine_version = kEngineVersion;

  bool operator==(const SnapshotMeta&) const = default;
};

// Full contents of one Device or PinnedHost allocation, keyed by id.
struct PayloadRecord {
  uint64_t id = 0;
  std::vector<uint8_t> bytes;

  bool operator==(const PayloadRecord&) const = default;
};

struct PageRecord {
  uint64_t index = 0;
  bool device_resident = false;
  bool dirty = false;
  std::vector<uint8_t> content;  // kPageSize except a short final page

  bool operator==(const PageRecord&) const = default;
};

struct ManagedRecord {
  uint64_t id = 0;
  std::vector<PageRecord> pages;

  bool operator==(const ManagedRecord&) const = default;
};

// Everything needed to rebuild a session: the call log replays the lower
// half, payloads and pages restore bytes, app_state restores the upper half.
// Only allocations live at checkpoint time carry payloads.
struct Snapshot {
  SnapshotMeta meta;
  std::vector<CallLogEntry> log;
  std::vector<PayloadRecord> payloads;  // allocation order (ascending id)
  std::vector<ManagedRecord> managed;   // allocation order (ascending id)
  std::vector<uint64_t> streams;        // live stream ids, ascending
  std::vector<uint8_t> app_state;
  std::vector<BinaryInfo> binaries;     // live registrations, ascending handle

  bool operator==(const Snapshot&) const = default;
};

}  // namespace cracsim
