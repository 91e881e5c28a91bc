#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cracsim/image.hpp"
#include "cracsim/snapshot.hpp"

namespace cracsim {

using KernelCatalog = std::map<std::string, KernelBody, std::less<>>;

struct SessionConfig {
  uint64_t seed = 0;
  uint64_t arena_bytes = 1ull << 24;
  TableMode mode = TableMode::Direct;
  std::chrono::milliseconds quiesce_timeout{30000};
};

// One running application context: the device, the interposed dispatch table,
// the call log, the region map, and the application's own state bytes.
// The device is reconstructed at restart, never deserialized; app_state is
// carried in the image verbatim.
class Session {
 public:
  explicit Session(const SessionConfig& cfg);

  Session(Session&&) = default;
  Session& operator=(Session&&) = default;

  RuntimeApi& api() { return *table_; }
  DispatchTable& table() { return *table_; }
  DeviceContext& device() { return *ctx_; }
  CallLog& log() { return *log_; }
  RegionMap& regions() { return *regions_; }
  std::vector<uint8_t>& app_state() { return app_state_; }
  const SessionConfig& config() const { return cfg_; }

 private:
  friend Snapshot checkpoint(Session&);
  friend Session restart(const Snapshot&, const KernelCatalog&, TableMode,
                         std::chrono::milliseconds);

  SessionConfig cfg_;
  std::unique_ptr<DeviceContext> ctx_;
  std::unique_ptr<CallLog> log_;
  std::unique_ptr<RegionMap> regions_;
  std::unique_ptr<DispatchTable> table_;
  std::vector<uint8_t> app_state_;
};

// Quiesces the session, captures a snapshot, and resumes it. Non-destructive:
// the session keeps running afterwards. Payload bytes are captured only for
// allocations that are live at the instant of capture.
Snapshot checkpoint(Session& session);

void checkpoint_to_file(Session& session, const std::filesystem::path& path,
                        bool compress = false);

// Replays a call log against a fresh context in sequence order and verifies
// that every allocation lands at its recorded address; any mismatch raises
// ReplayDivergence. Register entries re-register descriptors when `binaries`
// provides them (keyed by handle) and otherwise consume the handle with an
// empty placeholder so later handles still line up. Returns seq -> address
// for the Alloc entries.
std::map<uint64_t, uint64_t> replay_log(
    DeviceContext& ctx, std::span<const CallLogEntry> log,
    const std::map<uint64_t, std::vector<KernelDescriptor>>* binaries = nullptr);

// Rebuilds a running session from a snapshot: fresh device, binaries
// re-registered, full log replayed and verified, payloads and page state
// restored, app_state handed back. Kernel bodies are resolved from `catalog`
// by name; a missing body raises UnknownKernelBody.
Session restart(const Snapshot& snapshot, const KernelCatalog& catalog,
                TableMode mode = TableMode::Direct,
                std::chrono::milliseconds quiesce_timeout = std::chrono::milliseconds{30000});

Session restart_from_file(const std::filesystem::path& path, const KernelCatalog& catalog,
                          TableMode mode = TableMode::Direct);

}  // namespace cracsim
