#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "cracsim/device_core.hpp"

namespace cracsim {

// --- call log -------------------------------------------------------------

// Only allocation-family calls shape allocator state, so only those are
// logged: alloc, free, binary (un)registration, stream create/destroy.
// Launches, copies, synchronizes and page accesses are never logged.
enum class LogOp : uint8_t {
  Alloc = 1,
  Free = 2,
  RegisterBinary = 3,
  UnregisterBinary = 4,
  StreamCreate = 5,
  StreamDestroy = 6,
};

constexpr const char* log_op_name(LogOp op) {
  switch (op) {
    case LogOp::Alloc: return "Alloc";
    case LogOp::Free: return "Free";
    case LogOp::RegisterBinary: return "RegisterBinary";
    case LogOp::UnregisterBinary: return "UnregisterBinary";
    case LogOp::StreamCreate: return "StreamCreate";
    case LogOp::StreamDestroy: return "StreamDestroy";
  }
  return "?";
}

struct CallLogEntry {
  uint64_t seq = 0;   // contiguous from 1
  LogOp op = LogOp::Alloc;
  uint8_t kind = 0;   // AllocationKind for Alloc entries, 0 otherwise
  uint64_t size = 0;  // requested bytes for Alloc entries, 0 otherwise
  uint64_t id = 0;    // allocation id, stream id, or binary handle
  uint64_t address = 0;  // result address for Alloc entries, 0 otherwise

  bool operator==(const CallLogEntry&) const = default;
};

// "seq op kind size id address" with a hex address; `-` for absent kinds.
std::string format_log_entry(const CallLogEntry& e);

class CallLog {
 public:
  std::vector<CallLogEntry> snapshot() const {
    std::lock_guard lk(mu_);
    return entries_;
  }
  size_t size() const {
    std::lock_guard lk(mu_);
    return entries_.size();
  }
  void reset(std::vector<CallLogEntry> entries) {
    std::lock_guard lk(mu_);
    entries_ = std::move(entries);
  }

 private:
  friend class DispatchTable;
  mutable std::mutex mu_;
  std::vector<CallLogEntry> entries_;
};

// Allocations logged and not yet freed, in allocation order.
std::vector<AllocationRecord> active_set(std::span<const CallLogEntry> log);

// --- region map -------------------------------------------------------------

enum class Half : uint8_t { Upper = 0, Lower = 1 };

inline constexpr uint8_t kPermRead = 1;
inline constexpr uint8_t kPermWrite = 2;
inline constexpr uint8_t kPermExec = 4;

struct Region {
  uint64_t start = 0;
  uint64_t length = 0;
  Half half = Half::Upper;
  uint8_t perms = 0;

  bool operator==(const Region&) const = default;
};

enum class Classification : uint8_t { Upper, Lower, Unmapped };

// Disjoint byte-ranged ownership map. Adjacent or overlapping same-half,
// same-permission regions are stored merged; a range may never span halves.
class RegionMap {
 public:
  void register_range(uint64_t start, uint64_t length, Half half, uint8_t perms);
  Classification classify(uint64_t address) const;
  std::vector<Region> regions() const;

 private:
  mutable std::mutex mu_;
  std::map<uint64_t, Region> regions_;  // keyed by start
};

// --- dispatch surface -------------------------------------------------------

// The complete set of calls an application can make. Each name has exactly
// one dispatch entry.
enum class CallId : uint8_t {
  Alloc = 0,
  Free,
  StreamCreate,
  StreamDestroy,
  RegisterFatBinary,
  UnregisterFatBinary,
  LaunchKernel,
  MemcpyH2D,
  MemcpyD2H,
  MemcpyD2D,
  Synchronize,
  PageRead,
  PageWrite,
  kCount,
};

inline constexpr size_t kCallCount = static_cast<size_t>(CallId::kCount);

constexpr const char* call_name(CallId c) {
  switch (c) {
    case CallId::Alloc: return "alloc";
    case CallId::Free: return "free";
    case CallId::StreamCreate: return "stream_create";
    case CallId::StreamDestroy: return "stream_destroy";
    case CallId::RegisterFatBinary: return "register_fat_binary";
    case CallId::UnregisterFatBinary: return "unregister_fat_binary";
    case CallId::LaunchKernel: return "launch_kernel";
    case CallId::MemcpyH2D: return "memcpy_h2d";
    case CallId::MemcpyD2H: return "memcpy_d2h";
    case CallId::MemcpyD2D: return "memcpy_d2d";
    case CallId::Synchronize: return "synchronize";
    case CallId::PageRead: return "page_read";
    case CallId::PageWrite: return "page_write";
    case CallId::kCount: break;
  }
  return "?";
}

class RuntimeApi {
 public:
  virtual ~RuntimeApi() = default;

  virtual AllocationRecord alloc(AllocationKind kind, uint64_t size) = 0;
  virtual void free(uint64_t id) = 0;
  virtual uint64_t stream_create() = 0;
  virtual void stream_destroy(uint64_t stream) = 0;
  virtual uint64_t register_fat_binary(std::vector<KernelDescriptor> kernels) = 0;
  virtual void unregister_fat_binary(uint64_t handle) = 0;
  virtual void launch(uint64_t stream, std::string_view kernel, std::vector<BufferRef> buffers,
                      std::vector<uint64_t> scalars) = 0;
  virtual void copy_h2d(BufferRef dst, std::span<const uint8_t> src,
                        std::optional<uint64_t> stream) = 0;
  virtual void copy_d2h(std::span<uint8_t> dst, BufferRef src, std::optional<uint64_t> stream) = 0;
  virtual void copy_d2d(BufferRef dst, BufferRef src, uint64_t n,
                        std::optional<uint64_t> stream) = 0;
  virtual void synchronize() = 0;
  virtual std::vector<uint8_t> page_read(uint64_t id, uint64_t offset, uint64_t n,
                                         PageSide side) = 0;
  virtual void page_write(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes,
                          PageSide side) = 0;

  virtual std::map<std::string, uint64_t> call_counts() const = 0;
  virtual uint64_t call_count(CallId c) const = 0;
};

// Counting pass-through with no log and no checkpoint barrier; the baseline
// an instrumented run is compared against.
class PassthroughApi : public RuntimeApi {
 public:
  explicit PassthroughApi(DeviceContext& ctx) : ctx_(ctx) {}

  AllocationRecord alloc(AllocationKind kind, uint64_t size) override;
  void free(uint64_t id) override;
  uint64_t stream_create() override;
  void stream_destroy(uint64_t stream) override;
  uint64_t register_fat_binary(std::vector<KernelDescriptor> kernels) override;
  void unregister_fat_binary(uint64_t handle) override;
  void launch(uint64_t stream, std::string_view kernel, std::vector<BufferRef> buffers,
              std::vector<uint64_t> scalars) override;
  void copy_h2d(BufferRef dst, std::span<const uint8_t> src,
                std::optional<uint64_t> stream) override;
  void copy_d2h(std::span<uint8_t> dst, BufferRef src, std::optional<uint64_t> stream) override;
  void copy_d2d(BufferRef dst, BufferRef src, uint64_t n, std::optional<uint64_t> stream) override;
  void synchronize() override;
  std::vector<uint8_t> page_read(uint64_t id, uint64_t offset, uint64_t n, PageSide side) override;
  void page_write(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes,
                  PageSide side) override;

  std::map<std::string, uint64_t> call_counts() const override;
  uint64_t call_count(CallId c) const override;

 protected:
  void count(CallId c) { counts_[static_cast<size_t>(c)]++; }

  DeviceContext& ctx_;
  std::array<std::atomic<uint64_t>, kCallCount> counts_{};
};

enum class TableMode : uint8_t { Direct = 0, Proxy = 1 };

// Interposed dispatch table. Allocation-family calls run under one global
// lock that covers both the device call and the log append, so log order is
// execution order even under concurrent callers. In Proxy mode every call is
// marshalled through an in-process channel that copies each buffer argument
// and result; Direct mode passes references straight through.
class DispatchTable : public RuntimeApi {
 public:
  DispatchTable(DeviceContext& ctx, CallLog& log, RegionMap& regions, TableMode mode);

  TableMode mode() const { return mode_; }

  AllocationRecord alloc(AllocationKind kind, uint64_t size) override;
  void free(uint64_t id) override;
  uint64_t stream_create() override;
  void stream_destroy(uint64_t stream) override;
  uint64_t register_fat_binary(std::vector<KernelDescriptor> kernels) override;
  void unregister_fat_binary(uint64_t handle) override;
  void launch(uint64_t stream, std::string_view kernel, std::vector<BufferRef> buffers,
              std::vector<uint64_t> scalars) override;
  void copy_h2d(BufferRef dst, std::span<const uint8_t> src,
                std::optional<uint64_t> stream) override;
  void copy_d2h(std::span<uint8_t> dst, BufferRef src, std::optional<uint64_t> stream) override;
  void copy_d2d(BufferRef dst, BufferRef src, uint64_t n, std::optional<uint64_t> stream) override;
  void synchronize() override;
  std::vector<uint8_t> page_read(uint64_t id, uint64_t offset, uint64_t n, PageSide side) override;
  void page_write(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes,
                  PageSide side) override;

  std::map<std::string, uint64_t> call_counts() const override;
  uint64_t call_count(CallId c) const override;

  // Checkpoint barrier: blocks new calls, waits for in-flight ones, then
  // drains the device and flushes proxy-held results so the quiesced state is
  // complete. Must be paired with resume().
  void quiesce(std::chrono::milliseconds timeout);
  void resume();

 private:
  class CallGuard;

  void count(CallId c) { counts_[static_cast<size_t>(c)]++; }
  void append_log(LogOp op, uint8_t kind, uint64_t size, uint64_t id, uint64_t address);
  void drain_locked();

  // Channel of the proxy executor: bytes crossing the boundary are copied in,
  // consumed from the copy, and results are copied back out.
  std::span<uint8_t> channel_cross(std::span<const uint8_t> bytes);
  void proxy_launch_shadow_sync(const std::vector<BufferRef>& buffers);

  DeviceContext& ctx_;
  CallLog& log_;
  RegionMap& regions_;
  TableMode mode_;
  std::array<std::atomic<uint64_t>, kCallCount> counts_{};

  std::shared_timed_mutex gate_;

  std::vector<uint8_t> channel_;
  struct PendingD2H {
    uint8_t* app_dst;
    uint64_t n;
    std::unique_ptr<std::vector<uint8_t>> staging;
  };
  std::mutex proxy_mu_;
  std::vector<PendingD2H> pending_d2h_;
};

}  // namespace cracsim
