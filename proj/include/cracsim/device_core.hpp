#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cracsim/common.hpp"
#include "cracsim/errors.hpp"

namespace cracsim {

class DeviceContext;
class KernelArgs;

// A kernel body is a deterministic transformation over its argument windows
// and scalars. Bodies are code and are never serialized; restart re-resolves
// them by name.
using KernelBody = std::function<void(KernelArgs&)>;

struct KernelDescriptor {
  std::string name;
  uint32_t buffer_arity = 0;
  uint32_t scalar_arity = 0;
  KernelBody body;
};

struct KernelInfo {
  std::string name;
  uint32_t buffer_arity = 0;
  uint32_t scalar_arity = 0;

  bool operator==(const KernelInfo&) const = default;
};

struct BinaryInfo {
  uint64_t handle = 0;
  std::vector<KernelInfo> kernels;

  bool operator==(const BinaryInfo&) const = default;
};

struct PageState {
  bool device_resident = false;
  bool dirty = false;
};

// Argument view handed to kernel bodies. Every access is routed through the
// managed-page model so migrations and dirty bits track exactly the bytes a
// kernel touches.
class KernelArgs {
 public:
  size_t buffer_count() const { return buffers_.size(); }
  std::span<const uint64_t> scalars() const { return scalars_; }
  uint64_t window_size(size_t i) const;

  std::span<const uint8_t> read(size_t i) { return read(i, 0, window_size(i)); }
  std::span<uint8_t> write(size_t i) { return write(i, 0, window_size(i)); }
  std::span<const uint8_t> read(size_t i, uint64_t offset, uint64_t len);
  std::span<uint8_t> write(size_t i, uint64_t offset, uint64_t len);

 private:
  friend class DeviceContext;
  KernelArgs(DeviceContext& ctx, std::span<const BufferRef> buffers,
             std::span<const uint64_t> scalars)
      : ctx_(ctx), buffers_(buffers), scalars_(scalars) {}

  DeviceContext& ctx_;
  std::span<const BufferRef> buffers_;
  std::span<const uint64_t> scalars_;
};

// Simulated accelerator runtime: one flat arena, first-fit allocation,
// FIFO streams, a kernel registry, and single-residence managed pages.
// Every mutating entry point is serialized on an internal lock; allocation
// addresses depend only on the order of calls.
class DeviceContext {
 public:
  // arena_bytes must be a positive multiple of kAlign.
  DeviceContext(uint64_t seed, uint64_t arena_bytes);

  DeviceContext(const DeviceContext&) = delete;
  DeviceContext& operator=(const DeviceContext&) = delete;

  AllocationRecord alloc(AllocationKind kind, uint64_t size);
  void free(uint64_t id);

  uint64_t stream_create();
  void stream_destroy(uint64_t stream);

  uint64_t register_fat_binary(std::vector<KernelDescriptor> kernels);
  void unregister_fat_binary(uint64_t handle);

  void launch(uint64_t stream, std::string_view kernel, std::vector<BufferRef> buffers,
              std::vector<uint64_t> scalars);

  // Copies run synchronously when no stream is given, otherwise they join the
  // stream's FIFO. Async host sources are staged at enqueue; async host
  // destinations must stay valid until the next synchronize.
  void copy_h2d(BufferRef dst, std::span<const uint8_t> src, std::optional<uint64_t> stream);
  void copy_d2h(std::span<uint8_t> dst, BufferRef src, std::optional<uint64_t> stream);
  void copy_d2d(BufferRef dst, BufferRef src, uint64_t n, std::optional<uint64_t> stream);

  // Drains every stream in global enqueue order. Idempotent once drained.
  void synchronize();

  std::vector<uint8_t> page_read(uint64_t id, uint64_t offset, uint64_t n, PageSide side);
  void page_write(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes, PageSide side);

  // Device-side byte access for any allocation kind; managed pages migrate as
  // if a kernel touched them. Used by copies and the proxy channel.
  std::vector<uint8_t> device_read_bytes(uint64_t id, uint64_t offset, uint64_t n);
  void device_write_bytes(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes);

  // --- introspection (tests, checkpoint engine) ---
  uint64_t seed() const { return seed_; }
  uint64_t arena_bytes() const { return arena_bytes_; }
  uint64_t epoch() const;
  std::vector<std::pair<uint64_t, uint64_t>> free_holes() const;  // address -> length
  std::vector<AllocationRecord> live_records() const;             // allocation order
  std::optional<AllocationRecord> find_record(uint64_t id) const;
  std::vector<uint64_t> live_stream_ids() const;
  uint64_t stream_completed(uint64_t stream) const;
  uint64_t stream_pending(uint64_t stream) const;
  std::vector<PageState> managed_pages(uint64_t id) const;
  std::vector<BinaryInfo> registered_binaries() const;
  bool kernel_registered(std::string_view name) const;

  // Raw arena access by simulated address; no page routing. Only the
  // checkpoint engine uses these, on a quiesced context.
  std::vector<uint8_t> read_raw(uint64_t address, uint64_t n) const;
  void write_raw(uint64_t address, std::span<const uint8_t> bytes);
  void restore_page_state(uint64_t id, uint64_t page_index, bool device_resident, bool dirty);

  // Canonical text form of the full state (content as hashes); two contexts
  // behave identically iff their dumps are equal.
  std::string debug_dump() const;

 private:
  struct LaunchTask {
    std::shared_ptr<const KernelDescriptor> kernel;
    std::vector<BufferRef> buffers;
    std::vector<uint64_t> scalars;
  };
  struct CopyH2DTask {
    BufferRef dst;
    std::vector<uint8_t> bytes;
  };
  struct CopyD2HTask {
    uint8_t* dst;
    uint64_t n;
    BufferRef src;
  };
  struct CopyD2DTask {
    BufferRef dst;
    BufferRef src;
    uint64_t n;
  };
  struct Task {
    uint64_t ticket;
    std::variant<LaunchTask, CopyH2DTask, CopyD2HTask, CopyD2DTask> op;
  };
  struct Stream {
    std::deque<Task> queue;
    uint64_t completed = 0;
  };
  struct LiveAlloc {
    AllocationRecord rec;
    uint64_t padded = 0;
    std::vector<PageState> pages;  // Managed only
  };
  struct KernelEntry {
    std::shared_ptr<const KernelDescriptor> desc;
    uint64_t handle = 0;
  };

  friend class KernelArgs;

  const LiveAlloc& live_or_throw(uint64_t id) const;
  Stream& stream_or_throw(uint64_t stream);
  void check_range(const AllocationRecord& rec, uint64_t offset, uint64_t n) const;
  // Flips residence toward `side` for the pages covering [offset, offset+len)
  // and marks them dirty on write. Returns true if any metadata changed.
  bool touch_pages(LiveAlloc& a, uint64_t offset, uint64_t len, PageSide side, bool write);
  uint8_t* arena_ptr(uint64_t address);
  const uint8_t* arena_ptr(uint64_t address) const;
  void read_locked(uint64_t id, uint64_t offset, uint64_t n, PageSide side, uint8_t* out);
  void write_locked(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes, PageSide side);
  void run_task(const Task& t);
  void synchronize_locked();

  uint64_t seed_ = 0;
  uint64_t arena_bytes_ = 0;
  std::vector<uint8_t> mem_;
  std::map<uint64_t, uint64_t> holes_;    // address -> length, coalesced
  std::map<uint64_t, LiveAlloc> live_;    // id -> allocation
  std::map<uint64_t, bool> ever_allocated_;  // id -> currently live
  std::map<uint64_t, Stream> streams_;
  std::map<std::string, KernelEntry, std::less<>> kernels_;
  std::map<uint64_t, std::vector<std::string>> binaries_;
  uint64_t next_alloc_id_ = 1;
  uint64_t next_stream_id_ = 1;
  uint64_t next_handle_ = 1;
  uint64_t next_ticket_ = 1;
  uint64_t epoch_ = 0;

  mutable std::mutex mu_;
};

}  // namespace cracsim
