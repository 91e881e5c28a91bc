#include "cracsim/shim.hpp"

#include <cstring>
#include <sstream>

namespace cracsim {

std::string format_log_entry(const CallLogEntry& e) {
  std::ostringstream os;
  os << e.seq << " " << log_op_name(e.op) << " ";
  if (e.op == LogOp::Alloc)
    os << allocation_kind_name(static_cast<AllocationKind>(e.kind));
  else
    os << "-";
  os << " " << e.size << " " << e.id << " 0x" << std::hex << e.address;
  return os.str();
}

std::vector<AllocationRecord> active_set(std::span<const CallLogEntry> log) {
  std::vector<AllocationRecord> records;
  std::map<uint64_t, size_t> index;
  std::vector<bool> live;
  for (const auto& e : log) {
    if (e.op == LogOp::Alloc) {
      index[e.id] = records.size();
      records.push_back(AllocationRecord{e.id, static_cast<AllocationKind>(e.kind), e.size,
                                         e.address, false});
      live.push_back(true);
    } else if (e.op == LogOp::Free) {
      auto it = index.find(e.id);
      if (it != index.end()) live[it->second] = false;
    }
  }
  std::vector<AllocationRecord> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (live[i]) out.push_back(records[i]);
  return out;
}

// --- region map -------------------------------------------------------------

void RegionMap::register_range(uint64_t start, uint64_t length, Half half, uint8_t perms) {
  std::lock_guard lk(mu_);
  if (length == 0) raise(Errc::InvalidArgument, "region length must be positive");
  const uint64_t end = start + length;

  // Collect regions overlapping or touching [start, end).
  std::vector<std::map<uint64_t, Region>::iterator> merge;
  auto it = regions_.lower_bound(start);
  if (it != regions_.begin()) --it;
  for (; it != regions_.end() && it->second.start <= end; ++it) {
    const Region& r = it->second;
    const bool overlaps = r.start < end && start < r.start + r.length;
    const bool touches = r.start + r.length == start || end == r.start;
    if (overlaps && r.half != half)
      raise(Errc::HalfConflict, "range overlaps a region of the other half");
    if (overlaps && r.perms != perms)
      raise(Errc::InvalidArgument, "range overlaps a region with different permissions");
    if ((overlaps || touches) && r.half == half && r.perms == perms) merge.push_back(it);
  }

  uint64_t lo = start, hi = end;
  for (auto m : merge) {
    lo = std::min(lo, m->second.start);
    hi = std::max(hi, m->second.start + m->second.length);
  }
  for (auto m : merge) regions_.erase(m);
  regions_.emplace(lo, Region{lo, hi - lo, half, perms});
}

Classification RegionMap::classify(uint64_t address) const {
  std::lock_guard lk(mu_);
  auto it = regions_.upper_bound(address);
  if (it == regions_.begin()) return Classification::Unmapped;
  --it;
  const Region& r = it->second;
  if (address >= r.start && address < r.start + r.length)
    return r.half == Half::Upper ? Classification::Upper : Classification::Lower;
  return Classification::Unmapped;
}

std::vector<Region> RegionMap::regions() const {
  std::lock_guard lk(mu_);
  std::vector<Region> out;
  out.reserve(regions_.size());
  for (const auto& [start, r] : regions_) out.push_back(r);
  return out;
}

// --- passthrough ------------------------------------------------------------

AllocationRecord PassthroughApi::alloc(AllocationKind kind, uint64_t size) {
  count(CallId::Alloc);
  return ctx_.alloc(kind, size);
}
void PassthroughApi::free(uint64_t id) {
  count(CallId::Free);
  ctx_.free(id);
}
uint64_t PassthroughApi::stream_create() {
  count(CallId::StreamCreate);
  return ctx_.stream_create();
}
void PassthroughApi::stream_destroy(uint64_t stream) {
  count(CallId::StreamDestroy);
  ctx_.stream_destroy(stream);
}
uint64_t PassthroughApi::register_fat_binary(std::vector<KernelDescriptor> kernels) {
  count(CallId::RegisterFatBinary);
  return ctx_.register_fat_binary(std::move(kernels));
}
void PassthroughApi::unregister_fat_binary(uint64_t handle) {
  count(CallId::UnregisterFatBinary);
  ctx_.unregister_fat_binary(handle);
}
void PassthroughApi::launch(uint64_t stream, std::string_view kernel,
                            std::vector<BufferRef> buffers, std::vector<uint64_t> scalars) {
  count(CallId::LaunchKernel);
  ctx_.launch(stream, kernel, std::move(buffers), std::move(scalars));
}
void PassthroughApi::copy_h2d(BufferRef dst, std::span<const uint8_t> src,
                              std::optional<uint64_t> stream) {
  count(CallId::MemcpyH2D);
  ctx_.copy_h2d(dst, src, stream);
}
void PassthroughApi::copy_d2h(std::span<uint8_t> dst, BufferRef src,
                              std::optional<uint64_t> stream) {
  count(CallId::MemcpyD2H);
  ctx_.copy_d2h(dst, src, stream);
}
void PassthroughApi::copy_d2d(BufferRef dst, BufferRef src, uint64_t n,
                              std::optional<uint64_t> stream) {
  count(CallId::MemcpyD2D);
  ctx_.copy_d2d(dst, src, n, stream);
}
void PassthroughApi::synchronize() {
  count(CallId::Synchronize);
  ctx_.synchronize();
}
std::vector<uint8_t> PassthroughApi::page_read(uint64_t id, uint64_t offset, uint64_t n,
                                               PageSide side) {
  count(CallId::PageRead);
  return ctx_.page_read(id, offset, n, side);
}
void PassthroughApi::page_write(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes,
                                PageSide side) {
  count(CallId::PageWrite);
  ctx_.page_write(id, offset, bytes, side);
}
std::map<std::string, uint64_t> PassthroughApi::call_counts() const {
  std::map<std::string, uint64_t> out;
  for (size_t i = 0; i < kCallCount; ++i)
    out[call_name(static_cast<CallId>(i))] = counts_[i].load();
  return out;
}
uint64_t PassthroughApi::call_count(CallId c) const {
  return counts_[static_cast<size_t>(c)].load();
}

// --- dispatch table ---------------------------------------------------------

// Calls hold the gate shared; quiesce takes it exclusively.
class DispatchTable::CallGuard {
 public:
  explicit CallGuard(DispatchTable& t) : t_(t) { t_.gate_.lock_shared(); }
  ~CallGuard() { t_.gate_.unlock_shared(); }

 private:
  DispatchTable& t_;
};

DispatchTable::DispatchTable(DeviceContext& ctx, CallLog& log, RegionMap& regions, TableMode mode)
    : ctx_(ctx), log_(log), regions_(regions), mode_(mode) {
  // Allocator results are lower-half by construction.
  regions_.register_range(kArenaBase, ctx_.arena_bytes(), Half::Lower, kPermRead | kPermWrite);
}

void DispatchTable::append_log(LogOp op, uint8_t kind, uint64_t size, uint64_t id,
                               uint64_t address) {
  log_.entries_.push_back(
      CallLogEntry{log_.entries_.size() + 1, op, kind, size, id, address});
}

std::span<uint8_t> DispatchTable::channel_cross(std::span<const uint8_t> bytes) {
  if (channel_.size() < bytes.size()) channel_.resize(bytes.size());
  std::memcpy(channel_.data(), bytes.data(), bytes.size());
  return {channel_.data(), bytes.size()};
}

// The executor owns the device; argument buffers are synchronized across the
// channel around every launch, which is what makes the proxy path pay for its
// isolation in proportion to the data it touches.
void DispatchTable::proxy_launch_shadow_sync(const std::vector<BufferRef>& buffers) {
  for (const auto& b : buffers) {
    auto rec = ctx_.find_record(b.id);
    if (!rec || b.offset >= rec->size) continue;  // the launch itself reports the error
    const uint64_t n = rec->size - b.offset;
    auto bytes = ctx_.device_read_bytes(b.id, b.offset, n);
    auto crossed = channel_cross(bytes);
    ctx_.device_write_bytes(b.id, b.offset, crossed);
  }
}

AllocationRecord DispatchTable::alloc(AllocationKind kind, uint64_t size) {
  CallGuard g(*this);
  count(CallId::Alloc);
  std::lock_guard lk(log_.mu_);
  AllocationRecord rec = ctx_.alloc(kind, size);
  append_log(LogOp::Alloc, static_cast<uint8_t>(kind), size, rec.id, rec.address);
  return rec;
}

void DispatchTable::free(uint64_t id) {
  CallGuard g(*this);
  count(CallId::Free);
  std::lock_guard lk(log_.mu_);
  ctx_.free(id);
  append_log(LogOp::Free, 0, 0, id, 0);
}

uint64_t DispatchTable::stream_create() {
  CallGuard g(*this);
  count(CallId::StreamCreate);
  std::lock_guard lk(log_.mu_);
  uint64_t id = ctx_.stream_create();
  append_log(LogOp::StreamCreate, 0, 0, id, 0);
  return id;
}

void DispatchTable::stream_destroy(uint64_t stream) {
  CallGuard g(*this);
  count(CallId::StreamDestroy);
  std::lock_guard lk(log_.mu_);
  ctx_.stream_destroy(stream);
  append_log(LogOp::StreamDestroy, 0, 0, stream, 0);
}

uint64_t DispatchTable::register_fat_binary(std::vector<KernelDescriptor> kernels) {
  CallGuard g(*this);
  count(CallId::RegisterFatBinary);
  std::lock_guard lk(log_.mu_);
  uint64_t handle = ctx_.register_fat_binary(std::move(kernels));
  append_log(LogOp::RegisterBinary, 0, 0, handle, 0);
  return handle;
}

void DispatchTable::unregister_fat_binary(uint64_t handle) {
  CallGuard g(*this);
  count(CallId::UnregisterFatBinary);
  std::lock_guard lk(log_.mu_);
  ctx_.unregister_fat_binary(handle);
  append_log(LogOp::UnregisterBinary, 0, 0, handle, 0);
}

void DispatchTable::launch(uint64_t stream, std::string_view kernel,
                           std::vector<BufferRef> buffers, std::vector<uint64_t> scalars) {
  CallGuard g(*this);
  count(CallId::LaunchKernel);
  if (mode_ == TableMode::Proxy) proxy_launch_shadow_sync(buffers);
  ctx_.launch(stream, kernel, std::move(buffers), std::move(scalars));
}

void DispatchTable::copy_h2d(BufferRef dst, std::span<const uint8_t> src,
                             std::optional<uint64_t> stream) {
  CallGuard g(*this);
  count(CallId::MemcpyH2D);
  if (mode_ == TableMode::Proxy) {
    auto crossed = channel_cross(src);
    ctx_.copy_h2d(dst, crossed, stream);
  } else {
    ctx_.copy_h2d(dst, src, stream);
  }
}

void DispatchTable::copy_d2h(std::span<uint8_t> dst, BufferRef src,
                             std::optional<uint64_t> stream) {
  CallGuard g(*this);
  count(CallId::MemcpyD2H);
  if (mode_ == TableMode::Proxy) {
    if (stream) {
      // The executor fills its own staging at synchronize time; results cross
      // back to the application when it synchronizes.
      auto staging = std::make_unique<std::vector<uint8_t>>(dst.size());
      ctx_.copy_d2h({staging->data(), staging->size()}, src, stream);
      std::lock_guard lk(proxy_mu_);
      pending_d2h_.push_back(PendingD2H{dst.data(), dst.size(), std::move(staging)});
    } else {
      std::vector<uint8_t> staging(dst.size());
      ctx_.copy_d2h(staging, src, stream);
      auto crossed = channel_cross(staging);
      std::memcpy(dst.data(), crossed.data(), crossed.size());
    }
  } else {
    ctx_.copy_d2h(dst, src, stream);
  }
}

void DispatchTable::copy_d2d(BufferRef dst, BufferRef src, uint64_t n,
                             std::optional<uint64_t> stream) {
  CallGuard g(*this);
  count(CallId::MemcpyD2D);
  // Both endpoints live on the executor side; nothing crosses the channel.
  ctx_.copy_d2d(dst, src, n, stream);
}

void DispatchTable::drain_locked() {
  ctx_.synchronize();
  if (mode_ == TableMode::Proxy) {
    std::lock_guard lk(proxy_mu_);
    for (auto& p : pending_d2h_) {
      auto crossed = channel_cross(*p.staging);
      std::memcpy(p.app_dst, crossed.data(), crossed.size());
    }
    pending_d2h_.clear();
  }
}

void DispatchTable::synchronize() {
  CallGuard g(*this);
  count(CallId::Synchronize);
  drain_locked();
}

std::vector<uint8_t> DispatchTable::page_read(uint64_t id, uint64_t offset, uint64_t n,
                                              PageSide side) {
  CallGuard g(*this);
  count(CallId::PageRead);
  auto bytes = ctx_.page_read(id, offset, n, side);
  if (mode_ == TableMode::Proxy) {
    auto crossed = channel_cross(bytes);
    return {crossed.begin(), crossed.end()};
  }
  return bytes;
}

void DispatchTable::page_write(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes,
                               PageSide side) {
  CallGuard g(*this);
  count(CallId::PageWrite);
  if (mode_ == TableMode::Proxy) {
    auto crossed = channel_cross(bytes);
    ctx_.page_write(id, offset, crossed, side);
  } else {
    ctx_.page_write(id, offset, bytes, side);
  }
}

std::map<std::string, uint64_t> DispatchTable::call_counts() const {
  std::map<std::string, uint64_t> out;
  for (size_t i = 0; i < kCallCount; ++i)
    out[call_name(static_cast<CallId>(i))] = counts_[i].load();
  return out;
}

uint64_t DispatchTable::call_count(CallId c) const {
  return counts_[static_cast<size_t>(c)].load();
}

void DispatchTable::quiesce(std::chrono::milliseconds timeout) {
  if (!gate_.try_lock_for(timeout))
    raise(Errc::QuiesceTimeout, "in-flight calls did not drain within " +
                                    std::to_string(timeout.count()) + " ms");
  try {
    drain_locked();
  } catch (...) {
    gate_.unlock();
    throw;
  }
}

void DispatchTable::resume() { gate_.unlock(); }

}  // namespace cracsim
