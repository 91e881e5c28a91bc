#include "cracsim/device_core.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "cracsim/digest.hpp"

namespace cracsim {

DeviceContext::DeviceContext(uint64_t seed, uint64_t arena_bytes)
    : seed_(seed), arena_bytes_(arena_bytes) {
  if (arena_bytes == 0) raise(Errc::InvalidArgument, "arena_bytes must be positive");
  if (arena_bytes % kAlign != 0)
    raise(Errc::InvalidArgument, "arena_bytes must be a multiple of alignment");
  mem_.assign(arena_bytes, 0);
  holes_.emplace(kArenaBase, arena_bytes);
}

uint8_t* DeviceContext::arena_ptr(uint64_t address) { return mem_.data() + (address - kArenaBase); }

const uint8_t* DeviceContext::arena_ptr(uint64_t address) const {
  return mem_.data() + (address - kArenaBase);
}

const DeviceContext::LiveAlloc& DeviceContext::live_or_throw(uint64_t id) const {
  auto it = live_.find(id);
  if (it == live_.end()) raise(Errc::UnknownId, "allocation " + std::to_string(id));
  return it->second;
}

DeviceContext::Stream& DeviceContext::stream_or_throw(uint64_t stream) {
  auto it = streams_.find(stream);
  if (it == streams_.end()) raise(Errc::UnknownId, "stream " + std::to_string(stream));
  return it->second;
}

void DeviceContext::check_range(const AllocationRecord& rec, uint64_t offset, uint64_t n) const {
  if (offset > rec.size || n > rec.size - offset)
    raise(Errc::OutOfRange, "allocation " + std::to_string(rec.id) + ": [" +
                                std::to_string(offset) + ", +" + std::to_string(n) +
                                ") exceeds size " + std::to_string(rec.size));
}

AllocationRecord DeviceContext::alloc(AllocationKind kind, uint64_t size) {
  std::lock_guard lk(mu_);
  if (size == 0) raise(Errc::InvalidArgument, "allocation size must be positive");
  const uint64_t padded = round_up_align(size);
  // First fit: the hole map iterates in address order.
  auto it = holes_.begin();
  for (; it != holes_.end(); ++it)
    if (it->second >= padded) break;
  if (it == holes_.end())
    raise(Errc::OutOfArena, "no hole fits " + std::to_string(padded) + " bytes");
  const uint64_t address = it->first;
  const uint64_t hole_len = it->second;
  holes_.erase(it);
  if (hole_len > padded) holes_.emplace(address + padded, hole_len - padded);

  LiveAlloc a;
  a.rec = AllocationRecord{next_alloc_id_++, kind, size, address, false};
  a.padded = padded;
  // Fresh allocations read as zero in every run; restart depends on it when a
  // freed region is reused.
  std::memset(arena_ptr(address), 0, padded);
  if (kind == AllocationKind::Managed) a.pages.assign(page_count_for(size), PageState{});
  ever_allocated_[a.rec.id] = true;
  ++epoch_;
  auto rec = a.rec;
  live_.emplace(rec.id, std::move(a));
  return rec;
}

void DeviceContext::free(uint64_t id) {
  std::lock_guard lk(mu_);
  auto it = live_.find(id);
  if (it == live_.end()) {
    auto ever = ever_allocated_.find(id);
    if (ever != ever_allocated_.end() && !ever->second)
      raise(Errc::DoubleFree, "allocation " + std::to_string(id) + " already freed");
    raise(Errc::UnknownId, "allocation " + std::to_string(id));
  }
  uint64_t address = it->second.rec.address;
  uint64_t length = it->second.padded;
  live_.erase(it);
  ever_allocated_[id] = false;

  auto next = holes_.lower_bound(address);
  if (next != holes_.end() && address + length == next->first) {
    length += next->second;
    next = holes_.erase(next);
  }
  if (next != holes_.begin()) {
    auto prev = std::prev(next);
    if (prev->first + prev->second == address) {
      address = prev->first;
      length += prev->second;
      holes_.erase(prev);
    }
  }
  holes_.emplace(address, length);
  ++epoch_;
}

uint64_t DeviceContext::stream_create() {
  std::lock_guard lk(mu_);
  if (streams_.size() >= kMaxStreams)
    raise(Errc::StreamLimitExceeded, "at most " + std::to_string(kMaxStreams) + " live streams");
  uint64_t id = next_stream_id_++;
  streams_.emplace(id, Stream{});
  ++epoch_;
  return id;
}

void DeviceContext::stream_destroy(uint64_t stream) {
  std::lock_guard lk(mu_);
  auto& s = stream_or_throw(stream);
  if (!s.queue.empty())
    raise(Errc::BusyStream, "stream " + std::to_string(stream) + " has queued work");
  streams_.erase(stream);
  ++epoch_;
}

uint64_t DeviceContext::register_fat_binary(std::vector<KernelDescriptor> kernels) {
  std::lock_guard lk(mu_);
  for (size_t i = 0; i < kernels.size(); ++i) {
    if (kernels[i].name.empty()) raise(Errc::InvalidArgument, "kernel name must be non-empty");
    if (kernels_.count(kernels[i].name))
      raise(Errc::DuplicateKernelId, "kernel '" + kernels[i].name + "' already registered");
    for (size_t j = 0; j < i; ++j)
      if (kernels[j].name == kernels[i].name)
        raise(Errc::DuplicateKernelId, "kernel '" + kernels[i].name + "' repeated in binary");
  }
  uint64_t handle = next_handle_++;
  std::vector<std::string> names;
  for (auto& k : kernels) {
    names.push_back(k.name);
    auto name = k.name;
    kernels_.emplace(std::move(name),
                     KernelEntry{std::make_shared<const KernelDescriptor>(std::move(k)), handle});
  }
  binaries_.emplace(handle, std::move(names));
  ++epoch_;
  return handle;
}

void DeviceContext::unregister_fat_binary(uint64_t handle) {
  std::lock_guard lk(mu_);
  auto it = binaries_.find(handle);
  if (it == binaries_.end()) raise(Errc::UnknownId, "binary handle " + std::to_string(handle));
  for (const auto& name : it->second) kernels_.erase(name);
  binaries_.erase(it);
  ++epoch_;
}

void DeviceContext::launch(uint64_t stream, std::string_view kernel,
                           std::vector<BufferRef> buffers, std::vector<uint64_t> scalars) {
  std::lock_guard lk(mu_);
  auto& s = stream_or_throw(stream);
  auto kit = kernels_.find(kernel);
  if (kit == kernels_.end())
    raise(Errc::UnregisteredKernel, "kernel '" + std::string(kernel) + "'");
  const auto& desc = kit->second.desc;
  if (buffers.size() != desc->buffer_arity || scalars.size() != desc->scalar_arity)
    raise(Errc::InvalidArgument, "kernel '" + std::string(kernel) + "' arity mismatch");
  for (const auto& b : buffers) {
    const auto& a = live_or_throw(b.id);
    if (b.offset > a.rec.size)
      raise(Errc::OutOfRange, "buffer offset " + std::to_string(b.offset) + " beyond allocation " +
                                  std::to_string(b.id));
  }
  s.queue.push_back(Task{next_ticket_++, LaunchTask{desc, std::move(buffers), std::move(scalars)}});
  ++epoch_;
}

void DeviceContext::copy_h2d(BufferRef dst, std::span<const uint8_t> src,
                             std::optional<uint64_t> stream) {
  std::lock_guard lk(mu_);
  const auto& a = live_or_throw(dst.id);
  check_range(a.rec, dst.offset, src.size());
  if (stream) {
    auto& s = stream_or_throw(*stream);
    // Stage the host bytes now; the caller may reuse its buffer immediately.
    s.queue.push_back(
        Task{next_ticket_++, CopyH2DTask{dst, std::vector<uint8_t>(src.begin(), src.end())}});
  } else {
    write_locked(dst.id, dst.offset, src, PageSide::Device);
  }
  ++epoch_;
}

void DeviceContext::copy_d2h(std::span<uint8_t> dst, BufferRef src,
                             std::optional<uint64_t> stream) {
  std::lock_guard lk(mu_);
  const auto& a = live_or_throw(src.id);
  check_range(a.rec, src.offset, dst.size());
  if (stream) {
    auto& s = stream_or_throw(*stream);
    s.queue.push_back(Task{next_ticket_++, CopyD2HTask{dst.data(), dst.size(), src}});
    ++epoch_;
  } else {
    // Pure read; only a managed-page migration counts as a state change.
    read_locked(src.id, src.offset, dst.size(), PageSide::Device, dst.data());
  }
}

void DeviceContext::copy_d2d(BufferRef dst, BufferRef src, uint64_t n,
                             std::optional<uint64_t> stream) {
  std::lock_guard lk(mu_);
  const auto& d = live_or_throw(dst.id);
  const auto& s = live_or_throw(src.id);
  check_range(d.rec, dst.offset, n);
  check_range(s.rec, src.offset, n);
  if (stream) {
    auto& st = stream_or_throw(*stream);
    st.queue.push_back(Task{next_ticket_++, CopyD2DTask{dst, src, n}});
  } else {
    run_task(Task{0, CopyD2DTask{dst, src, n}});
  }
  ++epoch_;
}

void DeviceContext::run_task(const Task& t) {
  if (const auto* l = std::get_if<LaunchTask>(&t.op)) {
    // Buffers were validated at launch; a free in between is an app bug.
    for (const auto& b : l->buffers) live_or_throw(b.id);
    KernelArgs args(*this, l->buffers, l->scalars);
    l->kernel->body(args);
  } else if (const auto* h = std::get_if<CopyH2DTask>(&t.op)) {
    write_locked(h->dst.id, h->dst.offset, h->bytes, PageSide::Device);
  } else if (const auto* d = std::get_if<CopyD2HTask>(&t.op)) {
    read_locked(d->src.id, d->src.offset, d->n, PageSide::Device, d->dst);
  } else if (const auto* dd = std::get_if<CopyD2DTask>(&t.op)) {
    std::vector<uint8_t> tmp(dd->n);
    read_locked(dd->src.id, dd->src.offset, dd->n, PageSide::Device, tmp.data());
    write_locked(dd->dst.id, dd->dst.offset, tmp, PageSide::Device);
  }
}

void DeviceContext::synchronize_locked() {
  // Execute pending tasks across all streams in global enqueue order; this is
  // the single recorded total order for inter-stream effects.
  bool ran_any = false;
  for (;;) {
    Stream* best = nullptr;
    uint64_t best_ticket = 0;
    for (auto& [id, s] : streams_) {
      if (s.queue.empty()) continue;
      if (!best || s.queue.front().ticket < best_ticket) {
        best = &s;
        best_ticket = s.queue.front().ticket;
      }
    }
    if (!best) break;
    Task t = std::move(best->queue.front());
    best->queue.pop_front();
    run_task(t);
    best->completed++;
    ran_any = true;
  }
  if (ran_any) ++epoch_;
}

void DeviceContext::synchronize() {
  std::lock_guard lk(mu_);
  synchronize_locked();
}

bool DeviceContext::touch_pages(LiveAlloc& a, uint64_t offset, uint64_t len, PageSide side,
                                bool write) {
  if (a.rec.kind != AllocationKind::Managed || len == 0) return false;
  bool changed = false;
  const uint64_t first = offset / kPageSize;
  const uint64_t last = (offset + len - 1) / kPageSize;
  for (uint64_t p = first; p <= last; ++p) {
    PageState& ps = a.pages[p];
    const bool want_device = side == PageSide::Device;
    if (ps.device_resident != want_device) {
      ps.device_resident = want_device;
      changed = true;
    }
    if (write && !ps.dirty) {
      ps.dirty = true;
      changed = true;
    }
  }
  return changed;
}

void DeviceContext::read_locked(uint64_t id, uint64_t offset, uint64_t n, PageSide side,
                                uint8_t* out) {
  auto& a = live_.at(id);
  if (touch_pages(a, offset, n, side, false)) ++epoch_;
  std::memcpy(out, arena_ptr(a.rec.address) + offset, n);
}

void DeviceContext::write_locked(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes,
                                 PageSide side) {
  auto& a = live_.at(id);
  touch_pages(a, offset, bytes.size(), side, true);
  std::memcpy(arena_ptr(a.rec.address) + offset, bytes.data(), bytes.size());
}

std::vector<uint8_t> DeviceContext::page_read(uint64_t id, uint64_t offset, uint64_t n,
                                              PageSide side) {
  std::lock_guard lk(mu_);
  const auto& a = live_or_throw(id);
  if (a.rec.kind != AllocationKind::Managed)
    raise(Errc::NotManaged, "allocation " + std::to_string(id));
  check_range(a.rec, offset, n);
  std::vector<uint8_t> out(n);
  read_locked(id, offset, n, side, out.data());
  return out;
}

void DeviceContext::page_write(uint64_t id, uint64_t offset, std::span<const uint8_t> bytes,
                               PageSide side) {
  std::lock_guard lk(mu_);
  const auto& a = live_or_throw(id);
  if (a.rec.kind != AllocationKind::Managed)
    raise(Errc::NotManaged, "allocation " + std::to_string(id));
  check_range(a.rec, offset, bytes.size());
  write_locked(id, offset, bytes, side);
  ++epoch_;
}

std::vector<uint8_t> DeviceContext::device_read_bytes(uint64_t id, uint64_t offset, uint64_t n) {
  std::lock_guard lk(mu_);
  const auto& a = live_or_throw(id);
  check_range(a.rec, offset, n);
  std::vector<uint8_t> out(n);
  read_locked(id, offset, n, PageSide::Device, out.data());
  return out;
}

void DeviceContext::device_write_bytes(uint64_t id, uint64_t offset,
                                       std::span<const uint8_t> bytes) {
  std::lock_guard lk(mu_);
  const auto& a = live_or_throw(id);
  check_range(a.rec, offset, bytes.size());
  write_locked(id, offset, bytes, PageSide::Device);
  ++epoch_;
}

uint64_t KernelArgs::window_size(size_t i) const {
  const auto& b = buffers_[i];
  const auto& a = ctx_.live_.at(b.id);
  return a.rec.size - b.offset;
}

std::span<const uint8_t> KernelArgs::read(size_t i, uint64_t offset, uint64_t len) {
  const auto& b = buffers_[i];
  auto& a = ctx_.live_.at(b.id);
  ctx_.check_range(a.rec, b.offset + offset, len);
  ctx_.touch_pages(a, b.offset + offset, len, PageSide::Device, false);
  return {ctx_.arena_ptr(a.rec.address) + b.offset + offset, len};
}

std::span<uint8_t> KernelArgs::write(size_t i, uint64_t offset, uint64_t len) {
  const auto& b = buffers_[i];
  auto& a = ctx_.live_.at(b.id);
  ctx_.check_range(a.rec, b.offset + offset, len);
  ctx_.touch_pages(a, b.offset + offset, len, PageSide::Device, true);
  return {ctx_.arena_ptr(a.rec.address) + b.offset + offset, len};
}

uint64_t DeviceContext::epoch() const {
  std::lock_guard lk(mu_);
  return epoch_;
}

std::vector<std::pair<uint64_t, uint64_t>> DeviceContext::free_holes() const {
  std::lock_guard lk(mu_);
  return {holes_.begin(), holes_.end()};
}

std::vector<AllocationRecord> DeviceContext::live_records() const {
  std::lock_guard lk(mu_);
  std::vector<AllocationRecord> out;
  out.reserve(live_.size());
  for (const auto& [id, a] : live_) out.push_back(a.rec);
  return out;
}

std::optional<AllocationRecord> DeviceContext::find_record(uint64_t id) const {
  std::lock_guard lk(mu_);
  auto it = live_.find(id);
  if (it == live_.end()) return std::nullopt;
  return it->second.rec;
}

std::vector<uint64_t> DeviceContext::live_stream_ids() const {
  std::lock_guard lk(mu_);
  std::vector<uint64_t> out;
  out.reserve(streams_.size());
  for (const auto& [id, s] : streams_) out.push_back(id);
  return out;
}

uint64_t DeviceContext::stream_completed(uint64_t stream) const {
  std::lock_guard lk(mu_);
  auto it = streams_.find(stream);
  if (it == streams_.end()) raise(Errc::UnknownId, "stream " + std::to_string(stream));
  return it->second.completed;
}

uint64_t DeviceContext::stream_pending(uint64_t stream) const {
  std::lock_guard lk(mu_);
  auto it = streams_.find(stream);
  if (it == streams_.end()) raise(Errc::UnknownId, "stream " + std::to_string(stream));
  return it->second.queue.size();
}

std::vector<PageState> DeviceContext::managed_pages(uint64_t id) const {
  std::lock_guard lk(mu_);
  const auto& a = live_or_throw(id);
  if (a.rec.kind != AllocationKind::Managed)
    raise(Errc::NotManaged, "allocation " + std::to_string(id));
  return a.pages;
}

std::vector<BinaryInfo> DeviceContext::registered_binaries() const {
  std::lock_guard lk(mu_);
  std::vector<BinaryInfo> out;
  for (const auto& [handle, names] : binaries_) {
    BinaryInfo b;
    b.handle = handle;
    for (const auto& n : names) {
      const auto& e = kernels_.at(n);
      b.kernels.push_back(KernelInfo{n, e.desc->buffer_arity, e.desc->scalar_arity});
    }
    out.push_back(std::move(b));
  }
  return out;
}

bool DeviceContext::kernel_registered(std::string_view name) const {
  std::lock_guard lk(mu_);
  return kernels_.find(name) != kernels_.end();
}

std::vector<uint8_t> DeviceContext::read_raw(uint64_t address, uint64_t n) const {
  std::lock_guard lk(mu_);
  if (address < kArenaBase || address + n > kArenaBase + arena_bytes_)
    raise(Errc::OutOfRange, "raw read outside arena");
  return {arena_ptr(address), arena_ptr(address) + n};
}

void DeviceContext::write_raw(uint64_t address, std::span<const uint8_t> bytes) {
  std::lock_guard lk(mu_);
  if (address < kArenaBase || address + bytes.size() > kArenaBase + arena_bytes_)
    raise(Errc::OutOfRange, "raw write outside arena");
  std::memcpy(arena_ptr(address), bytes.data(), bytes.size());
}

void DeviceContext::restore_page_state(uint64_t id, uint64_t page_index, bool device_resident,
                                       bool dirty) {
  std::lock_guard lk(mu_);
  auto it = live_.find(id);
  if (it == live_.end()) raise(Errc::UnknownId, "allocation " + std::to_string(id));
  auto& a = it->second;
  if (a.rec.kind != AllocationKind::Managed)
    raise(Errc::NotManaged, "allocation " + std::to_string(id));
  if (page_index >= a.pages.size()) raise(Errc::OutOfRange, "page index");
  a.pages[page_index] = PageState{device_resident, dirty};
}

std::string DeviceContext::debug_dump() const {
  std::lock_guard lk(mu_);
  std::ostringstream os;
  os << std::hex;
  os << "seed=" << seed_ << " arena=" << arena_bytes_ << " epoch=" << epoch_
     << " next_alloc=" << next_alloc_id_ << " next_stream=" << next_stream_id_
     << " next_handle=" << next_handle_ << " next_ticket=" << next_ticket_ << "\n";
  os << "holes:";
  for (const auto& [addr, len] : holes_) os << " [" << addr << "+" << len << ")";
  os << "\n";
  for (const auto& [id, a] : live_) {
    Fnv64 h;
    h.fold({arena_ptr(a.rec.address), a.rec.size});
    os << "alloc id=" << id << " kind=" << allocation_kind_name(a.rec.kind)
       << " size=" << a.rec.size << " addr=" << a.rec.address << " content=" << h.value();
    if (a.rec.kind == AllocationKind::Managed) {
      os << " pages=";
      for (const auto& p : a.pages) os << (p.device_resident ? "D" : "H") << (p.dirty ? "*" : "");
    }
    os << "\n";
  }
  for (const auto& [id, s] : streams_) {
    os << "stream id=" << id << " completed=" << s.completed << " pending=" << s.queue.size();
    for (const auto& t : s.queue) os << " t" << t.ticket;
    os << "\n";
  }
  for (const auto& [handle, names] : binaries_) {
    os << "binary handle=" << handle << " kernels=";
    for (const auto& n : names) os << n << ",";
    os << "\n";
  }
  return os.str();
}

}  // namespace cracsim
