#include "cracsim/ckpt_engine.hpp"

#include <algorithm>

namespace cracsim {

namespace {

class QuiesceGuard {
 public:
  QuiesceGuard(DispatchTable& t, std::chrono::milliseconds timeout) : t_(t) {
    t_.quiesce(timeout);
  }
  ~QuiesceGuard() { t_.resume(); }

 private:
  DispatchTable& t_;
};

}  // namespace

Session::Session(const SessionConfig& cfg)
    : cfg_(cfg),
      ctx_(std::make_unique<DeviceContext>(cfg.seed, cfg.arena_bytes)),
      log_(std::make_unique<CallLog>()),
      regions_(std::make_unique<RegionMap>()),
      table_(std::make_unique<DispatchTable>(*ctx_, *log_, *regions_, cfg.mode)) {}

Snapshot checkpoint(Session& session) {
  QuiesceGuard q(session.table(), session.cfg_.quiesce_timeout);
  DeviceContext& ctx = session.device();

  Snapshot s;
  s.meta = SnapshotMeta{ctx.seed(), ctx.arena_bytes(), kEngineVersion};
  s.log = session.log().snapshot();

  // Payloads cover exactly the live allocations; freed memory is never saved.
  for (const auto& rec : active_set(s.log)) {
    if (rec.kind == AllocationKind::Managed) {
      ManagedRecord m;
      m.id = rec.id;
      const auto pages = ctx.managed_pages(rec.id);
      for (uint64_t p = 0; p < pages.size(); ++p) {
        PageRecord page;
        page.index = p;
        page.device_resident = pages[p].device_resident;
        page.dirty = pages[p].dirty;
        const uint64_t len = std::min<uint64_t>(kPageSize, rec.size - p * kPageSize);
        page.content = ctx.read_raw(rec.address + p * kPageSize, len);
        m.pages.push_back(std::move(page));
      }
      s.managed.push_back(std::move(m));
    } else {
      s.payloads.push_back(PayloadRecord{rec.id, ctx.read_raw(rec.address, rec.size)});
    }
  }
  s.streams = ctx.live_stream_ids();
  s.app_state = session.app_state();
  s.binaries = ctx.registered_binaries();
  return s;
}

void checkpoint_to_file(Session& session, const std::filesystem::path& path, bool compress) {
  write_image_file(path, checkpoint(session), compress);
}

std::map<uint64_t, uint64_t> replay_log(
    DeviceContext& ctx, std::span<const CallLogEntry> log,
    const std::map<uint64_t, std::vector<KernelDescriptor>>* binaries) {
  std::map<uint64_t, uint64_t> addresses;
  for (const auto& e : log) {
    switch (e.op) {
      case LogOp::Alloc: {
        auto rec = ctx.alloc(static_cast<AllocationKind>(e.kind), e.size);
        if (rec.id != e.id)
          raise(Errc::ReplayDivergence, "seq " + std::to_string(e.seq) + ": id " +
                                            std::to_string(rec.id) + " != logged " +
                                            std::to_string(e.id));
        if (rec.address != e.address)
          raise(Errc::ReplayDivergence,
                "seq " + std::to_string(e.seq) + ": address mismatch for allocation " +
                    std::to_string(e.id));
        addresses.emplace(e.seq, rec.address);
        break;
      }
      case LogOp::Free:
        ctx.free(e.id);
        break;
      case LogOp::StreamCreate: {
        uint64_t id = ctx.stream_create();
        if (id != e.id)
          raise(Errc::ReplayDivergence, "seq " + std::to_string(e.seq) + ": stream id mismatch");
        break;
      }
      case LogOp::StreamDestroy:
        ctx.stream_destroy(e.id);
        break;
      case LogOp::RegisterBinary: {
        // Descriptors exist only for binaries still registered at checkpoint;
        // anything unregistered later is replayed as an empty binary so the
        // handle counter advances identically.
        std::vector<KernelDescriptor> kernels;
        if (binaries) {
          auto it = binaries->find(e.id);
          if (it != binaries->end()) kernels = it->second;
        }
        uint64_t handle = ctx.register_fat_binary(std::move(kernels));
        if (handle != e.id)
          raise(Errc::ReplayDivergence, "seq " + std::to_string(e.seq) + ": handle mismatch");
        break;
      }
      case LogOp::UnregisterBinary:
        ctx.unregister_fat_binary(e.id);
        break;
    }
  }
  return addresses;
}

Session restart(const Snapshot& snapshot, const KernelCatalog& catalog, TableMode mode,
                std::chrono::milliseconds quiesce_timeout) {
  SessionConfig cfg;
  cfg.seed = snapshot.meta.seed;
  cfg.arena_bytes = snapshot.meta.arena_bytes;
  cfg.mode = mode;
  cfg.quiesce_timeout = quiesce_timeout;
  Session session(cfg);
  DeviceContext& ctx = session.device();

  std::map<uint64_t, std::vector<KernelDescriptor>> binaries;
  for (const auto& b : snapshot.binaries) {
    std::vector<KernelDescriptor> kernels;
    for (const auto& k : b.kernels) {
      auto it = catalog.find(k.name);
      if (it == catalog.end())
        raise(Errc::UnknownKernelBody, "no body registered for kernel '" + k.name + "'");
      kernels.push_back(KernelDescriptor{k.name, k.buffer_arity, k.scalar_arity, it->second});
    }
    binaries.emplace(b.handle, std::move(kernels));
  }

  replay_log(ctx, snapshot.log, &binaries);

  if (ctx.live_stream_ids() != snapshot.streams)
    raise(Errc::ReplayDivergence, "live streams after replay do not match the snapshot");

  for (const auto& p : snapshot.payloads) {
    auto rec = ctx.find_record(p.id);
    if (!rec || rec->size != p.bytes.size())
      raise(Errc::ReplayDivergence, "payload " + std::to_string(p.id) +
                                        " does not match a replayed allocation");
    ctx.write_raw(rec->address, p.bytes);
  }
  for (const auto& m : snapshot.managed) {
    auto rec = ctx.find_record(m.id);
    if (!rec || rec->kind != AllocationKind::Managed ||
        m.pages.size() != page_count_for(rec->size))
      raise(Errc::ReplayDivergence, "managed record " + std::to_string(m.id) +
                                        " does not match a replayed allocation");
    for (const auto& page : m.pages) {
      ctx.write_raw(rec->address + page.index * kPageSize, page.content);
      ctx.restore_page_state(m.id, page.index, page.device_resident, page.dirty);
    }
  }

  // The log carries over whole; future entries continue its seq numbering, so
  // a restarted session restarts again without loss.
  session.log().reset(snapshot.log);
  session.app_state() = snapshot.app_state;
  return session;
}

Session restart_from_file(const std::filesystem::path& path, const KernelCatalog& catalog,
                          TableMode mode) {
  return restart(read_image_file(path), catalog, mode);
}

}  // namespace cracsim
