#include "cracsim/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include "json.hpp"

#include "cracsim/digest.hpp"
#include "cracsim/errors.hpp"
#include "cracsim/kernels.hpp"

namespace cracsim {
namespace {

// App-state layout. This blob is the workload's entire memory: it rides in
// every checkpoint image verbatim and a restarted run resumes from nothing
// but these bytes plus the restored device.
constexpr uint64_t kStateMagic = 0x3154535050415343ULL;  // "CSAPPST1"
constexpr uint64_t kStateVersion = 1;
constexpr uint64_t kMagicOff = 0;
constexpr uint64_t kVersionOff = 8;
constexpr uint64_t kWorkloadOff = 16;
constexpr uint64_t kStreamsOff = 24;
constexpr uint64_t kDataBytesOff = 32;
constexpr uint64_t kItersOff = 40;
constexpr uint64_t kSeedOff = 48;
constexpr uint64_t kCursorOff = 56;
constexpr uint64_t kDigestOff = 64;
constexpr uint64_t kScratch0Off = 72;  // primary allocation id
constexpr uint64_t kScratch1Off = 80;  // first stream id
constexpr uint64_t kScratch2Off = 88;  // second allocation id
constexpr uint64_t kScratch3Off = 96;  // third allocation id
constexpr uint64_t kHeaderBytes = 104;

constexpr uint64_t kChurnCap = 192;
constexpr uint64_t kChurnEntryBytes = 24;  // id u64, size u64, kind u64
constexpr uint64_t kChurnStampBytes = 16;
constexpr uint64_t kUvmBlockBytes = 256;

struct StreamDims {
  uint64_t chunk = 0;
  uint64_t buf_bytes = 0;
};

StreamDims stream_dims(const WorkloadSpec& spec) {
  uint64_t chunk = spec.data_bytes / std::max<uint32_t>(1, spec.streams);
  chunk = std::max<uint64_t>(64, chunk & ~63ull);
  return {chunk, chunk * spec.streams};
}

struct UvmDims {
  uint64_t blocks = 0;
  uint64_t bytes = 0;
};

UvmDims uvm_dims(const WorkloadSpec& spec) {
  uint64_t blocks = std::max<uint64_t>(spec.streams, spec.data_bytes / kUvmBlockBytes);
  blocks = std::max<uint64_t>(1, blocks);
  return {blocks, blocks * kUvmBlockBytes};
}

struct BlasDims {
  uint64_t m = 0, k = 0, n = 0;
  uint64_t a_bytes = 0, b_bytes = 0, c_bytes = 0;  // the three device buffers
  uint64_t host_bytes = 0;                         // host source region size
};

BlasDims blas_dims(const WorkloadSpec& spec) {
  BlasDims d;
  switch (spec.name) {
    case WorkloadName::BlasDot: {
      d.n = std::max<uint64_t>(1, spec.data_bytes / 8);  // elements per vector
      d.a_bytes = d.n * 4;
      d.b_bytes = d.n * 4;
      d.c_bytes = 256;
      d.host_bytes = d.a_bytes + d.b_bytes;
      break;
    }
    case WorkloadName::BlasGemv: {
      d.k = std::min<uint64_t>(1024, std::max<uint64_t>(1, spec.data_bytes / 4));
      d.m = std::max<uint64_t>(1, spec.data_bytes / (4 * d.k));
      d.a_bytes = d.m * d.k * 4;
      d.b_bytes = d.k * 4;  // x
      d.c_bytes = d.m * 4;  // y
      d.host_bytes = d.a_bytes + d.b_bytes;
      break;
    }
    case WorkloadName::BlasGemm: {
      d.k = std::min<uint64_t>(1024, std::max<uint64_t>(1, spec.data_bytes / 4));
      d.m = std::max<uint64_t>(1, spec.data_bytes / (4 * d.k));
      d.n = 2;
      d.a_bytes = d.m * d.k * 4;
      d.b_bytes = d.k * d.n * 4;
      d.c_bytes = d.m * d.n * 4;
      d.host_bytes = d.a_bytes + d.b_bytes;
      break;
    }
    default: raise(Errc::InvalidArgument, "not a blas workload");
  }
  return d;
}

uint64_t payload_bytes(const WorkloadSpec& spec) {
  switch (spec.name) {
    case WorkloadName::StreamOverlap: return stream_dims(spec).buf_bytes;  // host mirror
    case WorkloadName::UvmTasks: return 0;
    case WorkloadName::BlasDot:
    case WorkloadName::BlasGemv:
    case WorkloadName::BlasGemm: return blas_dims(spec).host_bytes;
    case WorkloadName::AllocChurn: return 8 + kChurnCap * kChurnEntryBytes;
  }
  raise(Errc::InvalidArgument, "unknown workload");
}

void validate_spec(const WorkloadSpec& spec) {
  if (spec.streams < 1 || spec.streams > kMaxStreams)
    raise(Errc::InvalidArgument, "streams must be in 1..128");
  if (spec.iterations < 1) raise(Errc::InvalidArgument, "iterations must be >= 1");
  if (spec.data_bytes < 1) raise(Errc::InvalidArgument, "data_bytes must be >= 1");
}

// Deterministic float in [-1, 1) from the top 24 bits of a mixed word.
float unit_float(uint64_t h) {
  return static_cast<float>(static_cast<double>(h >> 40) * (2.0 / 16777216.0) - 1.0);
}

void put_f32(std::span<uint8_t> dst, uint64_t index, float v) {
  std::memcpy(dst.data() + index * 4, &v, 4);
}

uint64_t uvm_batches(const WorkloadSpec& spec) {
  return (spec.iterations + spec.streams - 1) / spec.streams;
}

}  // namespace

std::optional<RunMode> parse_run_mode(std::string_view name) {
  for (RunMode m : {RunMode::Native, RunMode::Direct, RunMode::Proxy})
    if (name == run_mode_name(m)) return m;
  return std::nullopt;
}

std::optional<WorkloadName> parse_workload(std::string_view name) {
  for (WorkloadName w :
       {WorkloadName::StreamOverlap, WorkloadName::UvmTasks, WorkloadName::BlasDot,
        WorkloadName::BlasGemv, WorkloadName::BlasGemm, WorkloadName::AllocChurn})
    if (name == workload_name(w)) return w;
  return std::nullopt;
}

std::vector<std::string> workload_names() {
  return {"stream_overlap", "uvm_tasks", "blas_dot", "blas_gemv", "blas_gemm", "alloc_churn"};
}

WorkloadSpec default_spec(WorkloadName name) {
  WorkloadSpec spec;
  spec.name = name;
  switch (name) {
    case WorkloadName::StreamOverlap:
      spec.streams = 4;
      spec.iterations = 100;
      break;
    case WorkloadName::UvmTasks:
      spec.streams = 128;
      spec.iterations = 1280;
      spec.seed = 12701;
      break;
    case WorkloadName::BlasDot:
    case WorkloadName::BlasGemv:
    case WorkloadName::BlasGemm:
      spec.streams = 1;
      spec.iterations = 1000;
      break;
    case WorkloadName::AllocChurn:
      spec.streams = 1;
      spec.iterations = 500;
      break;
  }
  return spec;
}

uint64_t required_arena_bytes(const WorkloadSpec& spec) {
  uint64_t need = 0;
  switch (spec.name) {
    case WorkloadName::StreamOverlap: need = stream_dims(spec).buf_bytes; break;
    case WorkloadName::UvmTasks: need = uvm_dims(spec).bytes; break;
    case WorkloadName::BlasDot:
    case WorkloadName::BlasGemv:
    case WorkloadName::BlasGemm: {
      auto d = blas_dims(spec);
      need = round_up_align(d.a_bytes) + round_up_align(d.b_bytes) + round_up_align(d.c_bytes);
      break;
    }
    case WorkloadName::AllocChurn: need = 32ull << 20; break;
  }
  return round_up_align(std::max(need + (1ull << 20), 2ull << 20));
}

SessionConfig session_config_for(const WorkloadSpec& spec, TableMode mode) {
  validate_spec(spec);
  SessionConfig cfg;
  cfg.seed = spec.seed;
  cfg.arena_bytes = required_arena_bytes(spec);
  cfg.mode = mode;
  return cfg;
}

uint64_t app_state_bytes(const WorkloadSpec& spec) { return kHeaderBytes + payload_bytes(spec); }

WorkloadSpec spec_from_app_state(std::span<const uint8_t> state) {
  auto get = [&](uint64_t off) {
    uint64_t v = 0;
    std::memcpy(&v, state.data() + off, 8);
    return v;
  };
  if (state.size() < kHeaderBytes || get(kMagicOff) != kStateMagic ||
      get(kVersionOff) != kStateVersion)
    raise(Errc::InvalidArgument, "app_state does not hold a workload");
  if (get(kWorkloadOff) > static_cast<uint64_t>(WorkloadName::AllocChurn))
    raise(Errc::InvalidArgument, "app_state names an unknown workload");
  WorkloadSpec spec;
  spec.name = static_cast<WorkloadName>(get(kWorkloadOff));
  spec.streams = static_cast<uint32_t>(get(kStreamsOff));
  spec.data_bytes = get(kDataBytesOff);
  spec.iterations = get(kItersOff);
  spec.seed = get(kSeedOff);
  return spec;
}

WorkloadRun::WorkloadRun(RuntimeApi& api, std::vector<uint8_t>& app_state,
                         const WorkloadSpec& spec)
    : api_(api), state_(app_state), spec_(spec) {
  validate_spec(spec);
  state_.assign(app_state_bytes(spec), 0);
  w64(kMagicOff, kStateMagic);
  w64(kVersionOff, kStateVersion);
  w64(kWorkloadOff, static_cast<uint64_t>(spec.name));
  w64(kStreamsOff, spec.streams);
  w64(kDataBytesOff, spec.data_bytes);
  w64(kItersOff, spec.iterations);
  w64(kSeedOff, spec.seed);
  w64(kCursorOff, 0);
  w64(kDigestOff, Fnv64::kBasis);
}

WorkloadRun::WorkloadRun(RuntimeApi& api, std::vector<uint8_t>& app_state)
    : api_(api), state_(app_state), spec_(spec_from_app_state(app_state)) {
  if (state_.size() != app_state_bytes(spec_))
    raise(Errc::InvalidArgument, "app_state size does not match its workload");
}

uint64_t WorkloadRun::r64(uint64_t off) const {
  uint64_t v = 0;
  std::memcpy(&v, state_.data() + off, 8);
  return v;
}

void WorkloadRun::w64(uint64_t off, uint64_t v) { std::memcpy(state_.data() + off, &v, 8); }

std::span<uint8_t> WorkloadRun::payload(uint64_t off, uint64_t n) {
  return std::span<uint8_t>(state_).subspan(kHeaderBytes + off, n);
}

void WorkloadRun::fold(std::span<const uint8_t> bytes) {
  Fnv64 f(r64(kDigestOff));
  f.fold(bytes);
  w64(kDigestOff, f.value());
}

uint64_t WorkloadRun::cursor() const { return r64(kCursorOff); }
uint64_t WorkloadRun::digest() const { return r64(kDigestOff); }

uint64_t WorkloadRun::total_steps() const {
  switch (spec_.name) {
    case WorkloadName::StreamOverlap: return 2 + 4 * spec_.iterations;
    case WorkloadName::UvmTasks: return 2 + 3 * uvm_batches(spec_);
    case WorkloadName::BlasDot:
    case WorkloadName::BlasGemv:
    case WorkloadName::BlasGemm: return 2 + 2 * spec_.iterations;
    case WorkloadName::AllocChurn: return 2 + spec_.iterations;
  }
  return 0;
}

void WorkloadRun::run_step() {
  const uint64_t s = cursor();
  if (s >= total_steps()) raise(Errc::InvalidArgument, "workload already finished");
  switch (spec_.name) {
    case WorkloadName::StreamOverlap: step_stream_overlap(s); break;
    case WorkloadName::UvmTasks: step_uvm_tasks(s); break;
    case WorkloadName::BlasDot:
    case WorkloadName::BlasGemv:
    case WorkloadName::BlasGemm: step_blas(s); break;
    case WorkloadName::AllocChurn: step_alloc_churn(s); break;
  }
  w64(kCursorOff, s + 1);
}

void WorkloadRun::run_to_end() {
  while (!done()) run_step();
}

// Per stream and iteration: fill a chunk on the device, copy it back
// asynchronously on the same stream, synchronize, fold the mirror.
void WorkloadRun::step_stream_overlap(uint64_t s) {
  const auto d = stream_dims(spec_);
  const uint64_t buf = r64(kScratch0Off);
  const uint64_t first_stream = r64(kScratch1Off);
  if (s == 0) {
    api_.register_fat_binary(standard_kernels());
    w64(kScratch1Off, api_.stream_create());
    for (uint32_t i = 1; i < spec_.streams; ++i) api_.stream_create();
    w64(kScratch0Off, api_.alloc(AllocationKind::Device, d.buf_bytes).id);
    return;
  }
  if (s == total_steps() - 1) {
    std::vector<uint8_t> back(d.buf_bytes);
    api_.copy_d2h(back, {buf, 0}, std::nullopt);
    fold(back);
    return;
  }
  const uint64_t iter = (s - 1) / 4;
  switch ((s - 1) % 4) {
    case 0:
      for (uint32_t i = 0; i < spec_.streams; ++i) {
        const uint64_t value = mix64(spec_.seed ^ (iter * 1315423911ull + i)) & 0xFF;
        api_.launch(first_stream + i, "fill8", {{buf, i * d.chunk}}, {value, d.chunk});
      }
      break;
    case 1:
      for (uint32_t i = 0; i < spec_.streams; ++i)
        api_.copy_d2h(payload(i * d.chunk, d.chunk), {buf, i * d.chunk}, first_stream + i);
      break;
    case 2: api_.synchronize(); break;
    case 3: fold(payload(0, d.buf_bytes)); break;
  }
}

// Batches of tasks over one managed allocation, each task transforming its
// own 256-byte block either on the device (kernel on a stream) or on the
// host (page read-modify-write). Blocks within a batch are distinct, but
// neighbouring tasks routinely land on the same 4 KiB page from different
// streams and sides.
void WorkloadRun::step_uvm_tasks(uint64_t s) {
  const auto d = uvm_dims(spec_);
  const uint64_t alloc = r64(kScratch0Off);
  const uint64_t first_stream = r64(kScratch1Off);
  if (s == 0) {
    api_.register_fat_binary(standard_kernels());
    w64(kScratch1Off, api_.stream_create());
    for (uint32_t i = 1; i < spec_.streams; ++i) api_.stream_create();
    w64(kScratch0Off, api_.alloc(AllocationKind::Managed, d.bytes).id);
    return;
  }
  if (s == total_steps() - 1) {
    fold(api_.page_read(alloc, 0, d.bytes, PageSide::Host));
    return;
  }
  const uint64_t batch = (s - 1) / 3;
  const uint64_t t0 = batch * spec_.streams;
  const uint64_t t1 = std::min<uint64_t>(t0 + spec_.streams, spec_.iterations);
  switch ((s - 1) % 3) {
    case 0:
      for (uint64_t t = t0; t < t1; ++t) {
        const uint64_t h = mix64(spec_.seed ^ (t * 0x9E3779B97F4A7C15ull + 1));
        const uint64_t off = (t % d.blocks) * kUvmBlockBytes;
        if (h & 1) {
          const uint64_t mul = ((h >> 8) | 1) & 0xFF;
          const uint64_t add = (h >> 16) & 0xFF;
          api_.launch(first_stream + (t % spec_.streams), "affine8", {{alloc, off}},
                      {mul, add, kUvmBlockBytes});
        } else {
          auto block = api_.page_read(alloc, off, kUvmBlockBytes, PageSide::Host);
          const uint8_t mul = static_cast<uint8_t>((h >> 24) | 1);
          const uint8_t add = static_cast<uint8_t>(h >> 32);
          for (uint8_t& b : block) b = static_cast<uint8_t>(b * mul + add);
          api_.page_write(alloc, off, block, PageSide::Host);
        }
      }
      break;
    case 1: api_.synchronize(); break;
    case 2:
      for (uint64_t t = t0; t < t1; ++t)
        fold(api_.page_read(alloc, (t % d.blocks) * kUvmBlockBytes, kUvmBlockBytes,
                            PageSide::Host));
      break;
  }
}

void WorkloadRun::step_blas(uint64_t s) {
  const auto d = blas_dims(spec_);
  const uint64_t a = r64(kScratch0Off);
  const uint64_t b = r64(kScratch2Off);
  const uint64_t c = r64(kScratch3Off);
  const uint64_t stream = r64(kScratch1Off);
  if (s == 0) {
    api_.register_fat_binary(standard_kernels());
    w64(kScratch1Off, api_.stream_create());
    w64(kScratch0Off, api_.alloc(AllocationKind::Device, d.a_bytes).id);
    w64(kScratch2Off, api_.alloc(AllocationKind::Device, d.b_bytes).id);
    w64(kScratch3Off, api_.alloc(AllocationKind::Device, d.c_bytes).id);
    auto host_a = payload(0, d.a_bytes);
    auto host_b = payload(d.a_bytes, d.b_bytes);
    for (uint64_t i = 0; i < d.a_bytes / 4; ++i)
      put_f32(host_a, i, unit_float(mix64(spec_.seed ^ (i * 2654435761ull + 17))));
    for (uint64_t i = 0; i < d.b_bytes / 4; ++i)
      put_f32(host_b, i, unit_float(mix64(spec_.seed ^ (i * 40503ull + 29))));
    api_.copy_h2d({r64(kScratch0Off), 0}, host_a, std::nullopt);
    api_.copy_h2d({r64(kScratch2Off), 0}, host_b, std::nullopt);
    return;
  }
  if (s == total_steps() - 1) {
    std::vector<uint8_t> out(d.c_bytes);
    api_.copy_d2h(out, {c, 0}, std::nullopt);
    fold(out);
    return;
  }
  if ((s - 1) % 2 == 0) {
    switch (spec_.name) {
      case WorkloadName::BlasDot:
        api_.launch(stream, "dot_f32", {{a, 0}, {b, 0}, {c, 0}}, {d.n});
        break;
      case WorkloadName::BlasGemv:
        api_.launch(stream, "gemv_f32", {{a, 0}, {b, 0}, {c, 0}}, {d.m, d.k});
        break;
      default:
        api_.launch(stream, "gemm_f32", {{a, 0}, {b, 0}, {c, 0}}, {d.m, d.k, d.n});
        break;
    }
  } else {
    api_.synchronize();
    std::vector<uint8_t> probe(4);
    api_.copy_d2h(probe, {c, 0}, std::nullopt);
    fold(probe);
  }
}

// Random create/stamp/probe/destroy traffic over all three allocation kinds.
// The live table rides in app_state so the workload stays resumable; folding
// each result address into the digest makes address reproduction part of the
// output contract.
void WorkloadRun::step_alloc_churn(uint64_t s) {
  constexpr uint64_t kCountOff = 0;
  constexpr uint64_t kTableOff = 8;
  if (s == 0) return;  // the table starts empty; nothing to set up
  auto entry_off = [](uint64_t idx) { return kTableOff + idx * kChurnEntryBytes; };
  auto get = [&](uint64_t off) {
    uint64_t v = 0;
    std::memcpy(&v, payload(off, 8).data(), 8);
    return v;
  };
  auto put = [&](uint64_t off, uint64_t v) { std::memcpy(payload(off, 8).data(), &v, 8); };

  uint64_t count = get(kCountOff);
  if (s == total_steps() - 1) {
    Fnv64 f(r64(kDigestOff));
    f.fold_u64(count);
    for (uint64_t i = 0; i < count; ++i) {
      const uint64_t id = get(entry_off(i));
      const uint64_t kind = get(entry_off(i) + 16);
      f.fold_u64(id);
      f.fold_u64(get(entry_off(i) + 8));
      f.fold_u64(kind);
      std::vector<uint8_t> probe(kChurnStampBytes);
      if (kind == static_cast<uint64_t>(AllocationKind::Managed))
        probe = api_.page_read(id, 0, kChurnStampBytes, PageSide::Host);
      else
        api_.copy_d2h(probe, {id, 0}, std::nullopt);
      f.fold(probe);
    }
    w64(kDigestOff, f.value());
    return;
  }

  const uint64_t h = mix64(spec_.seed ^ ((s - 1) * 0x9E3779B97F4A7C15ull + 0xC3));
  const bool do_alloc = count == 0 || (count < kChurnCap && h % 100 < 60);
  Fnv64 f(r64(kDigestOff));
  if (do_alloc) {
    const uint64_t pick = (h >> 8) % 8;
    const AllocationKind kind = pick >= 7   ? AllocationKind::Managed
                                : pick >= 6 ? AllocationKind::PinnedHost
                                            : AllocationKind::Device;
    const uint64_t size = 256 * (1 + ((h >> 16) % 64));
    const AllocationRecord rec = api_.alloc(kind, size);
    std::array<uint8_t, kChurnStampBytes> stamp;
    for (uint64_t j = 0; j < kChurnStampBytes; ++j)
      stamp[j] = static_cast<uint8_t>(mix64(h ^ (j * 0x100000001B3ull)));
    if (kind == AllocationKind::Managed)
      api_.page_write(rec.id, 0, stamp, PageSide::Host);
    else
      api_.copy_h2d({rec.id, 0}, stamp, std::nullopt);
    put(entry_off(count), rec.id);
    put(entry_off(count) + 8, size);
    put(entry_off(count) + 16, static_cast<uint64_t>(kind));
    put(kCountOff, count + 1);
    f.fold_u64(rec.id);
    f.fold_u64(rec.address);
    f.fold_u64(size);
  } else {
    const uint64_t idx = (h >> 24) % count;
    const uint64_t id = get(entry_off(idx));
    const uint64_t kind = get(entry_off(idx) + 16);
    std::vector<uint8_t> probe(kChurnStampBytes);
    if (kind == static_cast<uint64_t>(AllocationKind::Managed))
      probe = api_.page_read(id, 0, kChurnStampBytes, PageSide::Host);
    else
      api_.copy_d2h(probe, {id, 0}, std::nullopt);
    api_.free(id);
    const uint64_t last = count - 1;
    put(entry_off(idx), get(entry_off(last)));
    put(entry_off(idx) + 8, get(entry_off(last) + 8));
    put(entry_off(idx) + 16, get(entry_off(last) + 16));
    put(kCountOff, last);
    f.fold_u64(id);
    f.fold(probe);
  }
  w64(kDigestOff, f.value());
}

double overhead_percent(double e_run_seconds, double e_native_seconds) {
  if (!(e_native_seconds > 0.0)) raise(Errc::DivisionByZero, "native time must be positive");
  return (e_run_seconds - e_native_seconds) / e_native_seconds * 100.0;
}

uint64_t total_calls(const std::map<std::string, uint64_t>& call_counts) {
  uint64_t total = 0;
  for (const auto& [name, count] : call_counts)
    total += name == call_name(CallId::LaunchKernel) ? 3 * count : count;
  return total;
}

double cps(const std::map<std::string, uint64_t>& call_counts, double duration_seconds) {
  if (!(duration_seconds > 0.0)) raise(Errc::DivisionByZero, "duration must be positive");
  return static_cast<double>(total_calls(call_counts)) / duration_seconds;
}

RunResult run_workload(const WorkloadSpec& spec, RunMode mode) {
  validate_spec(spec);
  const auto t0 = std::chrono::steady_clock::now();
  RunResult result;
  if (mode == RunMode::Native) {
    DeviceContext ctx(spec.seed, required_arena_bytes(spec));
    PassthroughApi api(ctx);
    std::vector<uint8_t> state;
    WorkloadRun run(api, state, spec);
    run.run_to_end();
    result.digest = run.digest();
    result.call_counts = api.call_counts();
  } else {
    Session session(session_config_for(
        spec, mode == RunMode::Proxy ? TableMode::Proxy : TableMode::Direct));
    WorkloadRun run(session.api(), session.app_state(), spec);
    run.run_to_end();
    result.digest = run.digest();
    result.call_counts = session.api().call_counts();
  }
  result.e_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

SampleStats sample_stats(const std::vector<double>& samples) {
  SampleStats s;
  s.samples = samples;
  if (samples.empty()) return s;
  double sum = 0.0;
  for (double v : samples) sum += v;
  s.mean = sum / static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double acc = 0.0;
    for (double v : samples) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / static_cast<double>(samples.size() - 1));
  }
  return s;
}

double TimingReport::overhead() const { return overhead_percent(e_run.mean, e_native.mean); }
double TimingReport::native_cps() const { return cps(call_counts, e_native.mean); }

bool bench_supported(WorkloadName name) {
  switch (name) {
    case WorkloadName::StreamOverlap:
    case WorkloadName::BlasDot:
    case WorkloadName::BlasGemv:
    case WorkloadName::BlasGemm: return true;
    default: return false;
  }
}

TimingReport run_bench(const WorkloadSpec& spec, RunMode mode, uint32_t repeats) {
  if (!bench_supported(spec.name)) raise(Errc::InvalidArgument, "workload is not benchable");
  if (mode == RunMode::Native) raise(Errc::InvalidArgument, "bench compares against native");
  if (repeats < 1) raise(Errc::InvalidArgument, "repeats must be >= 1");
  TimingReport report;
  report.spec = spec;
  report.mode = mode;
  std::vector<double> native, run;
  for (uint32_t r = 0; r < repeats; ++r) {
    RunResult n = run_workload(spec, RunMode::Native);
    RunResult i = run_workload(spec, mode);
    native.push_back(n.e_seconds);
    run.push_back(i.e_seconds);
    if (r == 0) {
      report.call_counts = i.call_counts;
      report.digest = i.digest;
    }
  }
  report.e_native = sample_stats(native);
  report.e_run = sample_stats(run);
  return report;
}

std::string bench_report_json(const TimingReport& report) {
  char digest_hex[32];
  std::snprintf(digest_hex, sizeof digest_hex, "0x%016llx",
                static_cast<unsigned long long>(report.digest));
  auto stats = [](const SampleStats& s) {
    return nlohmann::json{{"mean", s.mean}, {"stddev", s.stddev}, {"samples", s.samples}};
  };
  nlohmann::json j{
      {"workload", workload_name(report.spec.name)},
      {"mode", run_mode_name(report.mode)},
      {"seed", report.spec.seed},
      {"streams", report.spec.streams},
      {"data_bytes", report.spec.data_bytes},
      {"iterations", report.spec.iterations},
      {"threads", report.threads},
      {"repeats", report.e_native.samples.size()},
      {"e_seconds", {{"native", stats(report.e_native)},
                     {run_mode_name(report.mode), stats(report.e_run)}}},
      {"call_counts", report.call_counts},
      {"overhead_percent", report.overhead()},
      {"cps", report.native_cps()},
      {"digest", digest_hex},
  };
  return j.dump(2) + "\n";
}

}  // namespace cracsim
