#include "cracsim/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>

#include "cracsim/bytes.hpp"

namespace cracsim {

namespace {

uint32_t crc32_of(std::span<const uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in chunks.
  size_t pos = 0;
  while (pos < bytes.size()) {
    const size_t chunk = std::min<size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<uint32_t>(crc);
}

[[noreturn]] void corrupt(const std::string& what) { raise(Errc::ImageCorrupt, what); }

std::vector<uint8_t> encode_meta(const Snapshot& s) {
  ByteWriter w;
  w.u64(s.meta.seed);
  w.u64(s.meta.arena_bytes);
  w.u32(s.meta.engine_version);
  w.u32(0);
  return w.take();
}

std::vector<uint8_t> encode_log(const Snapshot& s) {
  ByteWriter w;
  for (const auto& e : s.log) {
    w.u64(e.seq);
    w.u8(static_cast<uint8_t>(e.op));
    w.u8(e.kind);
    w.u16(0);
    w.u64(e.size);
    w.u64(e.id);
    w.u64(e.address);
  }
  return w.take();
}

std::vector<uint8_t> encode_payloads(const Snapshot& s) {
  ByteWriter w;
  for (const auto& p : s.payloads) {
    w.u64(p.id);
    w.u64(p.bytes.size());
    w.bytes(p.bytes);
  }
  return w.take();
}

std::vector<uint8_t> encode_uvm(const Snapshot& s) {
  ByteWriter w;
  for (const auto& m : s.managed) {
    w.u64(m.id);
    w.u64(m.pages.size());
    for (const auto& p : m.pages) {
      w.u64(p.index);
      uint32_t flags = (p.device_resident ? 1u : 0u) | (p.dirty ? 2u : 0u);
      w.u32(flags);
      w.u32(static_cast<uint32_t>(p.content.size()));
      w.bytes(p.content);
    }
  }
  return w.take();
}

std::vector<uint8_t> encode_streams(const Snapshot& s) {
  ByteWriter w;
  for (uint64_t id : s.streams) w.u64(id);
  return w.take();
}

std::vector<uint8_t> encode_registry(const Snapshot& s) {
  ByteWriter w;
  w.u64(s.binaries.size());
  for (const auto& b : s.binaries) {
    w.u64(b.handle);
    w.u32(static_cast<uint32_t>(b.kernels.size()));
    for (const auto& k : b.kernels) {
      w.str(k.name);
      w.u32(k.buffer_arity);
      w.u32(k.scalar_arity);
    }
  }
  return w.take();
}

// State derived from a validated LOG section, used to cross-check the other
// sections against it.
struct LogFacts {
  std::vector<AllocationRecord> active;  // ascending id
  std::vector<uint64_t> live_streams;    // ascending
  std::vector<uint64_t> live_handles;    // ascending
};

std::vector<CallLogEntry> decode_log(std::span<const uint8_t> payload, const SnapshotMeta& meta,
                                     LogFacts& facts) {
  if (payload.size() % kLogRecordBytes != 0) corrupt("LOG length is not a whole record count");
  ByteReader r(payload, Errc::ImageCorrupt);
  std::vector<CallLogEntry> log;
  std::map<uint64_t, AllocationRecord> live;
  std::map<uint64_t, bool> streams;
  std::map<uint64_t, bool> handles;
  uint64_t next_alloc = 1, next_stream = 1, next_handle = 1;
  uint64_t seq = 0;
  while (!r.done()) {
    CallLogEntry e;
    e.seq = r.u64();
    uint8_t op = r.u8();
    e.kind = r.u8();
    uint16_t pad = r.u16();
    e.size = r.u64();
    e.id = r.u64();
    e.address = r.u64();
    if (e.seq != ++seq) corrupt("LOG seq not contiguous");
    if (pad != 0) corrupt("LOG record pad not zero");
    if (op < 1 || op > 6) corrupt("LOG op out of range");
    e.op = static_cast<LogOp>(op);
    if (e.op == LogOp::Alloc) {
      if (e.kind < 1 || e.kind > 3) corrupt("Alloc kind out of range");
      if (e.size == 0) corrupt("Alloc size zero");
      if (e.id != next_alloc++) corrupt("Alloc ids not contiguous");
      if (e.address < kArenaBase || e.address % kAlign != 0 ||
          e.address - kArenaBase + round_up_align(e.size) > meta.arena_bytes)
        corrupt("Alloc address outside arena");
      live.emplace(e.id, AllocationRecord{e.id, static_cast<AllocationKind>(e.kind), e.size,
                                          e.address, false});
    } else {
      if (e.kind != 0 || e.size != 0 || e.address != 0) corrupt("non-Alloc record with payload");
      switch (e.op) {
        case LogOp::Free:
          if (!live.erase(e.id)) corrupt("Free of an id that is not live");
          break;
        case LogOp::StreamCreate:
          if (e.id != next_stream++) corrupt("stream ids not contiguous");
          streams[e.id] = true;
          break;
        case LogOp::StreamDestroy:
          if (!streams.count(e.id) || !streams[e.id]) corrupt("destroy of a dead stream");
          streams[e.id] = false;
          break;
        case LogOp::RegisterBinary:
          if (e.id != next_handle++) corrupt("binary handles not contiguous");
          handles[e.id] = true;
          break;
        case LogOp::UnregisterBinary:
          if (!handles.count(e.id) || !handles[e.id]) corrupt("unregister of a dead handle");
          handles[e.id] = false;
          break;
        default: break;
      }
    }
    log.push_back(e);
  }
  for (const auto& [id, rec] : live) facts.active.push_back(rec);
  for (const auto& [id, on] : streams)
    if (on) facts.live_streams.push_back(id);
  for (const auto& [id, on] : handles)
    if (on) facts.live_handles.push_back(id);
  return log;
}

std::vector<PayloadRecord> decode_payloads(std::span<const uint8_t> payload,
                                           const LogFacts& facts) {
  ByteReader r(payload, Errc::ImageCorrupt);
  std::vector<PayloadRecord> out;
  size_t want = 0;
  std::vector<const AllocationRecord*> expected;
  for (const auto& rec : facts.active)
    if (rec.kind != AllocationKind::Managed) expected.push_back(&rec);
  while (!r.done()) {
    if (want >= expected.size()) corrupt("extra ALLOC_PAYLOADS record");
    PayloadRecord p;
    p.id = r.u64();
    uint64_t len = r.u64();
    if (p.id != expected[want]->id) corrupt("ALLOC_PAYLOADS ids do not match the active set");
    if (len != expected[want]->size) corrupt("payload length does not match logged size");
    auto b = r.bytes(len);
    p.bytes.assign(b.begin(), b.end());
    out.push_back(std::move(p));
    ++want;
  }
  if (want != expected.size()) corrupt("missing ALLOC_PAYLOADS record");
  return out;
}

std::vector<ManagedRecord> decode_uvm(std::span<const uint8_t> payload, const LogFacts& facts) {
  ByteReader r(payload, Errc::ImageCorrupt);
  std::vector<ManagedRecord> out;
  std::vector<const AllocationRecord*> expected;
  for (const auto& rec : facts.active)
    if (rec.kind == AllocationKind::Managed) expected.push_back(&rec);
  size_t want = 0;
  while (!r.done()) {
    if (want >= expected.size()) corrupt("extra UVM_PAGES record");
    const AllocationRecord& rec = *expected[want];
    ManagedRecord m;
    m.id = r.u64();
    uint64_t pages = r.u64();
    if (m.id != rec.id) corrupt("UVM_PAGES ids do not match the active managed set");
    if (pages != page_count_for(rec.size)) corrupt("page count does not match size");
    for (uint64_t i = 0; i < pages; ++i) {
      PageRecord p;
      p.index = r.u64();
      uint32_t flags = r.u32();
      uint32_t len = r.u32();
      if (p.index != i) corrupt("page index out of order");
      if (flags > 3) corrupt("page flags out of range");
      p.device_resident = flags & 1;
      p.dirty = flags & 2;
      const uint64_t tail = rec.size - i * kPageSize;
      const uint64_t expect_len = std::min<uint64_t>(kPageSize, tail);
      if (len != expect_len) corrupt("page content length mismatch");
      auto b = r.bytes(len);
      p.content.assign(b.begin(), b.end());
      m.pages.push_back(std::move(p));
    }
    out.push_back(std::move(m));
    ++want;
  }
  if (want != expected.size()) corrupt("missing UVM_PAGES record");
  return out;
}

std::vector<uint64_t> decode_streams(std::span<const uint8_t> payload, const LogFacts& facts) {
  if (payload.size() % 8 != 0) corrupt("STREAMS length is not a whole id count");
  ByteReader r(payload, Errc::ImageCorrupt);
  std::vector<uint64_t> out;
  while (!r.done()) out.push_back(r.u64());
  if (out != facts.live_streams) corrupt("STREAMS does not match the log's live streams");
  return out;
}

std::vector<BinaryInfo> decode_registry(std::span<const uint8_t> payload, const LogFacts& facts) {
  ByteReader r(payload, Errc::ImageCorrupt);
  uint64_t count = r.u64();
  std::vector<BinaryInfo> out;
  std::vector<std::string> seen;
  for (uint64_t i = 0; i < count; ++i) {
    BinaryInfo b;
    b.handle = r.u64();
    uint32_t kernels = r.u32();
    for (uint32_t k = 0; k < kernels; ++k) {
      KernelInfo info;
      info.name = r.str();
      info.buffer_arity = r.u32();
      info.scalar_arity = r.u32();
      if (info.name.empty()) corrupt("empty kernel name");
      if (std::find(seen.begin(), seen.end(), info.name) != seen.end())
        corrupt("duplicate kernel name in registry");
      seen.push_back(info.name);
      b.kernels.push_back(std::move(info));
    }
    out.push_back(std::move(b));
  }
  if (!r.done()) corrupt("trailing bytes in KERNEL_REGISTRY");
  std::vector<uint64_t> handles;
  for (const auto& b : out) handles.push_back(b.handle);
  if (handles != facts.live_handles) corrupt("registry handles do not match the log");
  return out;
}

struct DecodeResult {
  Snapshot snapshot;
  ImageSummary summary;
};

DecodeResult decode_inner(std::span<const uint8_t> bytes) {
  DecodeResult res;
  res.summary.file_bytes = bytes.size();
  ByteReader r(bytes, Errc::ImageCorrupt);
  auto magic = r.bytes(8);
  if (std::memcmp(magic.data(), kImageMagic, 8) != 0) corrupt("bad magic");
  uint32_t version = r.u32();
  if (version != kImageVersion) corrupt("unsupported version");
  res.summary.version = version;
  uint32_t count = r.u32();
  if (count != kSectionCount) corrupt("section count must be " + std::to_string(kSectionCount));

  LogFacts facts;
  for (uint32_t i = 0; i < kSectionCount; ++i) {
    uint32_t tag = r.u32();
    uint32_t reserved = r.u32();
    uint64_t length = r.u64();
    if (tag != i + 1) corrupt("section tags must be 1..7 ascending, each once");
    if (reserved != 0) corrupt("section reserved field not zero");
    auto payload = r.bytes(length);
    uint32_t crc = r.u32();
    if (crc != crc32_of(payload)) corrupt(std::string("crc mismatch in ") +
                                          section_tag_name(static_cast<SectionTag>(tag)));
    res.summary.sections.push_back(SectionSummary{static_cast<SectionTag>(tag), length, crc});

    switch (static_cast<SectionTag>(tag)) {
      case SectionTag::Meta: {
        if (length != 24) corrupt("META must be 24 bytes");
        ByteReader m(payload, Errc::ImageCorrupt);
        res.snapshot.meta.seed = m.u64();
        res.snapshot.meta.arena_bytes = m.u64();
        res.snapshot.meta.engine_version = m.u32();
        if (m.u32() != 0) corrupt("META reserved field not zero");
        if (res.snapshot.meta.engine_version != kEngineVersion) corrupt("unsupported engine version");
        if (res.snapshot.meta.arena_bytes == 0 || res.snapshot.meta.arena_bytes % kAlign != 0)
          corrupt("META arena_bytes invalid");
        break;
      }
      case SectionTag::Log:
        res.snapshot.log = decode_log(payload, res.snapshot.meta, facts);
        res.summary.log_entries = res.snapshot.log.size();
        res.summary.active_allocations = facts.active.size();
        break;
      case SectionTag::AllocPayloads:
        res.snapshot.payloads = decode_payloads(payload, facts);
        for (const auto& p : res.snapshot.payloads) res.summary.payload_bytes += p.bytes.size();
        break;
      case SectionTag::UvmPages:
        res.snapshot.managed = decode_uvm(payload, facts);
        for (const auto& m : res.snapshot.managed)
          for (const auto& p : m.pages) res.summary.uvm_page_bytes += p.content.size();
        break;
      case SectionTag::Streams:
        res.snapshot.streams = decode_streams(payload, facts);
        break;
      case SectionTag::AppState:
        res.snapshot.app_state.assign(payload.begin(), payload.end());
        break;
      case SectionTag::KernelRegistry:
        res.snapshot.binaries = decode_registry(payload, facts);
        break;
    }
  }
  if (!r.done()) corrupt("trailing bytes after final section");
  return res;
}

std::vector<uint8_t> maybe_decompress(std::span<const uint8_t> bytes, bool* was_compressed) {
  if (was_compressed) *was_compressed = false;
  if (!is_compressed_image(bytes)) return {bytes.begin(), bytes.end()};
  if (was_compressed) *was_compressed = true;
  ByteReader r(bytes, Errc::ImageCorrupt);
  r.bytes(8);
  const uint64_t raw_len = r.u64();
  if (raw_len > (1ull << 34)) corrupt("implausible decompressed size");
  auto deflated = r.bytes(r.remaining());

  // Inflate incrementally so memory use tracks the actual stream, not the
  // header's claimed size — a corrupted length field must not drive a giant
  // allocation.
  z_stream zs{};
  if (::inflateInit(&zs) != Z_OK) corrupt("inflate setup failed");
  zs.next_in = const_cast<Bytef*>(deflated.data());
  zs.avail_in = static_cast<uInt>(deflated.size());
  std::vector<uint8_t> out;
  std::array<uint8_t, 64 * 1024> chunk;
  int rc = Z_OK;
  while (rc == Z_OK) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = ::inflate(&zs, Z_NO_FLUSH);
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (out.size() > raw_len) break;
  }
  const bool drained = zs.avail_in == 0;
  ::inflateEnd(&zs);
  if (rc != Z_STREAM_END || out.size() != raw_len || !drained)
    corrupt("compressed wrapper does not inflate");
  return out;
}

}  // namespace

std::vector<uint8_t> encode_image(const Snapshot& s) {
  ByteWriter w;
  w.bytes({reinterpret_cast<const uint8_t*>(kImageMagic), 8});
  w.u32(kImageVersion);
  w.u32(kSectionCount);
  const std::vector<uint8_t> payloads[kSectionCount] = {
      encode_meta(s),    encode_log(s),     encode_payloads(s), encode_uvm(s),
      encode_streams(s), std::vector<uint8_t>(s.app_state),     encode_registry(s)};
  for (uint32_t i = 0; i < kSectionCount; ++i) {
    w.u32(i + 1);
    w.u32(0);
    w.u64(payloads[i].size());
    w.bytes(payloads[i]);
    w.u32(crc32_of(payloads[i]));
  }
  return w.take();
}

Snapshot decode_image(std::span<const uint8_t> bytes) {
  auto raw = maybe_decompress(bytes, nullptr);
  return decode_inner(raw).snapshot;
}

ImageSummary summarize_image(std::span<const uint8_t> bytes) {
  bool compressed = false;
  auto raw = maybe_decompress(bytes, &compressed);
  auto res = decode_inner(raw);
  res.summary.was_compressed = compressed;
  if (compressed) res.summary.file_bytes = bytes.size();
  return res.summary;
}

bool is_compressed_image(std::span<const uint8_t> bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kCompressedMagic, 8) == 0;
}

std::vector<uint8_t> compress_image(std::span<const uint8_t> image) {
  ByteWriter w;
  w.bytes({reinterpret_cast<const uint8_t*>(kCompressedMagic), 8});
  w.u64(image.size());
  uLongf bound = ::compressBound(image.size());
  std::vector<uint8_t> deflated(bound);
  int rc = ::compress2(deflated.data(), &bound, image.data(), image.size(), 6);
  if (rc != Z_OK) raise(Errc::InvalidArgument, "compression failed");
  deflated.resize(bound);
  w.bytes(deflated);
  return w.take();
}

void write_image_file(const std::filesystem::path& path, const Snapshot& snapshot,
                      bool compress) {
  auto bytes = encode_image(snapshot);
  if (compress) bytes = compress_image(bytes);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  f.flush();
  if (!f.good()) raise(Errc::InvalidArgument, "cannot write " + path.string());
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f.good()) raise(Errc::ImageCorrupt, "cannot read " + path.string());
  auto size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f.good()) raise(Errc::ImageCorrupt, "cannot read " + path.string());
  return bytes;
}

Snapshot read_image_file(const std::filesystem::path& path) {
  return decode_image(read_file_bytes(path));
}

}  // namespace cracsim
