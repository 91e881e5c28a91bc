#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "cracsim/image.hpp"
#include "support/checks.hpp"

using namespace cracsim;

namespace {

Snapshot empty_snapshot() {
  Snapshot s;
  s.meta.seed = 0;
  s.meta.arena_bytes = 1ull << 24;
  return s;
}

// A snapshot exercising every section, consistent with the strict decoder:
// payload ids equal the log's live non-managed set, managed pages tile the
// logged size, streams and registry handles match the log.
Snapshot rich_snapshot() {
  Snapshot s;
  s.meta.seed = 5;
  s.meta.arena_bytes = 1ull << 20;
  auto alloc = [&](uint64_t id, AllocationKind kind, uint64_t size, uint64_t address) {
    s.log.push_back({s.log.size() + 1, LogOp::Alloc, static_cast<uint8_t>(kind), size, id, address});
  };
  auto op = [&](LogOp o, uint64_t id) { s.log.push_back({s.log.size() + 1, o, 0, 0, id, 0}); };
  alloc(1, AllocationKind::Device, 1000, kArenaBase);
  alloc(2, AllocationKind::Managed, 4196, kArenaBase + 1024);
  op(LogOp::StreamCreate, 1);
  alloc(3, AllocationKind::PinnedHost, 10, kArenaBase + 1024 + 4352);
  op(LogOp::RegisterBinary, 1);
  op(LogOp::StreamCreate, 2);
  op(LogOp::StreamDestroy, 1);
  alloc(4, AllocationKind::Device, 5, kArenaBase + 1024 + 4352 + 256);
  op(LogOp::Free, 4);

  s.payloads.push_back({1, std::vector<uint8_t>(1000, 0xA1)});
  s.payloads.push_back({3, std::vector<uint8_t>(10, 0xA3)});
  ManagedRecord m{2, {}};
  m.pages.push_back({0, true, false, std::vector<uint8_t>(4096, 0xB0)});
  m.pages.push_back({1, false, true, std::vector<uint8_t>(100, 0xB1)});
  s.managed.push_back(std::move(m));
  s.streams = {2};
  s.app_state.assign(33, 0x5A);
  s.binaries.push_back({1, {{"scale", 2, 1}, {"probe", 1, 0}}});
  return s;
}

uint64_t framed_size(const ImageSummary& sum) {
  uint64_t total = 16;
  for (const auto& sec : sum.sections) total += 16 + sec.length + 4;
  return total;
}

void expect_corrupt_decode(const Snapshot& broken) {
  const auto bytes = encode_image(broken);
  expect_errc(Errc::ImageCorrupt, [&] { decode_image(bytes); });
}

}  // namespace

TEST_CASE("an empty session encodes to a fixed 188-byte image") {
  const auto s = empty_snapshot();
  const auto bytes = encode_image(s);
  CHECK(bytes.size() == 188);

  const auto sum = summarize_image(bytes);
  CHECK(sum.version == 1);
  CHECK_FALSE(sum.was_compressed);
  CHECK(sum.file_bytes == 188);
  CHECK(framed_size(sum) == 188);
  REQUIRE(sum.sections.size() == 7);
  for (uint32_t i = 0; i < 7; ++i)
    CHECK(static_cast<uint32_t>(sum.sections[i].tag) == i + 1);
  CHECK(sum.sections[0].length == 24);  // META
  CHECK(sum.sections[6].length == 8);   // KERNEL_REGISTRY holds just its count
  for (int i : {1, 2, 3, 4, 5}) CHECK(sum.sections[i].length == 0);
  CHECK(sum.log_entries == 0);
  CHECK(sum.active_allocations == 0);
  CHECK(sum.payload_bytes == 0);
  CHECK(sum.uvm_page_bytes == 0);

  CHECK(decode_image(bytes) == s);
}

TEST_CASE("round trip preserves every section bit-for-bit") {
  const auto s = rich_snapshot();
  const auto bytes = encode_image(s);
  const auto back = decode_image(bytes);
  CHECK(back == s);
  CHECK(back.managed[0].pages[1].content.size() == 100);  // short tail page survives
  CHECK(back.managed[0].pages[0].device_resident);
  CHECK(back.managed[0].pages[1].dirty);

  const auto sum = summarize_image(bytes);
  CHECK(sum.file_bytes == bytes.size());
  CHECK(framed_size(sum) == bytes.size());
  CHECK(sum.sections[1].length == s.log.size() * kLogRecordBytes);  // 36 per record
  CHECK(sum.sections[1].length == 324);
  CHECK(sum.sections[2].length == (16 + 1000) + (16 + 10));
  CHECK(sum.sections[3].length == 16 + (16 + 4096) + (16 + 100));
  CHECK(sum.sections[4].length == 8);
  CHECK(sum.sections[5].length == 33);
  CHECK(sum.log_entries == 9);
  CHECK(sum.active_allocations == 3);
  CHECK(sum.payload_bytes == 1010);
  CHECK(sum.uvm_page_bytes == 4196);
}

TEST_CASE("a single 1 KiB allocation frames as 16 bytes of header plus content") {
  Snapshot s = empty_snapshot();
  s.log.push_back({1, LogOp::Alloc, static_cast<uint8_t>(AllocationKind::Device), 1024, 1,
                   kArenaBase});
  s.payloads.push_back({1, std::vector<uint8_t>(1024, 0xCD)});
  const auto sum = summarize_image(encode_image(s));
  CHECK(sum.sections[2].length == 1040);
  CHECK(sum.payload_bytes == 1024);
  CHECK(sum.active_allocations == 1);
}

TEST_CASE("every single-bit flip of an image raises ImageCorrupt") {
  for (const Snapshot& s : {empty_snapshot(), rich_snapshot()}) {
    auto bytes = encode_image(s);
    size_t detected = 0;
    for (size_t bit = 0; bit < bytes.size() * 8; ++bit) {
      bytes[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
      try {
        decode_image(bytes);
      } catch (const Error& e) {
        if (e.code() == Errc::ImageCorrupt) ++detected;
      }
      bytes[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
    }
    CHECK(detected == bytes.size() * 8);
    CHECK(decode_image(bytes) == s);  // flips were all restored
  }
}

TEST_CASE("no single-bit flip of a compressed image decodes to altered content") {
  // Deflate streams contain don't-care padding bits, so a flip need not be
  // fatal — but it must never change what decodes.
  const auto original = rich_snapshot();
  auto compressed = compress_image(encode_image(original));
  size_t rejected = 0, harmless = 0;
  for (size_t bit = 0; bit < compressed.size() * 8; ++bit) {
    compressed[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
    try {
      const Snapshot got = decode_image(compressed);
      REQUIRE(got == original);
      ++harmless;
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::ImageCorrupt);
      ++rejected;
    }
    compressed[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
  }
  CHECK(rejected + harmless == compressed.size() * 8);
  CHECK(rejected > harmless);  // checksums catch the overwhelming majority
}

TEST_CASE("truncation and trailing garbage raise ImageCorrupt") {
  const auto bytes = encode_image(rich_snapshot());
  for (size_t keep : {size_t{0}, size_t{7}, size_t{15}, size_t{16}, size_t{50}, bytes.size() - 1}) {
    std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + keep);
    expect_errc(Errc::ImageCorrupt, [&] { decode_image(cut); });
  }
  auto padded = bytes;
  padded.push_back(0);
  expect_errc(Errc::ImageCorrupt, [&] { decode_image(padded); });
}

TEST_CASE("compression wrapper is transparent to decode and summarize") {
  const auto s = rich_snapshot();
  const auto raw = encode_image(s);
  const auto z = compress_image(raw);
  CHECK(is_compressed_image(z));
  CHECK_FALSE(is_compressed_image(raw));
  CHECK(decode_image(z) == s);

  const auto sum = summarize_image(z);
  CHECK(sum.was_compressed);
  CHECK(sum.file_bytes == z.size());
  CHECK(framed_size(sum) == raw.size());
}

TEST_CASE("image files round trip through disk, compressed or not") {
  namespace fs = std::filesystem;
  const auto s = rich_snapshot();
  const fs::path dir = fs::temp_directory_path();
  for (bool compress : {false, true}) {
    const fs::path p = dir / (compress ? "img_z.ckpt" : "img_raw.ckpt");
    write_image_file(p, s, compress);
    CHECK(read_image_file(p) == s);
    CHECK(is_compressed_image(read_file_bytes(p)) == compress);
    fs::remove(p);
  }
  expect_errc(Errc::ImageCorrupt, [&] { read_file_bytes(dir / "no_such_image.ckpt"); });
}

TEST_CASE("decode rejects images whose sections disagree with the log") {
  const Snapshot base = rich_snapshot();

  SUBCASE("payload id outside the active set") {
    auto s = base;
    s.payloads[1].id = 99;
    expect_corrupt_decode(s);
  }
  SUBCASE("payload supplied for a managed allocation") {
    auto s = base;
    s.payloads.insert(s.payloads.begin() + 1, {2, std::vector<uint8_t>(4196)});
    expect_corrupt_decode(s);
  }
  SUBCASE("missing payload") {
    auto s = base;
    s.payloads.pop_back();
    expect_corrupt_decode(s);
  }
  SUBCASE("payload for a freed allocation") {
    auto s = base;
    s.payloads.push_back({4, std::vector<uint8_t>(5)});
    expect_corrupt_decode(s);
  }
  SUBCASE("payload length disagrees with the logged size") {
    auto s = base;
    s.payloads[0].bytes.resize(999);
    expect_corrupt_decode(s);
  }
  SUBCASE("managed record with the wrong page count") {
    auto s = base;
    s.managed[0].pages.pop_back();
    expect_corrupt_decode(s);
  }
  SUBCASE("page content length disagrees with the allocation size") {
    auto s = base;
    s.managed[0].pages[1].content.resize(101);
    expect_corrupt_decode(s);
  }
  SUBCASE("page indexes out of order") {
    auto s = base;
    std::swap(s.managed[0].pages[0].index, s.managed[0].pages[1].index);
    expect_corrupt_decode(s);
  }
  SUBCASE("stream list disagrees with the log") {
    auto s = base;
    s.streams = {1};
    expect_corrupt_decode(s);
    s.streams = {1, 2};
    expect_corrupt_decode(s);
    s.streams = {};
    expect_corrupt_decode(s);
  }
  SUBCASE("registry handles disagree with the log") {
    auto s = base;
    s.binaries[0].handle = 2;
    expect_corrupt_decode(s);
    s.binaries.clear();
    expect_corrupt_decode(s);
  }
  SUBCASE("duplicate kernel name in the registry") {
    auto s = base;
    s.binaries[0].kernels[1].name = "scale";
    expect_corrupt_decode(s);
  }
  SUBCASE("empty kernel name in the registry") {
    auto s = base;
    s.binaries[0].kernels[0].name.clear();
    expect_corrupt_decode(s);
  }
}

TEST_CASE("decode rejects logs that could not have happened") {
  const Snapshot base = rich_snapshot();

  SUBCASE("seq gap") {
    auto s = base;
    s.log[3].seq = 99;
    expect_corrupt_decode(s);
  }
  SUBCASE("non-Alloc record carrying a size") {
    auto s = base;
    s.log[8].size = 1;  // the Free entry
    expect_corrupt_decode(s);
  }
  SUBCASE("alloc id skips ahead") {
    auto s = base;
    s.log[0].id = 7;
    expect_corrupt_decode(s);
  }
  SUBCASE("alloc address misaligned") {
    auto s = base;
    s.log[0].address += 1;
    expect_corrupt_decode(s);
  }
  SUBCASE("alloc address outside the arena") {
    auto s = base;
    s.log[0].address = kArenaBase + s.meta.arena_bytes;
    expect_corrupt_decode(s);
  }
  SUBCASE("alloc size zero") {
    auto s = base;
    s.log[0].size = 0;
    expect_corrupt_decode(s);
  }
  SUBCASE("free of an id that was never allocated") {
    auto s = base;
    s.log.push_back({10, LogOp::Free, 0, 0, 42, 0});
    expect_corrupt_decode(s);
  }
  SUBCASE("double free") {
    auto s = base;
    s.log.push_back({10, LogOp::Free, 0, 0, 4, 0});
    expect_corrupt_decode(s);
  }
  SUBCASE("destroying a stream twice") {
    auto s = base;
    s.log.push_back({10, LogOp::StreamDestroy, 0, 0, 1, 0});
    expect_corrupt_decode(s);
  }
  SUBCASE("stream ids out of order") {
    auto s = base;
    s.log[2].id = 2;
    expect_corrupt_decode(s);
  }
  SUBCASE("unregister of a dead handle") {
    auto s = base;
    s.log.push_back({10, LogOp::UnregisterBinary, 0, 0, 9, 0});
    expect_corrupt_decode(s);
  }
}

TEST_CASE("decode rejects bad metadata") {
  SUBCASE("arena_bytes zero") {
    auto s = rich_snapshot();
    s.meta.arena_bytes = 0;
    expect_corrupt_decode(s);
  }
  SUBCASE("arena_bytes not aligned") {
    auto s = rich_snapshot();
    s.meta.arena_bytes = (1ull << 20) + 1;
    expect_corrupt_decode(s);
  }
  SUBCASE("unknown engine version") {
    auto s = rich_snapshot();
    s.meta.engine_version = 2;
    expect_corrupt_decode(s);
  }
}
