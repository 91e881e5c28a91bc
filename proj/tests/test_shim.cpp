#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <map>
#include <random>
#include <thread>

#include "cracsim/ckpt_engine.hpp"
#include "cracsim/kernels.hpp"
#include "cracsim/shim.hpp"
#include "support/checks.hpp"
#include "support/sequence_gen.hpp"

using namespace cracsim;

namespace {

constexpr uint64_t kMiB = 1ull << 20;

struct Rig {
  explicit Rig(uint64_t arena = kMiB, TableMode mode = TableMode::Direct, uint64_t seed = 7)
      : ctx(seed, arena), table(ctx, log, regions, mode) {}
  DeviceContext ctx;
  CallLog log;
  RegionMap regions;
  DispatchTable table;
};

}  // namespace

TEST_CASE("log: entries format as `seq op kind size id address`") {
  Rig rig;
  const auto a = rig.table.alloc(AllocationKind::Device, 1024);
  rig.table.alloc(AllocationKind::Managed, 50);
  rig.table.free(a.id);
  rig.table.stream_create();
  const uint64_t h = rig.table.register_fat_binary({});
  rig.table.unregister_fat_binary(h);

  const auto entries = rig.log.snapshot();
  REQUIRE(entries.size() == 6);
  CHECK(format_log_entry(entries[0]) == "1 Alloc device 1024 1 0xd0000000000");
  CHECK(format_log_entry(entries[1]) == "2 Alloc managed 50 2 0xd0000000400");
  CHECK(format_log_entry(entries[2]) == "3 Free - 0 1 0x0");
  CHECK(format_log_entry(entries[3]) == "4 StreamCreate - 0 1 0x0");
  CHECK(format_log_entry(entries[4]) == "5 RegisterBinary - 0 1 0x0");
  CHECK(format_log_entry(entries[5]) == "6 UnregisterBinary - 0 1 0x0");
}

TEST_CASE("log: only the allocation family is logged") {
  Rig rig;
  rig.table.register_fat_binary(standard_kernels());
  const uint64_t s = rig.table.stream_create();
  const auto buf = rig.table.alloc(AllocationKind::Device, 512);
  const auto m = rig.table.alloc(AllocationKind::Managed, 4096);
  const size_t logged = rig.log.size();

  std::vector<uint8_t> bytes(16, 1);
  rig.table.launch(s, "fill8", {{buf.id, 0}}, {1, 512});
  rig.table.copy_h2d({buf.id, 0}, bytes, std::nullopt);
  rig.table.copy_d2h(bytes, {buf.id, 0}, std::nullopt);
  rig.table.copy_d2d({m.id, 0}, {buf.id, 0}, 16, std::nullopt);
  rig.table.synchronize();
  rig.table.page_read(m.id, 0, 8, PageSide::Host);
  rig.table.page_write(m.id, 0, bytes, PageSide::Host);

  CHECK(rig.log.size() == logged);
}

TEST_CASE("log: failed calls append nothing") {
  Rig rig(4096);
  expect_errc(Errc::OutOfArena, [&] { rig.table.alloc(AllocationKind::Device, kMiB); });
  expect_errc(Errc::UnknownId, [&] { rig.table.free(5); });
  expect_errc(Errc::UnknownId, [&] { rig.table.stream_destroy(5); });
  expect_errc(Errc::InvalidArgument, [&] { rig.table.alloc(AllocationKind::Device, 0); });
  CHECK(rig.log.size() == 0);

  for (int i = 0; i < 128; ++i) rig.table.stream_create();
  expect_errc(Errc::StreamLimitExceeded, [&] { rig.table.stream_create(); });
  CHECK(rig.log.size() == 128);
}

TEST_CASE("active_set: equals brute-force replay of the log") {
  std::mt19937_64 rng(0xAC71BE);
  for (int round = 0; round < 50; ++round) {
    Rig rig(kMiB);
    SequenceDriver driver(rig.table, rng);
    driver.run(200);

    const auto log = rig.log.snapshot();
    // Brute force: walk the log keeping an ordered map of what's still live.
    std::vector<CallLogEntry> live;
    for (const auto& e : log) {
      if (e.op == LogOp::Alloc) live.push_back(e);
      if (e.op == LogOp::Free)
        live.erase(std::find_if(live.begin(), live.end(),
                                [&](const CallLogEntry& a) { return a.id == e.id; }));
    }

    const auto got = active_set(log);
    REQUIRE(got.size() == live.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].id == live[i].id);
      CHECK(static_cast<uint8_t>(got[i].kind) == live[i].kind);
      CHECK(got[i].size == live[i].size);
      CHECK(got[i].address == live[i].address);
      CHECK_FALSE(got[i].freed);
    }
  }
}

TEST_CASE("active_set: empty log and simple alloc-free shapes") {
  CHECK(active_set({}).empty());
  Rig rig;
  const auto a = rig.table.alloc(AllocationKind::Device, 256);
  const auto b = rig.table.alloc(AllocationKind::Device, 256);
  rig.table.free(a.id);
  const auto set = active_set(rig.log.snapshot());
  REQUIRE(set.size() == 1);
  CHECK(set[0].id == b.id);
}

TEST_CASE("dispatch: every call name has exactly one counted entry") {
  Rig rig;
  const auto buf = rig.table.alloc(AllocationKind::Device, 512);
  const auto m = rig.table.alloc(AllocationKind::Managed, 4096);
  const uint64_t s = rig.table.stream_create();
  const uint64_t h = rig.table.register_fat_binary(standard_kernels());
  rig.table.launch(s, "fill8", {{buf.id, 0}}, {1, 512});
  std::vector<uint8_t> bytes(8, 2);
  rig.table.copy_h2d({buf.id, 0}, bytes, std::nullopt);
  rig.table.copy_d2h(bytes, {buf.id, 0}, std::nullopt);
  rig.table.copy_d2d({m.id, 0}, {buf.id, 0}, 8, std::nullopt);
  rig.table.synchronize();
  rig.table.page_read(m.id, 0, 4, PageSide::Host);
  rig.table.page_write(m.id, 0, bytes, PageSide::Host);
  rig.table.free(m.id);
  rig.table.stream_destroy(s);
  rig.table.unregister_fat_binary(h);

  const auto counts = rig.table.call_counts();
  REQUIRE(counts.size() == kCallCount);
  for (size_t c = 0; c < kCallCount; ++c) {
    const auto* name = call_name(static_cast<CallId>(c));
    REQUIRE(counts.count(name) == 1);
    CHECK(counts.at(name) >= 1);
    CHECK(counts.at(name) == rig.table.call_count(static_cast<CallId>(c)));
  }
  CHECK(counts.at("alloc") == 2);
  CHECK(counts.at("launch_kernel") == 1);
}

TEST_CASE("dispatch: table calls behave exactly like direct device calls") {
  DeviceContext direct(7, kMiB);
  Rig rig(kMiB, TableMode::Direct, 7);
  for (uint64_t size : {1024ull, 100ull, 4096ull, 50ull}) {
    const auto d = direct.alloc(AllocationKind::Device, size);
    const auto t = rig.table.alloc(AllocationKind::Device, size);
    CHECK(d.id == t.id);
    CHECK(d.address == t.address);
  }
  direct.free(2);
  rig.table.free(2);
  CHECK(direct.alloc(AllocationKind::Device, 64).address ==
        rig.table.alloc(AllocationKind::Device, 64).address);
  CHECK(direct.free_holes() == rig.ctx.free_holes());
}

TEST_CASE("lock linearization: concurrent allocs log a replayable serial order") {
  constexpr int kThreads = 8;
  constexpr int kAllocsPerThread = 100;
  Rig rig(8 * kMiB);

  SUBCASE("pure allocation storm") {
    std::vector<std::thread> workers;
    for (int t = 0; t < kThreads; ++t)
      workers.emplace_back([&, t] {
        for (int i = 0; i < kAllocsPerThread; ++i)
          rig.table.alloc(AllocationKind::Device, 256 * (1 + (t + i) % 8));
      });
    for (auto& w : workers) w.join();

    const auto log = rig.log.snapshot();
    REQUIRE(log.size() == kThreads * kAllocsPerThread);
    for (size_t i = 0; i < log.size(); ++i) REQUIRE(log[i].seq == i + 1);
  }

  SUBCASE("mixed alloc and free traffic") {
    std::vector<std::thread> workers;
    for (int t = 0; t < kThreads; ++t)
      workers.emplace_back([&, t] {
        std::mt19937_64 rng(1000 + t);
        std::vector<uint64_t> mine;
        for (int i = 0; i < 150; ++i) {
          const uint64_t r = rng();
          if (mine.empty() || r % 5 != 0) {
            mine.push_back(rig.table.alloc(AllocationKind::Device, 1 + (r >> 8) % 2048).id);
          } else {
            const size_t pick = (r >> 8) % mine.size();
            rig.table.free(mine[pick]);
            mine.erase(mine.begin() + static_cast<ptrdiff_t>(pick));
          }
        }
      });
    for (auto& w : workers) w.join();
  }

  // Either way the recorded order must replay to the recorded addresses.
  DeviceContext fresh(7, 8 * kMiB);
  CHECK_NOTHROW(replay_log(fresh, rig.log.snapshot()));
}

TEST_CASE("regions: same-half same-permission ranges merge") {
  RegionMap map;
  map.register_range(0x1000, 0x1000, Half::Upper, kPermRead | kPermWrite);
  map.register_range(0x2000, 0x1000, Half::Upper, kPermRead | kPermWrite);
  const auto regions = map.regions();
  REQUIRE(regions.size() == 1);
  CHECK(regions[0] == Region{0x1000, 0x2000, Half::Upper, kPermRead | kPermWrite});

  SUBCASE("overlap with identical permissions merges to the union") {
    map.register_range(0x1800, 0x2000, Half::Upper, kPermRead | kPermWrite);
    const auto merged = map.regions();
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].start == 0x1000);
    CHECK(merged[0].length == 0x2800);
  }
  SUBCASE("different permissions stay separate when disjoint") {
    map.register_range(0x4000, 0x1000, Half::Upper, kPermRead);
    CHECK(map.regions().size() == 2);
  }
  SUBCASE("different permissions may not overlap") {
    expect_errc(Errc::InvalidArgument,
                [&] { map.register_range(0x2800, 0x1000, Half::Upper, kPermRead); });
  }
  SUBCASE("the other half may not overlap") {
    expect_errc(Errc::HalfConflict,
                [&] { map.register_range(0x2f00, 0x1000, Half::Lower, kPermRead | kPermWrite); });
  }
}

TEST_CASE("regions: classification is Upper, Lower, or Unmapped") {
  Rig rig;  // the dispatch table claims the arena as Lower at construction
  CHECK(rig.regions.classify(kArenaBase) == Classification::Lower);
  CHECK(rig.regions.classify(kArenaBase + kMiB - 1) == Classification::Lower);
  CHECK(rig.regions.classify(kArenaBase + kMiB) == Classification::Unmapped);

  rig.regions.register_range(0x10000, 0x1000, Half::Upper, kPermRead | kPermWrite);
  CHECK(rig.regions.classify(0x10000) == Classification::Upper);
  CHECK(rig.regions.classify(0x10fff) == Classification::Upper);
  CHECK(rig.regions.classify(0x11000) == Classification::Unmapped);
  CHECK(rig.regions.classify(0x500) == Classification::Unmapped);

  // Every address the allocator hands out classifies Lower.
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto rec = rig.table.alloc(AllocationKind::Device, 1 + rng() % 4096);
    CHECK(rig.regions.classify(rec.address) == Classification::Lower);
    CHECK(rig.regions.classify(rec.address + rec.size - 1) == Classification::Lower);
  }
}

TEST_CASE("proxy: bitwise-identical results to direct mode") {
  auto run = [](TableMode mode) {
    Rig rig(kMiB, mode, 11);
    auto& api = rig.table;
    api.register_fat_binary(standard_kernels());
    const uint64_t s1 = api.stream_create();
    const uint64_t s2 = api.stream_create();
    const auto dev = api.alloc(AllocationKind::Device, 8192);
    const auto pin = api.alloc(AllocationKind::PinnedHost, 1024);
    const auto man = api.alloc(AllocationKind::Managed, 2 * 4096);

    std::vector<uint8_t> seedbytes(8192);
    for (size_t i = 0; i < seedbytes.size(); ++i) seedbytes[i] = static_cast<uint8_t>(mix64(i));
    api.copy_h2d({dev.id, 0}, seedbytes, std::nullopt);
    api.launch(s1, "affine8", {{dev.id, 0}}, {13, 7, 4096});
    api.launch(s2, "add8", {{dev.id, 4096}}, {91, 4096});
    api.copy_d2d({man.id, 100}, {dev.id, 50}, 1000, s1);
    api.copy_h2d({pin.id, 0}, std::span(seedbytes).first(1024), s2);
    api.synchronize();
    api.page_write(man.id, 4096, std::span(seedbytes).first(256), PageSide::Host);
    api.launch(s1, "add8", {{man.id, 4096}}, {3, 512});
    api.synchronize();

    std::vector<uint8_t> out;
    auto append = [&](std::vector<uint8_t> v) { out.insert(out.end(), v.begin(), v.end()); };
    append(rig.ctx.device_read_bytes(dev.id, 0, 8192));
    append(rig.ctx.device_read_bytes(pin.id, 0, 1024));
    append(api.page_read(man.id, 0, 2 * 4096, PageSide::Host));
    return out;
  };
  CHECK(run(TableMode::Direct) == run(TableMode::Proxy));
}

TEST_CASE("proxy: async device-to-host results surface at synchronize") {
  Rig rig(kMiB, TableMode::Proxy);
  const auto dev = rig.table.alloc(AllocationKind::Device, 256);
  const uint64_t s = rig.table.stream_create();
  std::vector<uint8_t> pattern(64, 0xAD);
  rig.table.copy_h2d({dev.id, 0}, pattern, std::nullopt);

  std::vector<uint8_t> dst(64, 0);
  rig.table.copy_d2h(dst, {dev.id, 0}, s);
  rig.table.synchronize();
  CHECK(dst == pattern);
}
