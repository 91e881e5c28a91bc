#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <random>
#include <semaphore>
#include <thread>

#include "cracsim/ckpt_engine.hpp"
#include "cracsim/kernels.hpp"
#include "support/checks.hpp"
#include "support/sequence_gen.hpp"

using namespace cracsim;

namespace {

constexpr uint64_t kMiB = 1ull << 20;

SessionConfig small_config(uint64_t seed = 3) {
  SessionConfig cfg;
  cfg.seed = seed;
  cfg.arena_bytes = kMiB;
  return cfg;
}

std::vector<uint8_t> patterned(uint64_t n, uint8_t salt) {
  std::vector<uint8_t> v(n);
  for (uint64_t i = 0; i < n; ++i) v[i] = static_cast<uint8_t>(mix64(i + salt));
  return v;
}

// Deterministic single-threaded op mix used by the twin-session comparisons.
void drive_ops(RuntimeApi& api, int ops, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<uint64_t> live;
  api.register_fat_binary(standard_kernels());
  const uint64_t s = api.stream_create();
  for (int i = 0; i < ops; ++i) {
    const uint64_t r = rng();
    switch (r % 6) {
      case 0:
      case 1:
        live.push_back(api.alloc(static_cast<AllocationKind>(1 + (r >> 8) % 3),
                                 256 * (1 + (r >> 16) % 16)).id);
        break;
      case 2:
        if (!live.empty()) {
          const size_t pick = (r >> 8) % live.size();
          api.synchronize();  // queued launches may still reference the victim
          api.free(live[pick]);
          live.erase(live.begin() + static_cast<ptrdiff_t>(pick));
        }
        break;
      case 3:
        if (!live.empty())
          api.launch(s, "fill8", {{live[(r >> 8) % live.size()], 0}}, {(r >> 16) & 0xFF, 64});
        break;
      case 4:
        if (!live.empty()) {
          const auto bytes = patterned(64, static_cast<uint8_t>(r));
          api.copy_h2d({live[(r >> 8) % live.size()], 0}, bytes, std::nullopt);
        }
        break;
      case 5:
        api.synchronize();
        break;
    }
  }
  api.synchronize();
}

}  // namespace

TEST_CASE("checkpoint captures exactly the bytes the app wrote") {
  Session s(small_config());
  const auto rec = s.api().alloc(AllocationKind::Device, 1024);
  s.api().copy_h2d({rec.id, 0}, std::vector<uint8_t>(1024, 0xAB), std::nullopt);

  const Snapshot snap = checkpoint(s);
  REQUIRE(snap.payloads.size() == 1);
  CHECK(snap.payloads[0].id == rec.id);
  CHECK(snap.payloads[0].bytes == std::vector<uint8_t>(1024, 0xAB));
  CHECK(snap.managed.empty());
  CHECK(snap.meta.seed == 3);
  CHECK(snap.meta.arena_bytes == kMiB);
}

TEST_CASE("freed allocations never reach the image") {
  Session s(small_config());
  const auto a = s.api().alloc(AllocationKind::Device, 512);
  const auto b = s.api().alloc(AllocationKind::PinnedHost, 300);
  s.api().free(a.id);

  const Snapshot snap = checkpoint(s);
  REQUIRE(snap.payloads.size() == 1);
  CHECK(snap.payloads[0].id == b.id);
  CHECK(snap.payloads[0].bytes.size() == 300);
  CHECK(snap.log.size() == 3);  // the free stays in the log, its bytes do not
}

TEST_CASE("an idle session checkpoints to an empty snapshot") {
  Session s(small_config(9));
  const Snapshot snap = checkpoint(s);
  CHECK(snap.log.empty());
  CHECK(snap.payloads.empty());
  CHECK(snap.managed.empty());
  CHECK(snap.streams.empty());
  CHECK(snap.binaries.empty());
  CHECK(snap.app_state.empty());
  CHECK(encode_image(snap).size() == 188);
}

TEST_CASE("replaying a random session's log reproduces every address") {
  std::mt19937_64 rng(0x5EED);
  for (int round = 0; round < 100; ++round) {
    Session s(small_config(round));
    SequenceDriver driver(s.api(), rng);
    driver.run(150);

    // A different device seed must not matter: placement is a pure function
    // of the call order.
    DeviceContext fresh(9999 - round, kMiB);
    const auto log = s.log().snapshot();
    const auto addresses = replay_log(fresh, log);
    for (const auto& e : log)
      if (e.op == LogOp::Alloc) CHECK(addresses.at(e.seq) == e.address);
    CHECK(fresh.free_holes() == s.device().free_holes());
  }
}

TEST_CASE("a tampered address in the log is a replay divergence") {
  Session s(small_config());
  s.api().alloc(AllocationKind::Device, 512);
  s.api().alloc(AllocationKind::Device, 512);
  auto log = s.log().snapshot();
  log[1].address += kAlign;  // still aligned, still in-arena, just wrong

  DeviceContext fresh(3, kMiB);
  expect_errc(Errc::ReplayDivergence, [&] { replay_log(fresh, log); });
}

TEST_CASE("checkpoint leaves the session running and unchanged") {
  auto cfg = small_config(21);
  Session a(cfg);
  Session b(cfg);

  drive_ops(a.api(), 300, 77);
  const Snapshot snap = checkpoint(a);
  drive_ops(b.api(), 300, 77);  // the twin never checkpoints

  CHECK(a.device().debug_dump() == b.device().debug_dump());

  // And the session keeps working identically afterwards.
  const auto ra = a.api().alloc(AllocationKind::Device, 2048);
  const auto rb = b.api().alloc(AllocationKind::Device, 2048);
  CHECK(ra.id == rb.id);
  CHECK(ra.address == rb.address);
  CHECK(snap.log.size() < a.log().size());
}

TEST_CASE("restart rebuilds allocator structure, bytes, streams, and registry") {
  Session s(small_config(4));
  auto& api = s.api();
  api.register_fat_binary(standard_kernels());
  const uint64_t s1 = api.stream_create();
  api.stream_create();
  const uint64_t s3 = api.stream_create();
  api.stream_destroy(2);

  const auto dev = api.alloc(AllocationKind::Device, 3000);
  const auto pin = api.alloc(AllocationKind::PinnedHost, 512);
  const auto man = api.alloc(AllocationKind::Managed, 2 * kPageSize + 100);
  const auto gone = api.alloc(AllocationKind::Device, 4096);
  api.free(gone.id);

  api.copy_h2d({dev.id, 0}, patterned(3000, 1), std::nullopt);
  api.copy_h2d({pin.id, 0}, patterned(512, 2), std::nullopt);
  api.page_write(man.id, 0, patterned(2 * kPageSize + 100, 3), PageSide::Host);
  api.launch(s1, "add8", {{man.id, 0}}, {7, 100});  // page 0 migrates to device
  api.synchronize();
  s.app_state() = {1, 2, 3, 4, 5};

  const Snapshot snap = checkpoint(s);
  Session r = restart(snap, standard_catalog());

  CHECK(r.device().live_records() == s.device().live_records());
  CHECK(r.device().free_holes() == s.device().free_holes());
  CHECK(r.device().live_stream_ids() == std::vector<uint64_t>{1, 3});
  CHECK(r.device().live_stream_ids() == s.device().live_stream_ids());
  CHECK(r.device().registered_binaries() == s.device().registered_binaries());
  CHECK(r.app_state() == s.app_state());

  for (const auto& rec : s.device().live_records()) {
    CHECK(r.device().read_raw(rec.address, rec.size) == s.device().read_raw(rec.address, rec.size));
    if (rec.kind == AllocationKind::Managed) {
      const auto pa = s.device().managed_pages(rec.id);
      const auto pb = r.device().managed_pages(rec.id);
      REQUIRE(pa.size() == pb.size());
      for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].device_resident == pb[i].device_resident);
        CHECK(pa[i].dirty == pb[i].dirty);
      }
    }
  }

  // Stream s3 kept its identity and fresh ids continue past the old ceiling.
  CHECK(r.api().stream_create() == s3 + 1);
  CHECK(r.api().alloc(AllocationKind::Device, 64).id == gone.id + 1);
}

TEST_CASE("checkpoint of a restart equals the original checkpoint") {
  Session s(small_config(8));
  drive_ops(s.api(), 400, 123);
  s.app_state() = patterned(99, 9);

  const Snapshot first = checkpoint(s);
  Session r = restart(first, standard_catalog());
  const Snapshot second = checkpoint(r);
  CHECK(first == second);

  // And the image bytes agree too.
  CHECK(encode_image(first) == encode_image(second));
}

TEST_CASE("restart of an idle checkpoint behaves like a fresh session") {
  Session fresh(small_config(30));
  Session r = restart(checkpoint(fresh), standard_catalog());
  CHECK(r.device().debug_dump() == fresh.device().debug_dump());
  CHECK(r.api().alloc(AllocationKind::Device, 100).address == kArenaBase);
}

TEST_CASE("restart resolves kernel bodies by name and missing bodies fail") {
  Session s(small_config());
  s.api().register_fat_binary(standard_kernels());
  const auto rec = s.api().alloc(AllocationKind::Device, 256);
  const Snapshot snap = checkpoint(s);

  SUBCASE("a complete catalog restores a launchable session") {
    Session r = restart(snap, standard_catalog());
    const uint64_t st = r.api().stream_create();
    r.api().launch(st, "fill8", {{rec.id, 0}}, {0x55, 256});
    r.api().synchronize();
    CHECK(r.device().device_read_bytes(rec.id, 0, 256) == std::vector<uint8_t>(256, 0x55));
  }
  SUBCASE("a missing body is refused up front") {
    expect_errc(Errc::UnknownKernelBody, [&] { restart(snap, KernelCatalog{}); });
  }
}

TEST_CASE("unregistered binaries replay as placeholders so handles line up") {
  Session s(small_config());
  const uint64_t h1 = s.api().register_fat_binary(
      {{"ephemeral", 1, 1, [](KernelArgs&) {}}});
  s.api().unregister_fat_binary(h1);
  const uint64_t h2 = s.api().register_fat_binary(standard_kernels());
  CHECK(h2 == h1 + 1);

  Session r = restart(checkpoint(s), standard_catalog());
  CHECK(r.device().registered_binaries() == s.device().registered_binaries());
  CHECK_FALSE(r.device().kernel_registered("ephemeral"));
  CHECK(r.device().kernel_registered("fill8"));
  CHECK(r.api().register_fat_binary({}) == h2 + 1);
}

TEST_CASE("image files round trip the whole engine, compressed included") {
  namespace fs = std::filesystem;
  Session s(small_config(77));
  drive_ops(s.api(), 200, 55);
  s.app_state() = patterned(40, 4);

  const fs::path p = fs::temp_directory_path() / "engine_roundtrip.ckpt";
  for (bool compress : {false, true}) {
    checkpoint_to_file(s, p, compress);
    CHECK(is_compressed_image(read_file_bytes(p)) == compress);
    Session r = restart_from_file(p, standard_catalog());
    CHECK(r.device().live_records() == s.device().live_records());
    for (const auto& rec : s.device().live_records())
      CHECK(r.device().read_raw(rec.address, rec.size) ==
            s.device().read_raw(rec.address, rec.size));
    CHECK(r.app_state() == s.app_state());
  }
  fs::remove(p);
}

TEST_CASE("a kernel stuck on the device makes checkpoint time out, then recover") {
  auto cfg = small_config();
  cfg.quiesce_timeout = std::chrono::milliseconds(50);
  Session s(cfg);

  std::binary_semaphore entered{0}, release{0};
  s.api().register_fat_binary({{"stall", 0, 0, [&](KernelArgs&) {
                                  entered.release();
                                  release.acquire();
                                }}});
  const uint64_t st = s.api().stream_create();
  s.api().launch(st, "stall", {}, {});

  std::thread worker([&] { s.api().synchronize(); });
  entered.acquire();  // the body is now blocking inside the worker's call
  expect_errc(Errc::QuiesceTimeout, [&] { checkpoint(s); });

  release.release();
  worker.join();
  const Snapshot snap = checkpoint(s);  // drained device checkpoints cleanly
  CHECK(snap.streams == std::vector<uint64_t>{st});
  CHECK(decode_image(encode_image(snap)) == snap);
}

TEST_CASE("checkpoints interleaved with live traffic never corrupt state") {
  auto cfg = small_config(61);
  Session a(cfg);
  Session b(cfg);

  std::thread worker([&] { drive_ops(a.api(), 600, 4242); });
  int snapshots = 0;
  for (int i = 0; i < 40; ++i) {
    const Snapshot snap = checkpoint(a);
    CHECK(decode_image(encode_image(snap)) == snap);  // always internally consistent
    ++snapshots;
  }
  worker.join();
  CHECK(snapshots == 40);

  drive_ops(b.api(), 600, 4242);
  const Snapshot end_a = checkpoint(a);
  const Snapshot end_b = checkpoint(b);
  CHECK(end_a == end_b);
  CHECK(a.device().debug_dump() == b.device().debug_dump());
}

TEST_CASE("a checkpoint taken mid-pipeline completes the pending work first") {
  Session s(small_config());
  auto& api = s.api();
  api.register_fat_binary(standard_kernels());
  const uint64_t st = api.stream_create();
  const auto rec = api.alloc(AllocationKind::Device, 1024);
  api.launch(st, "fill8", {{rec.id, 0}}, {9, 1024});
  api.launch(st, "add8", {{rec.id, 0}}, {1, 1024});
  // No synchronize: both tasks are still queued when the checkpoint arrives.
  const Snapshot snap = checkpoint(s);

  REQUIRE(snap.payloads.size() == 1);
  CHECK(snap.payloads[0].bytes == std::vector<uint8_t>(1024, 10));
  CHECK(s.device().stream_pending(st) == 0);

  Session r = restart(snap, standard_catalog());
  CHECK(r.device().device_read_bytes(rec.id, 0, 1024) == std::vector<uint8_t>(1024, 10));
}
