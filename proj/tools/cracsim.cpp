#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "cracsim/harness.hpp"
#include "cracsim/image.hpp"
#include "cracsim/kernels.hpp"

namespace {

using namespace cracsim;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitImageCorrupt = 3;
constexpr int kExitReplayDivergence = 4;

int usage_error(const std::string& message) {
  std::cerr << "error: " << message << "\n";
  return kExitUsage;
}

void print_digest(uint64_t digest) {
  std::printf("digest=0x%016llx\n", static_cast<unsigned long long>(digest));
}

void dump_log(CallLog& log) {
  for (const auto& entry : log.snapshot()) std::cout << format_log_entry(entry) << "\n";
}

struct SpecFlags {
  std::string workload;
  uint32_t streams = 0;
  uint64_t iters = 0;
  double data_mb = 0.0;
  uint64_t data_bytes = 0;
  uint64_t seed = 0;
  CLI::Option* streams_opt = nullptr;
  CLI::Option* iters_opt = nullptr;
  CLI::Option* data_mb_opt = nullptr;
  CLI::Option* data_bytes_opt = nullptr;
  CLI::Option* seed_opt = nullptr;

  void attach(CLI::App& cmd) {
    cmd.add_option("--workload", workload, "workload name")
        ->required()
        ->check(CLI::IsMember(workload_names()));
    streams_opt = cmd.add_option("--streams", streams, "stream count (1..128)");
    iters_opt = cmd.add_option("--iters", iters, "iterations / total tasks");
    data_mb_opt = cmd.add_option("--data-mb", data_mb, "working-set size in MiB");
    data_bytes_opt =
        cmd.add_option("--data-bytes", data_bytes, "working-set size in bytes (wins over --data-mb)");
    seed_opt = cmd.add_option("--seed", seed, "workload seed (wins over CRACSIM_SEED)");
  }

  // Flag > CRACSIM_SEED env > per-workload default.
  WorkloadSpec resolve() const {
    WorkloadSpec spec = default_spec(*parse_workload(workload));
    if (const char* env = std::getenv("CRACSIM_SEED"); env && *env)
      spec.seed = std::strtoull(env, nullptr, 0);
    if (seed_opt->count()) spec.seed = seed;
    if (streams_opt->count()) spec.streams = streams;
    if (iters_opt->count()) spec.iterations = iters;
    if (data_mb_opt->count())
      spec.data_bytes = static_cast<uint64_t>(data_mb * static_cast<double>(1ull << 20));
    if (data_bytes_opt->count()) spec.data_bytes = data_bytes;
    return spec;
  }
};

int cmd_run(const WorkloadSpec& spec, RunMode mode, const std::string& image,
            std::optional<double> ckpt_after, const std::string& ckpt_on_file, bool compress,
            bool want_log) {
  if (mode == RunMode::Native) {
    if (ckpt_after || !ckpt_on_file.empty())
      return usage_error("checkpoint triggers require --mode direct or proxy");
    DeviceContext ctx(spec.seed, required_arena_bytes(spec));
    PassthroughApi api(ctx);
    std::vector<uint8_t> state;
    WorkloadRun run(api, state, spec);
    run.run_to_end();
    print_digest(run.digest());
    return kExitOk;
  }

  if ((ckpt_after || !ckpt_on_file.empty()) && image.empty())
    return usage_error("checkpoint triggers require --image");

  Session session(session_config_for(
      spec, mode == RunMode::Proxy ? TableMode::Proxy : TableMode::Direct));
  WorkloadRun run(session.api(), session.app_state(), spec);

  // Triggers are checked between steps; a checkpoint lands on the first step
  // boundary at or after the trigger and the run continues.
  const auto start = std::chrono::steady_clock::now();
  bool time_fired = false;
  bool file_fired = false;
  while (!run.done()) {
    if (ckpt_after && !time_fired) {
      const double elapsed = std::chrono::duration<double>(
          std::chrono::steady_clock::now() - start).count();
      if (elapsed >= *ckpt_after) {
        checkpoint_to_file(session, image, compress);
        time_fired = true;
        std::fprintf(stderr, "checkpoint written to %s at step %llu\n", image.c_str(),
                     static_cast<unsigned long long>(run.cursor()));
      }
    }
    if (!ckpt_on_file.empty() && !file_fired && std::filesystem::exists(ckpt_on_file)) {
      checkpoint_to_file(session, image, compress);
      file_fired = true;
      std::fprintf(stderr, "checkpoint written to %s at step %llu\n", image.c_str(),
                   static_cast<unsigned long long>(run.cursor()));
    }
    run.run_step();
  }
  if (ckpt_after && !time_fired)
    std::fprintf(stderr, "warning: run finished before --ckpt-after elapsed; no image written\n");
  if (!ckpt_on_file.empty() && !file_fired)
    std::fprintf(stderr, "warning: trigger file never appeared; no image written\n");

  if (want_log) dump_log(session.log());
  print_digest(run.digest());
  return kExitOk;
}

int cmd_restart(const std::string& image, RunMode mode, bool want_log) {
  if (mode == RunMode::Native) return usage_error("restart runs under the engine");
  Session session = restart_from_file(
      image, standard_catalog(), mode == RunMode::Proxy ? TableMode::Proxy : TableMode::Direct);
  WorkloadRun run(session.api(), session.app_state());
  run.run_to_end();
  if (want_log) dump_log(session.log());
  print_digest(run.digest());
  return kExitOk;
}

int cmd_bench(const WorkloadSpec& spec, RunMode mode, uint32_t repeats) {
  if (!bench_supported(spec.name))
    return usage_error("bench supports blas_dot, blas_gemv, blas_gemm, stream_overlap");
  if (mode == RunMode::Native) return usage_error("bench compares a mode against native");
  std::cout << bench_report_json(run_bench(spec, mode, repeats));
  return kExitOk;
}

int cmd_inspect(const std::string& image) {
  const ImageSummary s = summarize_image(read_file_bytes(image));
  std::printf("magic: %.8s (version %u)\n", kImageMagic, s.version);
  std::printf("compressed: %s\n", s.was_compressed ? "yes" : "no");
  std::printf("file bytes: %llu\n", static_cast<unsigned long long>(s.file_bytes));
  std::printf("sections:\n");
  for (const auto& sec : s.sections)
    std::printf("  %u %-15s len %-12llu crc 0x%08x\n", static_cast<unsigned>(sec.tag),
                section_tag_name(sec.tag), static_cast<unsigned long long>(sec.length), sec.crc);
  std::printf("log entries: %llu\n", static_cast<unsigned long long>(s.log_entries));
  std::printf("active allocations: %llu\n", static_cast<unsigned long long>(s.active_allocations));
  std::printf("payload bytes: %llu\n", static_cast<unsigned long long>(s.payload_bytes));
  std::printf("uvm page bytes: %llu\n", static_cast<unsigned long long>(s.uvm_page_bytes));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"checkpoint-restart engine for a simulated accelerator runtime"};
  app.require_subcommand(1);

  const std::vector<std::string> modes = {"native", "direct", "proxy"};

  auto* run = app.add_subcommand("run", "run a workload, optionally checkpointing");
  SpecFlags run_spec;
  run_spec.attach(*run);
  std::string run_mode = "direct", run_image, run_trigger_file;
  double ckpt_after = 0.0;
  bool run_compress = false, run_dump_log = false;
  run->add_option("--mode", run_mode, "native | direct | proxy")->check(CLI::IsMember(modes));
  run->add_option("--image", run_image, "checkpoint image path");
  auto* ckpt_after_opt =
      run->add_option("--ckpt-after", ckpt_after, "checkpoint after this many seconds");
  run->add_option("--ckpt-on-file", run_trigger_file, "checkpoint when this file appears");
  run->add_flag("--compress", run_compress, "compress the written image");
  run->add_flag("--dump-log", run_dump_log, "print the call log before the digest");

  auto* restart = app.add_subcommand("restart", "resume a workload from an image");
  std::string restart_image, restart_mode = "direct";
  bool restart_dump_log = false;
  restart->add_option("--image", restart_image, "checkpoint image path")->required();
  restart->add_option("--mode", restart_mode, "direct | proxy")->check(CLI::IsMember(modes));
  restart->add_flag("--dump-log", restart_dump_log, "print the call log before the digest");

  auto* bench = app.add_subcommand("bench", "compare a mode against the native baseline");
  SpecFlags bench_spec;
  bench_spec.attach(*bench);
  std::string bench_mode = "direct";
  uint32_t repeats = 10;
  bench->add_option("--mode", bench_mode, "direct | proxy")->check(CLI::IsMember(modes));
  bench->add_option("--repeats", repeats, "measurement repeats")->check(CLI::Range(1, 1000));

  auto* inspect = app.add_subcommand("inspect", "describe a checkpoint image");
  std::string inspect_image;
  inspect->add_option("--image", inspect_image, "checkpoint image path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (run->parsed())
      return cmd_run(run_spec.resolve(), *parse_run_mode(run_mode), run_image,
                     ckpt_after_opt->count() ? std::optional<double>(ckpt_after) : std::nullopt,
                     run_trigger_file, run_compress, run_dump_log);
    if (restart->parsed())
      return cmd_restart(restart_image, *parse_run_mode(restart_mode), restart_dump_log);
    if (bench->parsed())
      return cmd_bench(bench_spec.resolve(), *parse_run_mode(bench_mode), repeats);
    if (inspect->parsed()) return cmd_inspect(inspect_image);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.code() == Errc::ImageCorrupt) return kExitImageCorrupt;
    if (e.code() == Errc::ReplayDivergence) return kExitReplayDivergence;
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}
