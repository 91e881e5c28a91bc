#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cracsim/ckpt_engine.hpp"

namespace cracsim {

// --- run modes ---------------------------------------------------------------

// Native calls the device directly (counting only, no log, no checkpoint
// support); Direct and Proxy run under the dispatch table.
enum class RunMode : uint8_t { Native = 0, Direct = 1, Proxy = 2 };

constexpr const char* run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::Native: return "native";
    case RunMode::Direct: return "direct";
    case RunMode::Proxy: return "proxy";
  }
  return "?";
}

std::optional<RunMode> parse_run_mode(std::string_view name);

// --- workloads ---------------------------------------------------------------

enum class WorkloadName : uint8_t {
  StreamOverlap = 0,
  UvmTasks = 1,
  BlasDot = 2,
  BlasGemv = 3,
  BlasGemm = 4,
  AllocChurn = 5,
};

constexpr const char* workload_name(WorkloadName w) {
  switch (w) {
    case WorkloadName::StreamOverlap: return "stream_overlap";
    case WorkloadName::UvmTasks: return "uvm_tasks";
    case WorkloadName::BlasDot: return "blas_dot";
    case WorkloadName::BlasGemv: return "blas_gemv";
    case WorkloadName::BlasGemm: return "blas_gemm";
    case WorkloadName::AllocChurn: return "alloc_churn";
  }
  return "?";
}

std::optional<WorkloadName> parse_workload(std::string_view name);
std::vector<std::string> workload_names();

struct WorkloadSpec {
  WorkloadName name = WorkloadName::StreamOverlap;
  uint32_t streams = 4;       // used by stream_overlap and uvm_tasks; 1..128
  uint64_t data_bytes = 1ull << 20;
  uint64_t iterations = 100;  // uvm_tasks: total task count
  uint64_t seed = 1;
};

// Paper-shaped defaults per workload (uvm_tasks: 128 streams, 1280 tasks,
// seed 12701).
WorkloadSpec default_spec(WorkloadName name);

// Arena large enough for the workload's device footprint, with slack so
// checkpoint-restart never changes feasibility.
uint64_t required_arena_bytes(const WorkloadSpec& spec);
SessionConfig session_config_for(const WorkloadSpec& spec, TableMode mode);

// Exact size of the app_state blob a fresh run lays out for `spec`.
uint64_t app_state_bytes(const WorkloadSpec& spec);
// Parses the spec back out of an app_state blob (what restart resumes from).
WorkloadSpec spec_from_app_state(std::span<const uint8_t> state);

// A workload as a resumable step machine. All progress lives in the
// app_state blob (cursor, digest accumulator, buffer ids, host mirrors), so
// a session checkpointed at any step boundary resumes mid-workload with no
// driver-side state. Step 0 allocates and uploads; the last step folds the
// final readback into the digest.
class WorkloadRun {
 public:
  // Fresh run: sizes and initializes `app_state` for `spec`.
  WorkloadRun(RuntimeApi& api, std::vector<uint8_t>& app_state, const WorkloadSpec& spec);
  // Resume from an app_state laid out by a previous run.
  WorkloadRun(RuntimeApi& api, std::vector<uint8_t>& app_state);

  const WorkloadSpec& spec() const { return spec_; }
  uint64_t cursor() const;
  uint64_t total_steps() const;
  bool done() const { return cursor() >= total_steps(); }
  void run_step();
  void run_to_end();

  // Running fold of every readback; the workload's output digest once done().
  uint64_t digest() const;

 private:
  uint64_t r64(uint64_t off) const;
  void w64(uint64_t off, uint64_t v);
  std::span<uint8_t> payload(uint64_t off, uint64_t n);
  void fold(std::span<const uint8_t> bytes);

  void step_stream_overlap(uint64_t s);
  void step_uvm_tasks(uint64_t s);
  void step_blas(uint64_t s);
  void step_alloc_churn(uint64_t s);

  RuntimeApi& api_;
  std::vector<uint8_t>& state_;
  WorkloadSpec spec_;
};

// --- metrics -----------------------------------------------------------------

// (e_run − e_native) / e_native × 100.
double overhead_percent(double e_run_seconds, double e_native_seconds);

// A kernel launch expands to three runtime calls at the dispatch boundary;
// every other call counts once.
uint64_t total_calls(const std::map<std::string, uint64_t>& call_counts);
double cps(const std::map<std::string, uint64_t>& call_counts, double duration_seconds);

// --- timing ------------------------------------------------------------------

struct RunResult {
  double e_seconds = 0.0;
  uint64_t digest = 0;
  std::map<std::string, uint64_t> call_counts;
};

// Runs the workload start to finish in one mode and times the whole drive.
RunResult run_workload(const WorkloadSpec& spec, RunMode mode);

struct SampleStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n-1)
  std::vector<double> samples;
};

SampleStats sample_stats(const std::vector<double>& samples);

struct TimingReport {
  WorkloadSpec spec;
  RunMode mode = RunMode::Direct;  // the instrumented mode measured
  uint32_t threads = 1;            // calls issued from this many threads
  SampleStats e_native;
  SampleStats e_run;  // instrumented mode
  std::map<std::string, uint64_t> call_counts;
  uint64_t digest = 0;

  double overhead() const;  // mean-vs-mean overhead_percent
  double native_cps() const;
};

// Only the timing-shaped workloads are benchable.
bool bench_supported(WorkloadName name);

// Repeats native and instrumented runs `repeats` times each, alternating.
TimingReport run_bench(const WorkloadSpec& spec, RunMode mode, uint32_t repeats);

std::string bench_report_json(const TimingReport& report);

}  // namespace cracsim
