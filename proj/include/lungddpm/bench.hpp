#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "lungddpm/architecture.hpp"
#include "lungddpm/predictor.hpp"
#include "lungddpm/solver.hpp"

namespace lungddpm {

/// 2 * k^3 * C_in * C_out * voxels summed over the layers (same padding,
/// stride 1). Throws UnsupportedArchitectureError on non-convolutional layers.
std::uint64_t estimate_flops(const ArchitectureDescriptor& arch, const Dims& dims);

struct BenchConfig {
  std::string name;
  std::shared_ptr<const NoisePredictor> predictor;
  ArchitectureDescriptor arch;
  NoiseSchedule schedule = make_schedule(ScheduleKind::cosine, 1000);
  SolverConfig solver;
  Dims dims{8, 8, 8};          // dims the timed solves run at
  Dims nominal_dims{8, 8, 8};  // dims the FLOPs estimate describes
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::string name;
  Dims dims{};
  Dims nominal_dims{};
  std::uint64_t nfe = 0;
  std::uint64_t est_flops = 0;        // one predictor evaluation at nominal dims
  std::uint64_t est_flops_chain = 0;  // est_flops * nfe
  double wall_mean_s = 0.0;
  double wall_std_s = 0.0;  // sample stddev; only reported when trials >= 3
  bool has_std = false;
  std::int64_t peak_alloc_bytes = 0;  // heap high-water proxy, not device memory
  int trials = 0;
  int failed_trials = 0;
};

/// Runs `warmup` untimed and `n_trials` timed solves strictly sequentially.
/// Only one benchmark may run per process at a time. Failed trials are
/// counted; throws if none succeeds.
BenchReport run_bench(const BenchConfig& cfg, int n_trials, int warmup);

struct ComparisonRow {
  std::string name;
  double flops_ratio = 1.0;        // baseline / row, per evaluation
  double chain_flops_ratio = 1.0;  // baseline / row, whole chain
  double nfe_ratio = 1.0;
  double speedup = 1.0;  // baseline wall / row wall
  double alloc_ratio = 1.0;
  double voxel_ratio = 1.0;  // nominal voxels, baseline / row
  double cost_ratio = 1.0;   // voxel_ratio * nfe_ratio
  bool meets_threshold = false;
  std::string note;
};

struct Comparison {
  std::string baseline;
  double threshold = 1.0;
  std::vector<ComparisonRow> rows;
};

/// Ratios of every report against reports[baseline]. Requires >= 2 reports.
Comparison compare(const std::vector<BenchReport>& reports, std::size_t baseline, double threshold);

/// CSV: config,nominal_dims,run_dims,nfe,est_flops,est_flops_chain,wall_mean_s,
/// wall_std_s,peak_alloc_bytes,trials, then the comparison ratios.
void write_bench_csv(const std::vector<BenchReport>& reports, const Comparison& cmp,
                     const std::filesystem::path& path);
void print_bench_table(const std::vector<BenchReport>& reports, const Comparison& cmp, std::ostream& out);

/// Built-in suite "table2-desk": ancestral-128^3-proxy, ancestral-64^3,
/// dpm2-64^3-50, dpm2-64^3-10 with a TinyConvPredictor. Timed solves run at
/// nominal dims divided by `scale`.
std::vector<BenchConfig> bench_suite(const std::string& name, int scale, std::uint64_t seed);

}  // namespace lungddpm
