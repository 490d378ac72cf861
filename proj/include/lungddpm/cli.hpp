#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lungddpm/errors.hpp"
#include "lungddpm/layout.hpp"
#include "lungddpm/schedule.hpp"
#include "lungddpm/solver.hpp"

namespace lungddpm::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kRuntime = 3, kIo = 4 };

/// Malformed or out-of-range configuration.
class ConfigError : public ArgumentError {
public:
  using ArgumentError::ArgumentError;
};

struct PredictorSection {
  std::string kind = "analytic";  // "analytic" or "tiny_conv"
  double mu = 0.4;
  double var = 0.05;
  std::optional<std::filesystem::path> weights;
};

struct TrainSection {
  int epochs = 1;
  double lr = 1e-3;
  Dims patch_size{16, 16, 16};
  int patches_per_volume = 4;
};

struct SampleSection {
  Dims patch_size{64, 64, 64};
  int parallelism = 1;
};

struct IoSection {
  std::optional<std::filesystem::path> reference, lung_layout, weights, out_prefix, data_dir, out_weights;
};

/// Parsed run configuration. Every section is optional; absent keys keep
/// their defaults and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  ScheduleKind schedule_kind = ScheduleKind::cosine;
  int T = 1000;
  PredictorSection predictor;
  SolverConfig solver;
  LayoutConfig layout;
  TrainSection train;
  SampleSection sample;
  IoSection io;

  NoiseSchedule schedule() const { return make_schedule(schedule_kind, T); }
  /// Checks every section against its module constraints. Throws ConfigError.
  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// One request of a batch manifest: a JSON array of
/// {reference_path, layout_path, patch_size, solver, seed}. Missing fields
/// take the run config's values; the seed defaults to config seed + index.
struct ManifestEntry {
  std::filesystem::path reference;
  std::filesystem::path layout;
  Dims patch_size{};
  SolverConfig solver;
  std::uint64_t seed = 0;
};

std::vector<ManifestEntry> parse_manifest(const std::string& json_text, const RunConfig& defaults);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, const RunConfig& defaults);

/// Entry point of the `ldpm` tool; returns the process exit code.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace lungddpm::cli
