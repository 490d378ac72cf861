#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungddpm/forward.hpp"
#include "lungddpm/predictor.hpp"

namespace lungddpm {

enum class SolverMethod { ancestral, dpm1, dpm2_multistep, dpm3 };
enum class BlendMode { init_only, per_step };

std::string to_string(SolverMethod m);
std::string to_string(BlendMode m);
SolverMethod solver_method_from_string(const std::string& name);
BlendMode blend_mode_from_string(const std::string& name);

/// Solver order of the exponential-integrator methods (0 for ancestral).
int method_order(SolverMethod m) noexcept;

/// Predictor evaluations consumed by one solve:
///   ancestral, dpm1: steps
///   dpm2_multistep, dpm3: steps + 1 (the first step is a two-evaluation warm-up)
std::uint64_t expected_nfe(SolverMethod m, int steps) noexcept;

/// Stochastic term of the hybrid update is only applied while t_lo > this fraction of T.
inline constexpr double kStochasticWindow = 0.7;

struct SolverConfig {
  SolverMethod method = SolverMethod::dpm2_multistep;
  int steps = 50;
  double gamma = 0.0;
  BlendMode blend_mode = BlendMode::per_step;
  std::optional<int> t_start;  // defaults to T

  int start(const NoiseSchedule& s) const { return t_start.value_or(s.T()); }
  void validate(const NoiseSchedule& s) const;
};

/// Strictly decreasing step indices from t_start down to 0, length steps + 1.
struct TimeGrid {
  std::vector<int> ts;
};

/// Interior points are the steps whose log-SNR is nearest to a uniform
/// spacing between lambda(t_start) and lambda(1); collisions are pushed down
/// so the grid stays strictly decreasing. The last point is always 0.
TimeGrid make_time_grid(const NoiseSchedule& s, const SolverConfig& cfg);

/// A point on the noise trajectory. `alpha` is sqrt(alpha_bar). `t` is the
/// schedule step, or -1 for off-grid points used by convergence studies.
struct TimePoint {
  int t = -1;
  double alpha = 1.0;
  double sigma = 0.0;
  double lambda = kLambdaMax;
};

TimePoint time_point(const NoiseSchedule& s, int t);
/// Variance-preserving point with the given log-SNR.
TimePoint time_point_from_lambda(double lambda);

struct StepRecord {
  int step = 0;
  int t_hi = 0;
  int t_lo = 0;
  int order_used = 0;
  std::uint64_t nfe_total = 0;
  std::string note;  // reason when order_used differs from the requested order
};

class StepLog {
public:
  void add(StepRecord r) { records_.push_back(std::move(r)); }
  const std::vector<StepRecord>& records() const noexcept { return records_; }
  std::uint64_t nfe_total() const noexcept { return records_.empty() ? 0 : records_.back().nfe_total; }
  /// One JSON object per line: {step, t_hi, t_lo, order_used, nfe_total}.
  std::string to_json_lines() const;
  void write(const std::filesystem::path& path) const;

private:
  std::vector<StepRecord> records_;
};

/// Data prediction x0_hat at a given log-SNR.
struct DataPrediction {
  VoxelVolume x0_hat;
  double lambda;
};

/// Most recent data predictions, newest first, at most three.
class DpmHistory {
public:
  void push(DataPrediction d);
  std::size_t size() const noexcept { return entries_.size(); }
  std::span<const DataPrediction> entries() const noexcept { return {entries_.data(), entries_.size()}; }
  void clear() noexcept { entries_.clear(); }

private:
  std::vector<DataPrediction> entries_;
};

/// Data-prediction exponential-integrator update from `hi` to `lo`, using the
/// first `order` entries of `history` (newest first; entry 0 is at `hi`).
/// Order 1 is DDIM; orders 2 and 3 are the multistep corrections in lambda.
/// A `lo` with sigma = 0 requires order 1.
VoxelVolume dpm_update(int order, const VoxelVolume& x, std::span<const DataPrediction> history,
                       const TimePoint& hi, const TimePoint& lo);

using DataFn = std::function<VoxelVolume(const VoxelVolume& x, const TimePoint& at)>;

/// One multistep update consuming exactly one evaluation of `data` at (x, hi).
/// The new prediction is pushed onto `history`. Runs at the requested order
/// when the history allows, otherwise at the highest supported order; the
/// final step onto sigma = 0 always runs at order 1. Returns the order used.
int dpm_multistep(int order, DpmHistory& history, VoxelVolume& x, const TimePoint& hi,
                  const TimePoint& lo, const DataFn& data);

/// Predictor-backed multistep update between two schedule steps.
VoxelVolume dpm_step(int order, DpmHistory& history, const VoxelVolume& x, int t_hi, int t_lo,
                     const NoisePredictor& p, const SemanticLayout& c, const NoiseSchedule& s,
                     StepLog* log = nullptr);

/// Drives dpm_multistep along a grid. For order >= 2 the first step is a
/// second-order predictor-corrector (two evaluations, the second at the end
/// point), so full-order updates start immediately.
class DpmIntegrator {
public:
  explicit DpmIntegrator(int order);

  /// Advances x from hi to lo in place. Returns the order used.
  int step(VoxelVolume& x, const TimePoint& hi, const TimePoint& lo, const DataFn& data);
  std::uint64_t evaluations() const noexcept { return evals_; }

private:
  int order_;
  bool first_ = true;
  std::uint64_t evals_ = 0;
  DpmHistory history_;
};

/// DDPM posterior step from t_hi to t_lo with x0 estimated from the predictor;
/// `noise` scales the posterior standard deviation (unused when t_lo = 0).
VoxelVolume ancestral_step(const VoxelVolume& x_t, int t_hi, int t_lo, const NoisePredictor& p,
                           const SemanticLayout& c, const VoxelVolume& noise, const NoiseSchedule& s);
VoxelVolume ancestral_step(const VoxelVolume& x_t, int t_hi, int t_lo, const NoisePredictor& p,
                           const SemanticLayout& c, Rng& rng, const NoiseSchedule& s);

/// Adds gamma * g(t_lo) * sqrt(dtau) * N(0, I) with dtau = (t_hi - t_lo) / T,
/// only inside the early window t_lo > kStochasticWindow * T.
VoxelVolume hybrid_noise(const VoxelVolume& x_next, int t_hi, int t_lo, double gamma, Rng& rng,
                         const NoiseSchedule& s);

/// Mask-conditioned sampling from x_init down to t = 0. Every predictor call
/// receives `m`. In per_step mode the non-nodule voxels are re-noised from
/// `x_ref` at each new level (and equal x_ref exactly at t = 0).
VoxelVolume pulmonary_solve(const NoisyState& x_init, const VoxelVolume& x_ref, const SemanticLayout& m,
                            const NoisePredictor& p, const SolverConfig& cfg, Rng& rng,
                            const NoiseSchedule& s, StepLog* log = nullptr);

}  // namespace lungddpm
