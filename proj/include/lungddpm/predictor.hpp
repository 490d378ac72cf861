#pragma once

#include <atomic>
#include <cstdint>
#include <memory>

#include "lungddpm/schedule.hpp"
#include "lungddpm/volume.hpp"

namespace lungddpm {

/// Noise predictor eps(x_t, t, c) conditioned on a semantic layout.
///
/// `predict` is reentrant; each call increments `eval_count()` by exactly one,
/// which is how samplers and the benchmark harness account for NFE.
class NoisePredictor {
public:
  virtual ~NoisePredictor() = default;

  VoxelVolume predict(const VoxelVolume& x_t, int t, const SemanticLayout& c) const;

  std::uint64_t eval_count() const noexcept { return evals_.load(std::memory_order_relaxed); }
  void reset_eval_count() noexcept { evals_.store(0); }

protected:
  virtual VoxelVolume do_predict(const VoxelVolume& x_t, int t, const SemanticLayout& c) const = 0;
  virtual int horizon() const noexcept = 0;

private:
  mutable std::atomic<std::uint64_t> evals_{0};
};

/// Exact noise prediction when the data are i.i.d. N(mu, var) per voxel:
/// eps = sigma_t * (x - sqrt(ab_t) * mu) / (ab_t * var + 1 - ab_t). Ignores c.
class AnalyticGaussianPredictor final : public NoisePredictor {
public:
  AnalyticGaussianPredictor(double mu, double var, NoiseSchedule schedule);

  double mu() const noexcept { return mu_; }
  double var() const noexcept { return var_; }

  /// Closed-form noise estimate at an arbitrary alpha_bar in (0, 1].
  double epsilon_at(double x, double alpha_bar) const noexcept;
  /// Closed-form E[x0 | x_t] at an arbitrary alpha_bar in (0, 1].
  double data_at(double x, double alpha_bar) const noexcept;

protected:
  VoxelVolume do_predict(const VoxelVolume& x_t, int t, const SemanticLayout& c) const override;
  int horizon() const noexcept override { return schedule_.T(); }

private:
  double mu_, var_;
  NoiseSchedule schedule_;
};

/// x0_hat = (x_t - sigma_t * eps_hat) / sqrt(alpha_bar_t).
VoxelVolume to_data_prediction(const VoxelVolume& eps_hat, const VoxelVolume& x_t, int t,
                               const NoiseSchedule& s);

}  // namespace lungddpm
