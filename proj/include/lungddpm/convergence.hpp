#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lungddpm/volume.hpp"

namespace lungddpm {

/// Convergence study of the multistep solvers on Gaussian data, where the
/// probability-flow ODE has a closed-form solution. Integration runs on a
/// uniform log-SNR grid over a window of +-half_width around the crossover
/// lambda* = -log(var) / 2, where the data prediction changes fastest.
struct ConvergenceSetup {
  double mu = 0.3;
  double var = 0.25;
  double half_width = 3.0;
  Dims dims{8, 8, 8};
  std::uint64_t seed = 2024;

  double crossover() const;
  double lambda_start() const { return crossover() - half_width; }
  double lambda_end() const { return crossover() + half_width; }
};

/// Exact probability-flow transport of x from lambda_from to lambda_to for
/// N(mu, var) data: (x/alpha - mu) scales by sqrt(var + rho^2), rho = exp(-lambda).
double gaussian_flow_exact(double x, double lambda_from, double lambda_to, double mu, double var);

/// Classical RK4 integration of the same ODE in lambda with `steps` uniform steps.
double gaussian_flow_rk4(double x, double lambda_from, double lambda_to, double mu, double var, int steps);

/// Initial state: draws from the exact marginal at lambda_start.
VoxelVolume convergence_initial_state(const ConvergenceSetup& setup);

/// Runs the order-`order` multistep solver with `steps` uniform steps and
/// returns the max-abs terminal error against the exact solution.
double convergence_error(const ConvergenceSetup& setup, int order, int steps);

struct ConvergenceRow {
  int order;
  int steps;
  double error;
};

struct ConvergenceResult {
  std::vector<ConvergenceRow> rows;
  /// Least-squares slope of -log(error) against log(steps), per requested
  /// order (same order as the input); empty when fewer than two step counts.
  std::vector<std::optional<double>> slopes;
};

ConvergenceResult run_convergence_study(const ConvergenceSetup& setup, std::span<const int> orders,
                                        std::span<const int> steps);

/// Minimum acceptable slope for an order: 0.9, 1.8, 2.6 for orders 1, 2, 3.
double required_slope(int order);

}  // namespace lungddpm
