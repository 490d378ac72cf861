#include "lungddpm/convergence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lungddpm/errors.hpp"
#include "lungddpm/solver.hpp"

namespace lungddpm {

double ConvergenceSetup::crossover() const { return -0.5 * std::log(var); }

double gaussian_flow_exact(double x, double lambda_from, double lambda_to, double mu, double var) {
  const auto a = time_point_from_lambda(lambda_from), b = time_point_from_lambda(lambda_to);
  const double rho_a = std::exp(-lambda_from), rho_b = std::exp(-lambda_to);
  const double y = x / a.alpha;
  const double y_to = mu + (y - mu) * std::sqrt((var + rho_b * rho_b) / (var + rho_a * rho_a));
  return b.alpha * y_to;
}

double gaussian_flow_rk4(double x, double lambda_from, double lambda_to, double mu, double var, int steps) {
  // With y = x / alpha and rho = exp(-lambda): dy/dlambda = -rho * eps(alpha * y).
  auto rhs = [&](double lambda, double y) {
    const auto p = time_point_from_lambda(lambda);
    const double ab = p.alpha * p.alpha;
    const double eps = p.sigma * (p.alpha * y - p.alpha * mu) / (ab * var + 1.0 - ab);
    return -std::exp(-lambda) * eps;
  };
  double y = x / time_point_from_lambda(lambda_from).alpha;
  const double h = (lambda_to - lambda_from) / steps;
  for (int i = 0; i < steps; ++i) {
    const double l = lambda_from + i * h;
    const double k1 = rhs(l, y);
    const double k2 = rhs(l + 0.5 * h, y + 0.5 * h * k1);
    const double k3 = rhs(l + 0.5 * h, y + 0.5 * h * k2);
    const double k4 = rhs(l + h, y + h * k3);
    y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return time_point_from_lambda(lambda_to).alpha * y;
}

VoxelVolume convergence_initial_state(const ConvergenceSetup& setup) {
  const auto p = time_point_from_lambda(setup.lambda_start());
  const double mean = p.alpha * setup.mu;
  const double sd = std::sqrt(p.alpha * p.alpha * setup.var + p.sigma * p.sigma);
  Rng rng(setup.seed);
  std::normal_distribution<double> n(mean, sd);
  VoxelVolume x(setup.dims);
  for (auto& v : x.values()) v = n(rng);
  return x;
}

double convergence_error(const ConvergenceSetup& setup, int order, int steps) {
  if (steps < 1) throw ArgumentError("convergence study needs steps >= 1");
  if (!(setup.var > 0) || !(setup.half_width > 0)) throw ArgumentError("convergence study needs var > 0 and a positive window");
  VoxelVolume x = convergence_initial_state(setup);
  const VoxelVolume x_start = x;

  // Exact data prediction E[x0 | x] for Gaussian data.
  const DataFn data = [&](const VoxelVolume& v, const TimePoint& at) {
    const double ab = at.alpha * at.alpha;
    VoxelVolume out = v;
    for (auto& e : out.values())
      e = setup.mu + at.alpha * setup.var * (e - at.alpha * setup.mu) / (ab * setup.var + 1.0 - ab);
    return out;
  };

  DpmIntegrator integrator(order);
  const double h = (setup.lambda_end() - setup.lambda_start()) / steps;
  for (int i = 0; i < steps; ++i) {
    const auto hi = time_point_from_lambda(setup.lambda_start() + i * h);
    const auto lo = time_point_from_lambda(i + 1 == steps ? setup.lambda_end() : setup.lambda_start() + (i + 1) * h);
    integrator.step(x, hi, lo, data);
  }

  double err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double exact = gaussian_flow_exact(x_start[i], setup.lambda_start(), setup.lambda_end(), setup.mu, setup.var);
    err = std::max(err, std::abs(x[i] - exact));
  }
  return err;
}

ConvergenceResult run_convergence_study(const ConvergenceSetup& setup, std::span<const int> orders,
                                        std::span<const int> steps) {
  ConvergenceResult result;
  for (int order : orders) {
    std::vector<double> lx, ly;
    for (int n : steps) {
      const double e = convergence_error(setup, order, n);
      result.rows.push_back({order, n, e});
      lx.push_back(std::log(static_cast<double>(n)));
      ly.push_back(-std::log(std::max(e, 1e-300)));
    }
    if (lx.size() < 2) {
      result.slopes.emplace_back();
      continue;
    }
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / lx.size();
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / ly.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    result.slopes.emplace_back(sxx > 0 ? std::optional<double>(sxy / sxx) : std::nullopt);
  }
  return result;
}

double required_slope(int order) {
  switch (order) {
    case 1: return 0.9;
    case 2: return 1.8;
    case 3: return 2.6;
  }
  throw ArgumentError("no slope threshold for order " + std::to_string(order));
}

}  // namespace lungddpm
