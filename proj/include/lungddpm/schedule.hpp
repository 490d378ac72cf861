#pragma once

#include <string>
#include <vector>

namespace lungddpm {

enum class ScheduleKind { cosine, linear };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Log-SNR assigned to t = 0, where the true value is unbounded (SNR ~ 1e6).
inline constexpr double kLambdaMax = 13.8;
inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

/// Coefficients of a variance-preserving forward process at one step.
struct Coefficients {
  double alpha_bar;
  double sigma;   // sqrt(1 - alpha_bar)
  double lambda;  // 0.5 * log(alpha_bar / (1 - alpha_bar)), capped at kLambdaMax
};

/// Discrete diffusion schedule over steps 0..T. Step 0 is the clean signal
/// (alpha_bar = 1); betas are defined for steps 1..T. Immutable once built.
class NoiseSchedule {
public:
  static NoiseSchedule make(ScheduleKind kind, int T);

  ScheduleKind kind() const noexcept { return kind_; }
  int T() const noexcept { return T_; }

  /// beta_t for t in [1, T].
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(check(t)); }
  double sqrt_alpha_bar(int t) const { return sqrt_alpha_bar_.at(check(t)); }
  double sigma(int t) const { return sigma_.at(check(t)); }
  double lambda(int t) const { return lambda_.at(check(t)); }
  Coefficients coefficients_at(int t) const;

  /// Drift f(t) = d log sqrt(alpha_bar) / dtau and squared diffusion
  /// g^2(t) = d sigma^2 / dtau - 2 f sigma^2 of the probability-flow ODE,
  /// with tau = t / T, by central differences on the grid (one-sided at the ends).
  double drift(int t) const;
  double diffusion_sq(int t) const;

  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }
  const std::vector<double>& lambdas() const noexcept { return lambda_; }

private:
  NoiseSchedule() = default;
  int check(int t) const;

  ScheduleKind kind_{ScheduleKind::cosine};
  int T_{0};
  std::vector<double> beta_;  // index t-1 holds beta_t
  std::vector<double> alpha_bar_;
  std::vector<double> sqrt_alpha_bar_;
  std::vector<double> sigma_;
  std::vector<double> lambda_;
};

inline NoiseSchedule make_schedule(ScheduleKind kind, int T) { return NoiseSchedule::make(kind, T); }

/// Closed-form cosine alpha_bar(t) for a horizon T (no clipping).
double cosine_alpha_bar(double t, int T, double offset = kCosineOffset);

}  // namespace lungddpm
