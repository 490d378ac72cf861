#include "lungddpm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lungddpm/errors.hpp"

namespace lungddpm {

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::cosine ? "cosine" : "linear";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "linear") return ScheduleKind::linear;
  throw ArgumentError("unknown schedule kind '" + name + "'");
}

double cosine_alpha_bar(double t, int T, double offset) {
  auto f = [&](double u) {
    const double c = std::cos((u / T + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  return f(t) / f(0.0);
}

NoiseSchedule NoiseSchedule::make(ScheduleKind kind, int T) {
  if (T < 2) throw ArgumentError("schedule needs T >= 2, got " + std::to_string(T));

  NoiseSchedule s;
  s.kind_ = kind;
  s.T_ = T;
  s.beta_.resize(T);
  if (kind == ScheduleKind::cosine) {
    for (int t = 1; t <= T; ++t) {
      const double b = 1.0 - cosine_alpha_bar(t, T) / cosine_alpha_bar(t - 1, T);
      s.beta_[t - 1] = std::min(b, kMaxBeta);
    }
  } else {
    // Scaled to keep the endpoint SNR comparable across horizons.
    const double scale = 1000.0 / T;
    const double lo = scale * 1e-4;
    const double hi = std::min(scale * 0.02, kMaxBeta);
    for (int t = 1; t <= T; ++t) s.beta_[t - 1] = lo + (hi - lo) * (t - 1) / (T - 1);
  }

  s.alpha_bar_.resize(T + 1);
  s.sqrt_alpha_bar_.resize(T + 1);
  s.sigma_.resize(T + 1);
  s.lambda_.resize(T + 1);
  s.alpha_bar_[0] = 1.0;
  for (int t = 1; t <= T; ++t) s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - s.beta_[t - 1]);

  for (int t = 0; t <= T; ++t) {
    const double ab = s.alpha_bar_[t];
    s.sqrt_alpha_bar_[t] = std::sqrt(ab);
    s.sigma_[t] = std::sqrt(1.0 - ab);
    s.lambda_[t] = t == 0 ? kLambdaMax
                          : std::min(kLambdaMax, 0.5 * (std::log(ab) - std::log1p(-ab)));
  }
  return s;
}

int NoiseSchedule::check(int t) const {
  if (t < 0 || t > T_)
    throw ArgumentError("step " + std::to_string(t) + " outside [0, " + std::to_string(T_) + "]");
  return t;
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T_)
    throw ArgumentError("beta defined for steps 1.." + std::to_string(T_) + ", got " +
                        std::to_string(t));
  return beta_[t - 1];
}

Coefficients NoiseSchedule::coefficients_at(int t) const {
  check(t);
  return {alpha_bar_[t], sigma_[t], lambda_[t]};
}

namespace {

template <typename F>
double central_difference(int t, int T, F&& value) {
  const int lo = std::max(0, t - 1);
  const int hi = std::min(T, t + 1);
  return (value(hi) - value(lo)) / (static_cast<double>(hi - lo) / T);
}

}  // namespace

double NoiseSchedule::drift(int t) const {
  check(t);
  return central_difference(t, T_, [&](int k) { return 0.5 * std::log(alpha_bar_[k]); });
}

double NoiseSchedule::diffusion_sq(int t) const {
  check(t);
  const double dvar = central_difference(t, T_, [&](int k) { return 1.0 - alpha_bar_[k]; });
  const double g2 = dvar - 2.0 * drift(t) * (1.0 - alpha_bar_[t]);
  return std::max(0.0, g2);
}

}  // namespace lungddpm
