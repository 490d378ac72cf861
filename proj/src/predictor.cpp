#include "lungddpm/predictor.hpp"

#include <cmath>

#include "lungddpm/errors.hpp"

namespace lungddpm {

VoxelVolume NoisePredictor::predict(const VoxelVolume& x_t, int t, const SemanticLayout& c) const {
  if (c.dims() != x_t.dims())
    throw ArgumentError("conditioning layout dims " + to_string(c.dims()) + " differ from x_t dims " +
                        to_string(x_t.dims()));
  if (t < 0 || t > horizon())
    throw ArgumentError("predictor step " + std::to_string(t) + " outside [0, " +
                        std::to_string(horizon()) + "]");
  evals_.fetch_add(1, std::memory_order_relaxed);
  return do_predict(x_t, t, c);
}

AnalyticGaussianPredictor::AnalyticGaussianPredictor(double mu, double var, NoiseSchedule schedule)
    : mu_(mu), var_(var), schedule_(std::move(schedule)) {
  if (!(var > 0) || !std::isfinite(var)) throw ArgumentError("analytic predictor needs var > 0");
  if (!std::isfinite(mu)) throw ArgumentError("analytic predictor needs finite mu");
}

double AnalyticGaussianPredictor::epsilon_at(double x, double alpha_bar) const noexcept {
  const double a = std::sqrt(alpha_bar);
  const double sigma = std::sqrt(1.0 - alpha_bar);
  return sigma * (x - a * mu_) / (alpha_bar * var_ + 1.0 - alpha_bar);
}

double AnalyticGaussianPredictor::data_at(double x, double alpha_bar) const noexcept {
  const double a = std::sqrt(alpha_bar);
  return mu_ + a * var_ * (x - a * mu_) / (alpha_bar * var_ + 1.0 - alpha_bar);
}

VoxelVolume AnalyticGaussianPredictor::do_predict(const VoxelVolume& x_t, int t,
                                                  const SemanticLayout&) const {
  const double ab = schedule_.alpha_bar(t);
  VoxelVolume out = x_t;
  for (auto& v : out.values()) v = epsilon_at(v, ab);
  return out;
}

VoxelVolume to_data_prediction(const VoxelVolume& eps_hat, const VoxelVolume& x_t, int t,
                               const NoiseSchedule& s) {
  if (eps_hat.dims() != x_t.dims())
    throw ArgumentError("eps_hat dims " + to_string(eps_hat.dims()) + " differ from x_t dims " +
                        to_string(x_t.dims()));
  const double a = s.sqrt_alpha_bar(t);
  const double sig = s.sigma(t);
  VoxelVolume out = x_t;
  auto ov = out.values();
  auto ev = eps_hat.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = (ov[i] - sig * ev[i]) / a;
  return out;
}

}  // namespace lungddpm
