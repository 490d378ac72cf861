#include "lungddpm/solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "lungddpm/errors.hpp"

namespace lungddpm {

std::string to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::ancestral: return "ancestral";
    case SolverMethod::dpm1: return "dpm1";
    case SolverMethod::dpm2_multistep: return "dpm2_multistep";
    case SolverMethod::dpm3: return "dpm3";
  }
  return "unknown";
}

std::string to_string(BlendMode m) { return m == BlendMode::per_step ? "per_step" : "init_only"; }

SolverMethod solver_method_from_string(const std::string& name) {
  for (auto m : {SolverMethod::ancestral, SolverMethod::dpm1, SolverMethod::dpm2_multistep, SolverMethod::dpm3})
    if (to_string(m) == name) return m;
  throw ArgumentError("unknown solver method '" + name + "'");
}

BlendMode blend_mode_from_string(const std::string& name) {
  if (name == "per_step") return BlendMode::per_step;
  if (name == "init_only") return BlendMode::init_only;
  throw ArgumentError("unknown blend mode '" + name + "'");
}

int method_order(SolverMethod m) noexcept {
  switch (m) {
    case SolverMethod::ancestral: return 0;
    case SolverMethod::dpm1: return 1;
    case SolverMethod::dpm2_multistep: return 2;
    case SolverMethod::dpm3: return 3;
  }
  return 0;
}

std::uint64_t expected_nfe(SolverMethod m, int steps) noexcept {
  const auto n = static_cast<std::uint64_t>(steps);
  return method_order(m) >= 2 ? n + 1 : n;
}

void SolverConfig::validate(const NoiseSchedule& s) const {
  if (steps < 1) throw ArgumentError("solver steps must be >= 1");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ArgumentError("solver gamma must be >= 0");
  const int t0 = start(s);
  if (t0 < 1 || t0 > s.T())
    throw ArgumentError("solver t_start " + std::to_string(t0) + " outside [1, " + std::to_string(s.T()) + "]");
  if (steps > t0)
    throw ArgumentError("solver steps " + std::to_string(steps) + " exceed t_start " + std::to_string(t0));
}

TimeGrid make_time_grid(const NoiseSchedule& s, const SolverConfig& cfg) {
  cfg.validate(s);
  const int t0 = cfg.start(s);
  const int n = cfg.steps;
  TimeGrid g;
  g.ts.assign(n + 1, 0);
  g.ts[0] = t0;
  if (n == 1) return g;

  // lambda is strictly decreasing in t; find the step nearest a target in [1, t0].
  const auto& lam = s.lambdas();
  auto nearest = [&](double target) {
    int lo = 1, hi = t0;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      (lam[mid] > target ? lo : hi) = mid;
    }
    return std::abs(lam[lo] - target) <= std::abs(lam[hi] - target) ? lo : hi;
  };
  const double l0 = lam[t0], l1 = lam[1];
  for (int i = 1; i < n; ++i) {
    int t = nearest(l0 + (l1 - l0) * i / (n - 1));
    t = std::min(t, g.ts[i - 1] - 1);
    t = std::max(t, n - i);
    g.ts[i] = t;
  }
  return g;
}

TimePoint time_point(const NoiseSchedule& s, int t) {
  return {t, s.sqrt_alpha_bar(t), s.sigma(t), s.lambda(t)};
}

TimePoint time_point_from_lambda(double lambda) {
  // alpha^2 = sigmoid(2 lambda), sigma^2 = sigmoid(-2 lambda)
  return {-1, std::sqrt(1.0 / (1.0 + std::exp(-2.0 * lambda))),
          std::sqrt(1.0 / (1.0 + std::exp(2.0 * lambda))), lambda};
}

std::string StepLog::to_json_lines() const {
  std::string out;
  for (const auto& r : records_) {
    nlohmann::json j{{"step", r.step},
                     {"t_hi", r.t_hi},
                     {"t_lo", r.t_lo},
                     {"order_used", r.order_used},
                     {"nfe_total", r.nfe_total}};
    if (!r.note.empty()) j["note"] = r.note;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void StepLog::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json_lines();
  if (!out) throw IoError("write failed for " + path.string());
}

void DpmHistory::push(DataPrediction d) {
  entries_.insert(entries_.begin(), std::move(d));
  if (entries_.size() > 3) entries_.pop_back();
}

VoxelVolume dpm_update(int order, const VoxelVolume& x, std::span<const DataPrediction> history,
                       const TimePoint& hi, const TimePoint& lo) {
  if (order < 1 || order > 3) throw ArgumentError("dpm order must be 1, 2 or 3");
  if (history.size() < static_cast<std::size_t>(order))
    throw ArgumentError("dpm order " + std::to_string(order) + " needs " + std::to_string(order) +
                        " data predictions, have " + std::to_string(history.size()));
  if (!(hi.lambda < lo.lambda)) throw ArgumentError("dpm update must increase log-SNR");
  if (lo.sigma == 0.0 && order != 1) throw ArgumentError("the step onto sigma = 0 must be order 1");

  double ratio = 0.0, phi = -1.0, h = lo.lambda - hi.lambda;
  if (lo.sigma > 0.0) {
    ratio = lo.sigma / hi.sigma;
    phi = std::expm1(-h);
  }
  const double a = lo.alpha;

  VoxelVolume out = x;
  auto ov = out.values();
  const auto m0 = history[0].x0_hat.values();
  if (order == 1) {
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = ratio * ov[i] - a * phi * m0[i];
    return out;
  }

  const auto m1 = history[1].x0_hat.values();
  const double r0 = (hi.lambda - history[1].lambda) / h;
  if (order == 2) {
    const double c0 = -a * phi, c1 = -0.5 * a * phi / r0;
    for (std::size_t i = 0; i < ov.size(); ++i)
      ov[i] = ratio * ov[i] + c0 * m0[i] + c1 * (m0[i] - m1[i]);
    return out;
  }

  const auto m2 = history[2].x0_hat.values();
  const double r1 = (history[1].lambda - history[2].lambda) / h;
  const double c0 = -a * phi;
  const double c1 = a * (phi / h + 1.0);
  // D2 approximates h^2 x0'' / 2, so the exact second-order weight is 2 alpha (1/2 - (phi + h) / h^2).
  const double c2 = -2.0 * a * ((phi + h) / (h * h) - 0.5);
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const double d10 = (m0[i] - m1[i]) / r0;
    const double d11 = (m1[i] - m2[i]) / r1;
    const double d1 = d10 + r0 / (r0 + r1) * (d10 - d11);
    const double d2 = (d10 - d11) / (r0 + r1);
    ov[i] = ratio * ov[i] + c0 * m0[i] + c1 * d1 + c2 * d2;
  }
  return out;
}

int dpm_multistep(int order, DpmHistory& history, VoxelVolume& x, const TimePoint& hi,
                  const TimePoint& lo, const DataFn& data) {
  history.push({data(x, hi), hi.lambda});
  int used = std::min<int>(order, static_cast<int>(history.size()));
  if (lo.sigma == 0.0) used = 1;
  x = dpm_update(used, x, history.entries(), hi, lo);
  return used;
}

namespace {

DataFn predictor_data_fn(const NoisePredictor& p, const SemanticLayout& c, const NoiseSchedule& s) {
  return [&p, &c, &s](const VoxelVolume& x, const TimePoint& at) {
    return to_data_prediction(p.predict(x, at.t, c), x, at.t, s);
  };
}

std::string fallback_note(int requested, int used, bool terminal) {
  if (used == requested) return {};
  if (terminal) return "terminal step runs at order 1";
  return "insufficient history: order " + std::to_string(requested) + " -> " + std::to_string(used);
}

}  // namespace

VoxelVolume dpm_step(int order, DpmHistory& history, const VoxelVolume& x, int t_hi, int t_lo,
                     const NoisePredictor& p, const SemanticLayout& c, const NoiseSchedule& s,
                     StepLog* log) {
  if (t_hi <= t_lo) throw ArgumentError("dpm_step needs t_hi > t_lo");
  if (c.dims() != x.dims()) throw ArgumentError("dpm_step layout dims differ from state dims");
  const auto hi = time_point(s, t_hi), lo = time_point(s, t_lo);
  VoxelVolume out = x;
  const int used = dpm_multistep(order, history, out, hi, lo, predictor_data_fn(p, c, s));
  if (log) {
    const int step = static_cast<int>(log->records().size());
    log->add({step, t_hi, t_lo, used, log->nfe_total() + 1, fallback_note(order, used, lo.sigma == 0.0)});
  }
  return out;
}

DpmIntegrator::DpmIntegrator(int order) : order_(order) {
  if (order < 1 || order > 3) throw ArgumentError("dpm order must be 1, 2 or 3");
}

int DpmIntegrator::step(VoxelVolume& x, const TimePoint& hi, const TimePoint& lo, const DataFn& data) {
  const DataFn counted = [&](const VoxelVolume& v, const TimePoint& at) {
    ++evals_;
    return data(v, at);
  };
  if (!first_ || order_ == 1) {
    first_ = false;
    return dpm_multistep(order_, history_, x, hi, lo, counted);
  }
  first_ = false;

  // Warm-up: first-order predictor to lo, then the trapezoidal corrector
  // D = (x0(hi) + x0(lo)) / 2, which is second order.
  history_.push({counted(x, hi), hi.lambda});
  const VoxelVolume predicted = dpm_update(1, x, history_.entries(), hi, lo);
  VoxelVolume d = counted(predicted, lo);
  const auto dh = history_.entries()[0].x0_hat.values();
  auto dv = d.values();
  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = 0.5 * (dh[i] + dv[i]);
  const DataPrediction averaged{std::move(d), hi.lambda};
  x = dpm_update(1, x, std::span(&averaged, 1), hi, lo);
  return 2;
}

VoxelVolume ancestral_step(const VoxelVolume& x_t, int t_hi, int t_lo, const NoisePredictor& p,
                           const SemanticLayout& c, const VoxelVolume& noise, const NoiseSchedule& s) {
  if (t_hi <= t_lo) throw ArgumentError("ancestral_step needs t_hi > t_lo");
  if (noise.dims() != x_t.dims()) throw ArgumentError("ancestral_step noise dims differ from state dims");
  const auto x0 = to_data_prediction(p.predict(x_t, t_hi, c), x_t, t_hi, s);

  const double ab_hi = s.alpha_bar(t_hi), ab_lo = s.alpha_bar(t_lo);
  const double a_ratio = ab_hi / ab_lo;
  const double beta = 1.0 - a_ratio;
  const double c0 = std::sqrt(ab_lo) * beta / (1.0 - ab_hi);
  const double cx = std::sqrt(a_ratio) * (1.0 - ab_lo) / (1.0 - ab_hi);
  const double sd = t_lo == 0 ? 0.0 : std::sqrt((1.0 - ab_lo) / (1.0 - ab_hi) * beta);

  VoxelVolume out = x_t;
  auto ov = out.values();
  const auto xv = x0.values();
  const auto nv = noise.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    ov[i] = c0 * xv[i] + cx * ov[i];
    if (sd > 0.0) ov[i] += sd * nv[i];
  }
  return out;
}

VoxelVolume ancestral_step(const VoxelVolume& x_t, int t_hi, int t_lo, const NoisePredictor& p,
                           const SemanticLayout& c, Rng& rng, const NoiseSchedule& s) {
  if (t_lo == 0) return ancestral_step(x_t, t_hi, t_lo, p, c, VoxelVolume(x_t.dims(), x_t.spacing()), s);
  return ancestral_step(x_t, t_hi, t_lo, p, c, standard_normal(x_t.dims(), x_t.spacing(), rng), s);
}

VoxelVolume hybrid_noise(const VoxelVolume& x_next, int t_hi, int t_lo, double gamma, Rng& rng,
                         const NoiseSchedule& s) {
  if (!(gamma >= 0.0)) throw ArgumentError("gamma must be >= 0");
  if (gamma == 0.0 || t_lo <= 0 || t_lo <= kStochasticWindow * s.T()) return x_next;
  if (t_hi <= t_lo) throw ArgumentError("hybrid_noise needs t_hi > t_lo");
  const double dtau = static_cast<double>(t_hi - t_lo) / s.T();
  const double scale = gamma * std::sqrt(s.diffusion_sq(t_lo) * dtau);
  VoxelVolume out = x_next;
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : out.values()) v += scale * n(rng);
  return out;
}

VoxelVolume pulmonary_solve(const NoisyState& x_init, const VoxelVolume& x_ref, const SemanticLayout& m,
                            const NoisePredictor& p, const SolverConfig& cfg, Rng& rng,
                            const NoiseSchedule& s, StepLog* log) {
  cfg.validate(s);
  if (x_ref.dims() != x_init.x.dims() || m.dims() != x_init.x.dims())
    throw ArgumentError("pulmonary_solve dims disagree: state " + to_string(x_init.x.dims()) +
                        ", reference " + to_string(x_ref.dims()) + ", mask " + to_string(m.dims()));
  if (x_init.t != cfg.start(s))
    throw ArgumentError("initial state is at t=" + std::to_string(x_init.t) + " but the solver starts at " +
                        std::to_string(cfg.start(s)));

  const auto grid = make_time_grid(s, cfg);
  const int order = method_order(cfg.method);
  std::optional<DpmIntegrator> integrator;
  if (order > 0) integrator.emplace(order);
  const auto data = predictor_data_fn(p, m, s);

  VoxelVolume x = x_init.x;
  std::uint64_t nfe = 0;
  for (std::size_t k = 0; k + 1 < grid.ts.size(); ++k) {
    const int t_hi = grid.ts[k], t_lo = grid.ts[k + 1];
    int used = 0;
    if (integrator) {
      used = integrator->step(x, time_point(s, t_hi), time_point(s, t_lo), data);
      nfe = integrator->evaluations();
      x = hybrid_noise(x, t_hi, t_lo, cfg.gamma, rng, s);
    } else {
      x = ancestral_step(x, t_hi, t_lo, p, m, rng, s);
      ++nfe;
    }

    if (cfg.blend_mode == BlendMode::per_step) {
      const auto bg = q_sample(x_ref, t_lo, standard_normal(x.dims(), x.spacing(), rng), s);
      auto xv = x.values();
      const auto bv = bg.x.values();
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (!m.is_nodule(i)) xv[i] = bv[i];
    }

    if (!x.all_finite())
      throw SolverDivergenceError("non-finite state after step " + std::to_string(k) + " (t " +
                                      std::to_string(t_hi) + " -> " + std::to_string(t_lo) + ")",
                                  static_cast<int>(k));
    if (log) {
      const bool warmup = integrator && k == 0 && order >= 2;
      std::string note;
      if (warmup) note = "warm-up predictor-corrector step";
      else if (order > 0) note = fallback_note(order, used, t_lo == 0);
      log->add({static_cast<int>(k), t_hi, t_lo, used, nfe, note});
    }
  }
  return x;
}

}  // namespace lungddpm
