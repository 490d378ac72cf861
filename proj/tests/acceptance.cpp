// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "lungddpm/bench.hpp"
#include "lungddpm/cli.hpp"
#include "lungddpm/convergence.hpp"
#include "lungddpm/eaas.hpp"
#include "lungddpm/forward.hpp"
#include "lungddpm/layout.hpp"
#include "lungddpm/solver.hpp"
#include "lungddpm/tiny_conv.hpp"
#include "test_util.hpp"

using namespace lungddpm;
using namespace lungddpm::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1: forward-process moments ----------------------------------------------

Outcome forward_moments() {
  struct Case {
    const char* name;
    NoiseSchedule s;
  };
  const std::vector<Case> cases{{"cosine-1000", make_schedule(ScheduleKind::cosine, 1000)},
                                {"linear-1000", make_schedule(ScheduleKind::linear, 1000)},
                                {"cosine-100", make_schedule(ScheduleKind::cosine, 100)}};
  const Dims d{10, 10, 100};  // 10^4 independent draws per (schedule, t)
  const double x0_value = 0.5;
  const VoxelVolume x0(d, {}, x0_value);
  double worst = 0.0;
  Rng rng(2024);
  for (const auto& c : cases) {
    const int T = c.s.T();
    for (int t : {1, T / 4, T / 2, 3 * T / 4, T}) {
      const auto xt = q_sample(x0, t, standard_normal(d, {}, rng), c.s).x;
      const auto m = moments(xt.values());
      const double ab = c.s.alpha_bar(t);
      const double want_mean = std::sqrt(ab) * x0_value, want_var = 1.0 - ab;
      const double se_mean = std::sqrt(want_var / static_cast<double>(m.n));
      const double se_var = want_var * std::sqrt(2.0 / static_cast<double>(m.n - 1));
      worst = std::max({worst, std::abs(m.mean - want_mean) / se_mean, std::abs(m.var - want_var) / se_var});
    }
  }
  return {worst < 4.0, fmt("3 schedules x 5 t, worst deviation %.2f SE (limit 4)", worst)};
}

// --- 2: convergence orders ---------------------------------------------------

Outcome convergence_orders() {
  const std::vector<int> orders{1, 2, 3}, steps{8, 16, 32, 64, 128};
  const auto r = run_convergence_study(ConvergenceSetup{}, orders, steps);
  bool ok = true;
  std::string detail = "slopes";
  for (std::size_t k = 0; k < orders.size(); ++k) {
    const double slope = r.slopes[k].value_or(0.0);
    ok = ok && slope >= required_slope(orders[k]);
    detail += fmt(" o%d=%.3f(>=%.1f)", orders[k], slope, required_slope(orders[k]));
  }
  return {ok, detail};
}

// --- 3: order-1 update equals DDIM --------------------------------------------

class FixedEps final : public NoisePredictor {
public:
  explicit FixedEps(VoxelVolume eps) : eps_(std::move(eps)) {}

protected:
  VoxelVolume do_predict(const VoxelVolume&, int, const SemanticLayout&) const override { return eps_; }
  int horizon() const noexcept override { return 1000; }

private:
  VoxelVolume eps_;
};

Outcome ddim_equivalence() {
  const auto s = make_schedule(ScheduleKind::cosine, 1000);
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int t_hi = 2 + static_cast<int>(rng() % 999);
    const int t_lo = static_cast<int>(rng() % t_hi);
    const auto x = random_volume({3, 3, 3}, rng(), -3.0, 3.0);
    const auto eps = random_volume(x.dims(), rng(), -2.0, 2.0);
    const FixedEps p(eps);
    DpmHistory h;
    const auto out = dpm_step(1, h, x, t_hi, t_lo, p, SemanticLayout(x.dims()), s);
    const double ab_hi = s.alpha_bar(t_hi), ab_lo = s.alpha_bar(t_lo);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0 = (x[i] - std::sqrt(1.0 - ab_hi) * eps[i]) / std::sqrt(ab_hi);
      const double ddim = std::sqrt(ab_lo) * x0 + std::sqrt(1.0 - ab_lo) * eps[i];
      worst = std::max(worst, std::abs(out[i] - ddim));
    }
  }
  return {worst < 1e-10, fmt("100 random steps, max |dev| = %.3e (limit 1e-10)", worst)};
}

// --- 4: EAAS locality ----------------------------------------------------------

Outcome eaas_locality() {
  std::size_t violations = 0, off_mask = 0, nodule_voxels = 0;
  for (std::uint64_t k = 0; k < 25; ++k) {
    auto [v, l] = make_phantom(500 + k, {32, 32, 32});
    EaasRequest r;
    r.reference = std::make_shared<const VoxelVolume>(std::move(v));
    r.lung_layout = std::make_shared<const SemanticLayout>(std::move(l));
    r.patch_size = {16, 16, 16};
    r.predictor = std::make_shared<const AnalyticGaussianPredictor>(0.4, 0.05, r.schedule);
    r.solver.blend_mode = BlendMode::per_step;
    r.seed = k;
    const auto res = run_eaas(r);
    violations += fusion_locality_violations(res, *r.reference);
    off_mask += off_mask_changes(res, *r.reference);
    nodule_voxels += res.full_layout.count(Label::nodule);
  }
  return {violations == 0 && off_mask == 0,
          fmt("25 runs, %zu outside-crop violations, %zu off-mask changes, %zu nodule voxels", violations,
              off_mask, nodule_voxels)};
}

// --- 5: layout distribution ----------------------------------------------------

Outcome layout_distribution() {
  const LayoutConfig cfg;
  Rng rng(5);
  const int n = 100000;
  std::array<int, 3> counts{};
  double lo = 1e9, hi = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto s = sample_nodule_spec(cfg, rng);
    ++counts[static_cast<int>(s.nodule_class)];
    lo = std::min(lo, s.diameter_mm);
    hi = std::max(hi, s.diameter_mm);
  }
  const std::array<double, 3> target{0.19, 0.62, 0.19};
  double worst = 0.0;
  for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(100.0 * (counts[c] / double(n) - target[c])));
  const bool ok = worst <= 1.5 && lo >= kMinNoduleDiameterMm && hi <= kMaxNoduleDiameterMm;
  return {ok, fmt("freq %.2f/%.2f/%.2f%%, worst %.2f pts (limit 1.5), diameters [%.2f, %.2f] mm",
                  100.0 * counts[0] / n, 100.0 * counts[1] / n, 100.0 * counts[2] / n, worst, lo, hi)};
}

// --- 6: FLOPs ratio ------------------------------------------------------------

Outcome flops_ratio() {
  const auto arch = TinyConvPredictor::architecture();
  const auto big = estimate_flops(arch, {128, 128, 128}), small = estimate_flops(arch, {64, 64, 64});
  const double ratio = static_cast<double>(big) / static_cast<double>(small);
  return {ratio == 8.0, fmt("%llu / %llu = %.6f", static_cast<unsigned long long>(big),
                            static_cast<unsigned long long>(small), ratio)};
}

// --- 7: NFE reduction and wall-clock speedup ----------------------------------

Outcome nfe_reduction() {
  const auto schedule = make_schedule(ScheduleKind::cosine, 1000);
  auto predictor = std::make_shared<const TinyConvPredictor>(TinyConvPredictor::initialized(1000, 7));
  auto make = [&](std::string name, SolverMethod m, int steps) {
    BenchConfig c;
    c.name = std::move(name);
    c.predictor = predictor;
    c.arch = TinyConvPredictor::architecture();
    c.schedule = schedule;
    c.solver.method = m;
    c.solver.steps = steps;
    c.solver.blend_mode = BlendMode::init_only;
    c.dims = c.nominal_dims = {8, 8, 8};
    c.seed = 7;
    return c;
  };
  const auto base = run_bench(make("ancestral-1000", SolverMethod::ancestral, 1000), 10, 1);
  const auto fast = run_bench(make("dpm2-50", SolverMethod::dpm2_multistep, 50), 10, 1);
  const double nfe_ratio = static_cast<double>(base.nfe) / static_cast<double>(fast.nfe);
  const double speedup = base.wall_mean_s / fast.wall_mean_s;
  const bool ok = fast.nfe == 51 && base.nfe == 1000 && nfe_ratio >= 19.0 && speedup >= 10.0;
  return {ok, fmt("NFE %llu vs %llu (%.2fx), wall %.4fs vs %.4fs (%.2fx, limit 10x), 10 trials at 8^3",
                  static_cast<unsigned long long>(base.nfe), static_cast<unsigned long long>(fast.nfe), nfe_ratio,
                  base.wall_mean_s, fast.wall_mean_s, speedup)};
}

// --- 8: training sanity ----------------------------------------------------------

Outcome training_sanity() {
  const auto cosine = make_schedule(ScheduleKind::cosine, 1000);

  auto p = TinyConvPredictor::initialized(1000, 5);
  const auto x = random_volume({8, 8, 8}, 6);
  const auto eps = random_volume(x.dims(), 7, -2.0, 2.0);
  SemanticLayout m(x.dims(), {}, Label::lung);
  for (int z = 3; z < 5; ++z)
    for (int y = 3; y < 5; ++y)
      for (int xx = 3; xx < 5; ++xx) m.set(z, y, xx, Label::nodule);
  std::vector<double> grad;
  (void)p.loss_and_gradient(x, m, 250, eps, &grad);
  const double h = 1e-4;
  double worst_rel = 0.0;
  auto params = p.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = p.loss_and_gradient(x, m, 250, eps, nullptr);
    params[i] = keep - h;
    const double down = p.loss_and_gradient(x, m, 250, eps, nullptr);
    params[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst_rel = std::max(worst_rel, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-8}));
  }

  const auto [v, l] = make_phantom(4, {32, 32, 32});
  const CropRegion r{{8, 8, 4}, {16, 16, 16}};
  const auto x0 = crop(v, r);
  const auto lm = crop(l, r);
  auto fit = TinyConvPredictor::initialized(1000, 1);
  Rng rng(7);
  std::vector<double> losses;
  for (int k = 0; k < 500; ++k) losses.push_back(train_step(fit, x0, lm, rng, cosine, 1e-3));
  const double first = moments(std::vector<double>(losses.begin(), losses.begin() + 50)).mean;
  const double last = moments(std::vector<double>(losses.end() - 50, losses.end())).mean;
  const double reduction = 1.0 - last / first;

  TinyConvPredictor zero(1000);
  Rng zrng(9);
  std::vector<double> zl;
  for (int k = 0; k < 100; ++k) zl.push_back(train_step(zero, x0, lm, zrng, cosine, 1e-3));
  const double zero_loss = moments(zl).mean;

  const bool ok = worst_rel < 1e-4 && reduction >= 0.5 && zero_loss >= 0.9 && zero_loss <= 1.1;
  return {ok, fmt("grad rel err %.2e over %zu params (limit 1e-4), 500-step loss reduction %.1f%% (limit 50%%), "
                  "zero-weight loss %.3f",
                  worst_rel, params.size(), 100.0 * reduction, zero_loss)};
}

// --- 9: CLI determinism ----------------------------------------------------------

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome cli_determinism() {
  TempDir dir("accept_cli");
  if (cli::run_cli({"phantom", "--dims", "32", "--seed", "9", "--out", (dir / "ref").string()}) != 0)
    return {false, "phantom command failed"};
  std::ofstream(dir / "cfg.json") << R"({"seed": 31, "solver": {"gamma": 0.0, "steps": 20},
                                        "sample": {"patch_size": [16, 16, 16]}})";
  const int count = 4;
  auto sample = [&](const std::string& prefix, int par) {
    return cli::run_cli({"sample", "--config", (dir / "cfg.json").string(), "--reference",
                         (dir / "ref_volume.ldpv").string(), "--lung-layout", (dir / "ref_layout.ldpv").string(),
                         "--analytic", "--count", std::to_string(count), "--parallelism", std::to_string(par),
                         "--out-prefix", (dir / prefix).string()});
  };
  if (sample("a", 1) != 0 || sample("b", 1) != 0 || sample("c", 4) != 0) return {false, "sample command failed"};
  int mismatches = 0, compared = 0;
  for (int i = 0; i < count; ++i)
    for (const char* kind : {"_volume.ldpv", "_layout.ldpv"}) {
      const std::string name = "_" + std::to_string(i) + kind;
      const auto a = file_bytes(dir / ("a" + name));
      if (a.empty()) ++mismatches;
      mismatches += a != file_bytes(dir / ("b" + name));
      mismatches += a != file_bytes(dir / ("c" + name));
      compared += 2;
    }
  return {mismatches == 0, fmt("%d file comparisons (rerun and parallelism 1 vs 4), %d mismatches", compared,
                               mismatches)};
}

// --- 10: I/O round trips ---------------------------------------------------------

Outcome io_round_trips() {
  TempDir dir("accept_io");
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> edge(1, 12);
  std::uniform_real_distribution<float> spacing(0.3f, 3.0f);
  int failures = 0, singles = 0, non_cubic = 0;
  for (int k = 0; k < 1000; ++k) {
    const Dims d = k == 0 ? Dims{1, 1, 1} : Dims{edge(rng), edge(rng), edge(rng)};
    singles += d.count() == 1;
    non_cubic += !(d.nz == d.ny && d.ny == d.nx);
    const Spacing sp{spacing(rng), spacing(rng), spacing(rng)};
    const auto r = random_f32_volume(d, rng());
    VoxelVolume v(d, sp);
    std::copy(r.values().begin(), r.values().end(), v.values().begin());
    SemanticLayout l(d, sp);
    for (std::size_t i = 0; i < l.size(); ++i) l.set(i, static_cast<Label>(rng() % 3));

    const auto vp = dir / "v.ldpv", lp = dir / "l.ldpv";
    write_volume(v, vp);
    write_layout(l, lp);
    const auto v2 = read_volume(vp);
    const auto l2 = read_layout(lp);
    failures += !bit_identical(v, v2) || !(l == l2) || !(l2.spacing() == sp);
  }
  return {failures == 0 && singles > 0 && non_cubic > 0,
          fmt("1000 volume+layout file round trips, %d failures (%d single-voxel, %d non-cubic)", failures, singles,
              non_cubic)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double budget_s;  // 0 = no runtime limit
  };
  const std::vector<Criterion> criteria{
      {1, "forward-process moments", forward_moments, 30.0},
      {2, "solver convergence orders", convergence_orders, 120.0},
      {3, "order-1 / DDIM equivalence", ddim_equivalence, 0.0},
      {4, "EAAS locality", eaas_locality, 0.0},
      {5, "layout distribution", layout_distribution, 10.0},
      {6, "FLOPs ratio", flops_ratio, 0.0},
      {7, "NFE reduction and speedup", nfe_reduction, 0.0},
      {8, "training sanity", training_sanity, 0.0},
      {9, "CLI determinism", cli_determinism, 0.0},
      {10, "volume I/O round trips", io_round_trips, 0.0},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt("; runtime %.1fs over budget %.0fs", secs, c.budget_s);
    }
    failed += !o.pass;
    std::printf("[%s] criterion %2d %-28s %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}
