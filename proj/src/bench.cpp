#include "lungddpm/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lungddpm/alloc_tracker.hpp"
#include "lungddpm/errors.hpp"
#include "lungddpm/tiny_conv.hpp"

namespace lungddpm {

std::uint64_t estimate_flops(const ArchitectureDescriptor& arch, const Dims& dims) {
  if (!dims.positive()) throw ArgumentError("FLOPs estimate needs positive dims, got " + to_string(dims));
  const auto voxels = static_cast<std::uint64_t>(dims.count());
  std::uint64_t total = 0;
  for (const auto& l : arch.layers) {
    if (l.kind != LayerKind::conv3d)
      throw UnsupportedArchitectureError("architecture '" + arch.name +
                                         "' has a non-convolutional layer; FLOPs do not scale with voxels");
    const auto k = static_cast<std::uint64_t>(l.kernel);
    total += 2 * k * k * k * static_cast<std::uint64_t>(l.c_in) * static_cast<std::uint64_t>(l.c_out) * voxels;
  }
  return total;
}

namespace {

std::atomic<bool> g_bench_running{false};

struct BenchGuard {
  BenchGuard() {
    if (g_bench_running.exchange(true))
      throw std::runtime_error("a benchmark is already running in this process");
  }
  ~BenchGuard() { g_bench_running.store(false); }
  BenchGuard(const BenchGuard&) = delete;
  BenchGuard& operator=(const BenchGuard&) = delete;
};

}  // namespace

BenchReport run_bench(const BenchConfig& cfg, int n_trials, int warmup) {
  if (n_trials < 1) throw ArgumentError("n_trials must be at least 1");
  if (warmup < 0) throw ArgumentError("warmup must be non-negative");
  if (!cfg.predictor) throw ArgumentError("bench config '" + cfg.name + "' has no predictor");
  cfg.solver.validate(cfg.schedule);
  const std::uint64_t per_eval = estimate_flops(cfg.arch, cfg.nominal_dims);

  BenchGuard guard;
  // Unconditional generation: the whole volume is the region to synthesize.
  const SemanticLayout mask(cfg.dims, Spacing{}, Label::nodule);
  const VoxelVolume reference(cfg.dims);
  const int t0 = cfg.solver.start(cfg.schedule);

  BenchReport rep;
  rep.name = cfg.name;
  rep.dims = cfg.dims;
  rep.nominal_dims = cfg.nominal_dims;
  rep.est_flops = per_eval;

  std::vector<double> times;
  std::string last_error;
  for (int k = 0; k < warmup + n_trials; ++k) {
    const bool timed = k >= warmup;
    Rng rng(cfg.seed + static_cast<std::uint64_t>(k));
    NoisyState init{standard_normal(cfg.dims, Spacing{}, rng), t0};

    const auto evals_before = cfg.predictor->eval_count();
    const auto live_before = alloc_tracker::current_bytes();
    alloc_tracker::reset_peak();
    const auto start = std::chrono::steady_clock::now();
    try {
      (void)pulmonary_solve(init, reference, mask, *cfg.predictor, cfg.solver, rng, cfg.schedule);
    } catch (const std::exception& e) {
      if (timed) ++rep.failed_trials;
      last_error = e.what();
      continue;
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!timed) continue;
    times.push_back(elapsed);
    const std::uint64_t nfe = cfg.predictor->eval_count() - evals_before;
    if (rep.nfe != 0 && rep.nfe != nfe)
      throw std::runtime_error("NFE changed between trials of '" + cfg.name + "'");
    rep.nfe = nfe;
    rep.peak_alloc_bytes = std::max(rep.peak_alloc_bytes, alloc_tracker::peak_bytes() - live_before);
  }
  if (times.empty())
    throw std::runtime_error("every trial of '" + cfg.name + "' failed; last error: " + last_error);

  rep.trials = static_cast<int>(times.size());
  double sum = 0.0;
  for (double t : times) sum += t;
  rep.wall_mean_s = sum / static_cast<double>(times.size());
  if (times.size() >= 3) {
    double ss = 0.0;
    for (double t : times) ss += (t - rep.wall_mean_s) * (t - rep.wall_mean_s);
    rep.wall_std_s = std::sqrt(ss / static_cast<double>(times.size() - 1));
    rep.has_std = true;
  }
  rep.est_flops_chain = per_eval * rep.nfe;
  return rep;
}

Comparison compare(const std::vector<BenchReport>& reports, std::size_t baseline, double threshold) {
  if (reports.size() < 2) throw ArgumentError("compare needs at least two reports");
  if (baseline >= reports.size()) throw ArgumentError("baseline index out of range");
  const auto& b = reports[baseline];
  auto ratio = [](double num, double den) { return den > 0 ? num / den : 0.0; };

  Comparison cmp{b.name, threshold, {}};
  for (const auto& r : reports) {
    ComparisonRow row;
    row.name = r.name;
    row.flops_ratio = ratio(static_cast<double>(b.est_flops), static_cast<double>(r.est_flops));
    row.chain_flops_ratio = ratio(static_cast<double>(b.est_flops_chain), static_cast<double>(r.est_flops_chain));
    row.nfe_ratio = ratio(static_cast<double>(b.nfe), static_cast<double>(r.nfe));
    row.speedup = ratio(b.wall_mean_s, r.wall_mean_s);
    row.alloc_ratio = ratio(static_cast<double>(b.peak_alloc_bytes), static_cast<double>(r.peak_alloc_bytes));
    row.voxel_ratio = ratio(static_cast<double>(b.nominal_dims.count()), static_cast<double>(r.nominal_dims.count()));
    row.cost_ratio = row.voxel_ratio * row.nfe_ratio;
    row.meets_threshold = row.cost_ratio >= threshold;
    if (!(r.nominal_dims == b.nominal_dims))
      row.note = "dims differ from baseline (" + to_string(r.nominal_dims) + " vs " + to_string(b.nominal_dims) + ")";
    if (!(r.dims == r.nominal_dims)) {
      if (!row.note.empty()) row.note += "; ";
      row.note += "timed at " + to_string(r.dims);
    }
    cmp.rows.push_back(std::move(row));
  }
  return cmp;
}

void write_bench_csv(const std::vector<BenchReport>& reports, const Comparison& cmp,
                     const std::filesystem::path& path) {
  if (cmp.rows.size() != reports.size()) throw ArgumentError("comparison does not match the reports");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "config,nominal_dims,run_dims,nfe,est_flops,est_flops_chain,wall_mean_s,wall_std_s,"
         "peak_alloc_bytes,trials,flops_ratio,nfe_ratio,speedup,cost_ratio,meets_threshold\n";
  out << std::setprecision(10);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& c = cmp.rows[i];
    out << r.name << ',' << to_string(r.nominal_dims) << ',' << to_string(r.dims) << ',' << r.nfe << ','
        << r.est_flops << ',' << r.est_flops_chain << ',' << r.wall_mean_s << ',';
    if (r.has_std) out << r.wall_std_s;
    out << ',' << r.peak_alloc_bytes << ',' << r.trials << ',' << c.flops_ratio << ',' << c.nfe_ratio << ','
        << c.speedup << ',' << c.cost_ratio << ',' << (c.meets_threshold ? "true" : "false") << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void print_bench_table(const std::vector<BenchReport>& reports, const Comparison& cmp, std::ostream& out) {
  if (cmp.rows.size() != reports.size()) throw ArgumentError("comparison does not match the reports");
  const std::vector<std::string> head{"config", "dims", "nfe", "GFLOPs/eval", "wall s", "std s",
                                      "peak alloc MB*", "flops x", "nfe x", "speed x", "cost x"};
  std::vector<std::vector<std::string>> cells{head};
  auto fmt = [](double v, int prec) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& c = cmp.rows[i];
    cells.push_back({r.name, to_string(r.nominal_dims), std::to_string(r.nfe),
                     fmt(static_cast<double>(r.est_flops) / 1e9, 3), fmt(r.wall_mean_s, 4),
                     r.has_std ? fmt(r.wall_std_s, 4) : "-",
                     fmt(static_cast<double>(r.peak_alloc_bytes) / (1024.0 * 1024.0), 3), fmt(c.flops_ratio, 2),
                     fmt(c.nfe_ratio, 2), fmt(c.speedup, 2), fmt(c.cost_ratio, 1)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells)
    for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());
  for (const auto& row : cells) {
    for (std::size_t j = 0; j < row.size(); ++j)
      out << (j == 0 ? std::left : std::right) << std::setw(static_cast<int>(width[j])) << row[j]
          << (j + 1 < row.size() ? "  " : "\n");
  }
  out << std::left << "baseline: " << cmp.baseline << "; cost x = voxel ratio * NFE ratio, threshold "
      << cmp.threshold << "\n* heap allocation proxy, not device memory\n";
  for (const auto& c : cmp.rows)
    if (!c.note.empty()) out << c.name << ": " << c.note << '\n';
}

std::vector<BenchConfig> bench_suite(const std::string& name, int scale, std::uint64_t seed) {
  if (name != "table2-desk") throw ArgumentError("unknown bench suite '" + name + "'");
  if (scale < 1 || 64 % scale != 0 || 64 / scale < 1)
    throw ArgumentError("bench scale must divide 64, got " + std::to_string(scale));

  constexpr int kT = 1000;
  const auto schedule = make_schedule(ScheduleKind::cosine, kT);
  auto predictor = std::make_shared<const TinyConvPredictor>(TinyConvPredictor::initialized(kT, seed));
  const auto arch = TinyConvPredictor::architecture();
  const Dims big{128, 128, 128}, small{64, 64, 64};
  auto scaled = [scale](Dims d) { return Dims{d.nz / scale, d.ny / scale, d.nx / scale}; };

  auto make = [&](std::string n, SolverMethod m, int steps, Dims nominal) {
    BenchConfig c;
    c.name = std::move(n);
    c.predictor = predictor;
    c.arch = arch;
    c.schedule = schedule;
    c.solver.method = m;
    c.solver.steps = steps;
    c.solver.blend_mode = BlendMode::init_only;
    c.dims = scaled(nominal);
    c.nominal_dims = nominal;
    c.seed = seed;
    return c;
  };
  return {make("ancestral-128^3-proxy", SolverMethod::ancestral, kT, big),
          make("ancestral-64^3", SolverMethod::ancestral, kT, small),
          make("dpm2-64^3-50", SolverMethod::dpm2_multistep, 50, small),
          make("dpm2-64^3-10", SolverMethod::dpm2_multistep, 10, small)};
}

}  // namespace lungddpm
