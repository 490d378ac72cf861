#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "lungddpm/bench.hpp"
#include "lungddpm/cli.hpp"
#include "lungddpm/convergence.hpp"
#include "lungddpm/eaas.hpp"
#include "lungddpm/tiny_conv.hpp"

namespace lungddpm::cli {

namespace {

namespace fs = std::filesystem;

// Nodules painted into phantoms for training data.
constexpr double kPhantomNoduleIntensity = 0.4;
constexpr double kPhantomNoduleTexture = 0.05;

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = std::make_shared<spdlog::logger>("ldpm", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%l] %v");
    return l;
  }();
  const char* env = std::getenv("LDPM_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") log->set_level(spdlog::level::err);
  else if (level == "debug") log->set_level(spdlog::level::debug);
  else log->set_level(spdlog::level::info);
  return log;
}

Dims parse_dims(const std::string& text) {
  std::vector<int> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--dims expects N or NZ,NY,NX, got '" + text + "'");
    }
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw ConfigError("--dims expects N or NZ,NY,NX, got '" + text + "'");
}

void require_parent_dir(const fs::path& out) {
  const fs::path parent = out.parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    throw IoError("output directory " + parent.string() + " does not exist");
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw IoError(what + " " + p.string() + " not found");
}

fs::path with_suffix(const fs::path& prefix, const std::string& suffix) {
  return fs::path(prefix.string() + suffix);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

// --- phantom -----------------------------------------------------------------

struct PhantomArgs {
  std::string dims = "64";
  std::uint64_t seed = 0;
  std::string out;
  double spacing = 1.0;
  int nodules = 0;
};

int cmd_phantom(const PhantomArgs& a) {
  const Dims dims = parse_dims(a.dims);
  if (dims.nz < 16 || dims.ny < 16 || dims.nx < 16)
    throw ConfigError("phantom dims must be at least 16 per axis, got " + to_string(dims));
  if (!(a.spacing > 0.0)) throw ConfigError("--spacing must be positive");
  if (a.nodules < 0) throw ConfigError("--nodules must be non-negative");
  require_parent_dir(a.out);

  auto [vol, layout] = make_phantom(a.seed, dims, Spacing{a.spacing, a.spacing, a.spacing});
  std::vector<EllipsoidSpec> specs;
  if (a.nodules > 0) {
    Rng rng(a.seed ^ 0x9e3779b97f4a7c15ULL);
    const LayoutConfig lc;
    for (int k = 0; k < a.nodules; ++k) {
      std::optional<Placement> placed;
      for (int attempt = 0; attempt < kLayoutAttempts && !placed; ++attempt) {
        try {
          placed = place_nodule(sample_nodule_spec(lc, rng), layout, vol.spacing(), rng, lc);
        } catch (const PlacementError&) {
        }
      }
      if (!placed) throw PlacementError("could not place nodule " + std::to_string(k) + " in the phantom");
      layout = std::move(placed->layout);
      specs.push_back(placed->spec);
    }
    paint_nodule(vol, layout, kPhantomNoduleIntensity, kPhantomNoduleTexture, rng);
  }

  write_volume(vol, with_suffix(a.out, "_volume.ldpv"));
  write_layout(layout, with_suffix(a.out, "_layout.ldpv"));
  if (!specs.empty()) write_spec_log(specs, with_suffix(a.out, "_nodules.jsonl"));
  logger()->info("phantom {} seed {} written to {}_{{volume,layout}}.ldpv", to_string(dims), a.seed, a.out);
  return kOk;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data_dir;
  std::string out_weights;
  std::string loss_csv;
  std::optional<std::uint64_t> seed;
};

std::vector<std::pair<fs::path, fs::path>> find_pairs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory " + dir.string() + " not found");
  const std::string suffix = "_volume.ldpv";
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const fs::path layout = dir / (name.substr(0, name.size() - suffix.size()) + "_layout.ldpv");
    if (!fs::is_regular_file(layout)) throw ConfigError("volume " + name + " has no matching layout file");
    pairs.emplace_back(e.path(), layout);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const fs::path data_dir = !a.data_dir.empty() ? fs::path(a.data_dir) : cfg.io.data_dir.value_or("");
  const fs::path out = !a.out_weights.empty() ? fs::path(a.out_weights) : cfg.io.out_weights.value_or("");
  if (data_dir.empty()) throw ConfigError("train needs --data-dir");
  if (out.empty()) throw ConfigError("train needs --out-weights");
  const fs::path loss_csv = a.loss_csv.empty() ? fs::path(out).replace_extension(".loss.csv") : fs::path(a.loss_csv);
  require_parent_dir(out);
  require_parent_dir(loss_csv);

  const auto pairs = find_pairs(data_dir);
  if (pairs.empty()) throw ConfigError("data directory " + data_dir.string() + " has no *_volume.ldpv files");

  // Read and check everything before training starts.
  Rng rng(cfg.seed);
  std::vector<TrainingSample> data;
  const Dims ps = cfg.train.patch_size;
  for (const auto& [vp, lp] : pairs) {
    const auto vol = read_volume(vp);
    const auto lay = read_layout(lp);
    if (!(vol.dims() == lay.dims()))
      throw ConfigError("dims of " + vp.string() + " and " + lp.string() + " differ");
    const Dims d = vol.dims();
    if (ps.nz > d.nz || ps.ny > d.ny || ps.nx > d.nx)
      throw ConfigError("train.patch_size " + to_string(ps) + " exceeds " + vp.string() + " dims " + to_string(d));
    std::uniform_int_distribution<int> oz(0, d.nz - ps.nz), oy(0, d.ny - ps.ny), ox(0, d.nx - ps.nx);
    for (int k = 0; k < cfg.train.patches_per_volume; ++k) {
      const CropRegion r{{oz(rng), oy(rng), ox(rng)}, ps};
      data.push_back({crop(vol, r), crop(lay, r)});
    }
  }
  logger()->info("training on {} patches of {} from {} volumes, {} epochs", data.size(), to_string(ps),
                 pairs.size(), cfg.train.epochs);

  const auto schedule = cfg.schedule();
  auto net = TinyConvPredictor::initialized(schedule.T(), cfg.seed);
  const auto losses = train(net, data, cfg.train.epochs, cfg.train.lr, cfg.seed, schedule);
  save_weights(net, out);
  write_loss_csv(losses, loss_csv);
  if (!losses.empty()) logger()->info("final loss {:.6f} after {} steps", losses.back(), losses.size());
  return kOk;
}

// --- sample ------------------------------------------------------------------

struct SampleArgs {
  std::string config;
  std::string reference;
  std::string lung_layout;
  std::string weights;
  bool analytic = false;
  std::string manifest;
  std::string out_prefix;
  int count = 1;
  std::optional<int> parallelism;
  std::optional<std::uint64_t> seed;
};

int cmd_sample(const SampleArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.parallelism) cfg.sample.parallelism = *a.parallelism;
  if (a.count < 0) throw ConfigError("--count must be non-negative");
  cfg.validate();

  const fs::path prefix = !a.out_prefix.empty() ? fs::path(a.out_prefix) : cfg.io.out_prefix.value_or("");
  if (prefix.empty()) throw ConfigError("sample needs --out-prefix");

  // Requests come from a manifest or from --reference/--lung-layout/--count.
  std::vector<ManifestEntry> entries;
  if (!a.manifest.empty()) {
    if (!a.reference.empty() || !a.lung_layout.empty())
      throw ConfigError("--manifest cannot be combined with --reference or --lung-layout");
    entries = load_manifest(a.manifest, cfg);
  } else {
    const fs::path ref_path = !a.reference.empty() ? fs::path(a.reference) : cfg.io.reference.value_or("");
    const fs::path lay_path = !a.lung_layout.empty() ? fs::path(a.lung_layout) : cfg.io.lung_layout.value_or("");
    if (ref_path.empty() || lay_path.empty()) throw ConfigError("sample needs --reference and --lung-layout");
    for (int i = 0; i < a.count; ++i)
      entries.push_back({ref_path, lay_path, cfg.sample.patch_size, cfg.solver, cfg.seed + static_cast<std::uint64_t>(i)});
  }

  std::string kind = cfg.predictor.kind;
  std::optional<fs::path> weights = cfg.predictor.weights ? cfg.predictor.weights : cfg.io.weights;
  if (a.analytic) kind = "analytic";
  if (!a.weights.empty()) {
    kind = "tiny_conv";
    weights = a.weights;
  }
  if (kind == "tiny_conv" && !weights) throw ConfigError("tiny_conv predictor needs --weights");

  for (const auto& e : entries) {
    require_file(e.reference, "reference");
    require_file(e.layout, "lung layout");
  }
  if (kind == "tiny_conv" && !entries.empty()) require_file(*weights, "weights");
  require_parent_dir(prefix);
  if (entries.empty()) {
    logger()->info("no requests, nothing to sample");
    return kOk;
  }

  const auto schedule = cfg.schedule();
  std::shared_ptr<const NoisePredictor> predictor;
  if (kind == "tiny_conv")
    predictor = std::make_shared<const TinyConvPredictor>(load_weights(*weights, schedule.T()));
  else
    predictor = std::make_shared<const AnalyticGaussianPredictor>(cfg.predictor.mu, cfg.predictor.var, schedule);

  std::map<fs::path, std::shared_ptr<const VoxelVolume>> volumes;
  std::map<fs::path, std::shared_ptr<const SemanticLayout>> layouts;
  std::vector<EaasRequest> requests;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    auto& vol = volumes[e.reference];
    if (!vol) vol = std::make_shared<const VoxelVolume>(read_volume(e.reference));
    auto& lay = layouts[e.layout];
    if (!lay) lay = std::make_shared<const SemanticLayout>(read_layout(e.layout));
    EaasRequest r;
    r.reference = vol;
    r.lung_layout = lay;
    r.patch_size = e.patch_size;
    r.predictor = predictor;
    r.schedule = schedule;
    r.solver = e.solver;
    r.layout = cfg.layout;
    r.seed = e.seed;
    try {
      r.validate();
    } catch (const ArgumentError& err) {
      throw ConfigError("request " + std::to_string(i) + ": " + err.what());
    }
    requests.push_back(std::move(r));
  }

  logger()->info("sampling {} request(s) with {}, parallelism {}", requests.size(), kind, cfg.sample.parallelism);
  const auto items = run_batch(requests, cfg.sample.parallelism);

  int failures = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].result) {
      logger()->error("{}", items[i].error_message);
      ++failures;
      continue;
    }
    const auto& res = *items[i].result;
    if (const auto bad = fusion_locality_violations(res, *requests[i].reference); bad != 0) {
      logger()->error("request {}: fusion locality check failed on {} voxel(s)", i, bad);
      ++failures;
      continue;
    }
    const fs::path base = with_suffix(prefix, "_" + std::to_string(i));
    write_volume(res.full_volume, with_suffix(base, "_volume.ldpv"));
    write_layout(res.full_layout, with_suffix(base, "_layout.ldpv"));
    write_text(with_suffix(base, "_provenance.json"), provenance_json(res, requests[i]) + "\n");
    res.steps.write(with_suffix(base, "_steps.jsonl"));
    logger()->debug("request {}: nfe {}, {:.3f} s, nodule {:.2f} mm", i, res.provenance.nfe,
                    res.provenance.wall_time_s, res.provenance.nodule.diameter_mm);
  }
  if (failures) {
    logger()->error("{} of {} request(s) failed", failures, items.size());
    return kRuntime;
  }
  return kOk;
}

// --- bench -------------------------------------------------------------------

struct BenchArgs {
  std::string suite = "table2-desk";
  int trials = 10;
  int warmup = 1;
  int scale = 8;
  double threshold = 14.0;
  std::uint64_t seed = 0;
  std::string out_csv;
};

int cmd_bench(const BenchArgs& a) {
  if (a.trials < 1) throw ConfigError("--trials must be at least 1");
  if (a.warmup < 0) throw ConfigError("--warmup must be non-negative");
  const auto suite = bench_suite(a.suite, a.scale, a.seed);
  if (!a.out_csv.empty()) require_parent_dir(a.out_csv);

  std::vector<BenchReport> reports;
  for (const auto& c : suite) {
    logger()->info("bench {}: {} trial(s) at {}", c.name, a.trials, to_string(c.dims));
    reports.push_back(run_bench(c, a.trials, a.warmup));
  }
  const auto cmp = compare(reports, 0, a.threshold);
  print_bench_table(reports, cmp, std::cout);
  if (!a.out_csv.empty()) write_bench_csv(reports, cmp, a.out_csv);
  return kOk;
}

// --- oracle-check ------------------------------------------------------------

struct OracleArgs {
  std::vector<int> orders{1, 2, 3};
  std::vector<int> steps{8, 16, 32, 64, 128};
  std::string out_csv;
};

int cmd_oracle_check(const OracleArgs& a) {
  for (int o : a.orders)
    if (o < 1 || o > 3) throw ConfigError("--orders entries must be 1, 2 or 3");
  for (int s : a.steps)
    if (s < 1) throw ConfigError("--steps entries must be positive");
  if (!a.out_csv.empty()) require_parent_dir(a.out_csv);

  const ConvergenceSetup setup;
  const auto result = run_convergence_study(setup, a.orders, a.steps);

  std::ostringstream csv;
  csv << "kind,order,steps,value\n" << std::setprecision(12);
  for (const auto& r : result.rows) csv << "error," << r.order << ',' << r.steps << ',' << r.error << '\n';
  bool ok = true;
  for (std::size_t k = 0; k < a.orders.size(); ++k) {
    const auto& slope = result.slopes[k];
    csv << "slope," << a.orders[k] << ",," << (slope ? std::to_string(*slope) : "n/a") << '\n';
    std::cout << "order " << a.orders[k] << ": slope ";
    if (slope) {
      const bool pass = *slope >= required_slope(a.orders[k]);
      ok = ok && pass;
      std::cout << std::fixed << std::setprecision(3) << *slope << " (required >= " << required_slope(a.orders[k])
                << ") " << (pass ? "ok" : "FAIL") << '\n';
    } else {
      std::cout << "n/a (needs two or more step counts)\n";
    }
  }
  if (!a.out_csv.empty()) write_text(a.out_csv, csv.str());
  return ok ? kOk : kRuntime;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e))
    return kIo;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return kValidation;
  return kRuntime;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Anatomy-aware nodule CT synthesis toolkit"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Write a procedural thorax volume and its lung layout");
  phantom->add_option("--dims", pa.dims, "N or NZ,NY,NX (>= 16 per axis)")->capture_default_str();
  phantom->add_option("--seed", pa.seed)->capture_default_str();
  phantom->add_option("--out", pa.out, "Output prefix")->required();
  phantom->add_option("--spacing", pa.spacing, "Isotropic voxel size in mm")->capture_default_str();
  phantom->add_option("--nodules", pa.nodules, "Nodules to place and paint")->capture_default_str();

  TrainArgs ta;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train the tiny convolutional predictor");
  train_cmd->add_option("--config", ta.config);
  train_cmd->add_option("--data-dir", ta.data_dir);
  train_cmd->add_option("--out-weights", ta.out_weights);
  train_cmd->add_option("--loss-csv", ta.loss_csv);
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed);

  SampleArgs sa;
  std::uint64_t sample_seed = 0;
  int sample_par = 1;
  auto* sample = app.add_subcommand("sample", "Synthesize nodule volumes with paired layouts");
  sample->add_option("--config", sa.config);
  sample->add_option("--reference", sa.reference);
  sample->add_option("--lung-layout", sa.lung_layout);
  sample->add_option("--manifest", sa.manifest, "JSON array of requests");
  auto* weights_opt = sample->add_option("--weights", sa.weights);
  sample->add_flag("--analytic", sa.analytic, "Use the closed-form Gaussian predictor")->excludes(weights_opt);
  sample->add_option("--out-prefix", sa.out_prefix);
  sample->add_option("--count", sa.count)->capture_default_str();
  auto* par_opt = sample->add_option("--parallelism", sample_par);
  auto* sample_seed_opt = sample->add_option("--seed", sample_seed);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Efficiency benchmark suite");
  bench->add_option("--suite", ba.suite)->capture_default_str();
  bench->add_option("--trials", ba.trials)->capture_default_str();
  bench->add_option("--warmup", ba.warmup)->capture_default_str();
  bench->add_option("--scale", ba.scale, "Timed dims = nominal dims / scale")->capture_default_str();
  bench->add_option("--threshold", ba.threshold, "Cost ratio flagged as meeting the target")->capture_default_str();
  bench->add_option("--seed", ba.seed)->capture_default_str();
  bench->add_option("--out-csv", ba.out_csv);

  OracleArgs oa;
  auto* oracle = app.add_subcommand("oracle-check", "Solver convergence orders on the Gaussian oracle");
  oracle->add_option("--orders", oa.orders)->delimiter(',')->capture_default_str();
  oracle->add_option("--steps", oa.steps)->delimiter(',')->capture_default_str();
  oracle->add_option("--out-csv", oa.out_csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*phantom) return cmd_phantom(pa);
    if (*train_cmd) {
      if (*train_seed_opt) ta.seed = train_seed;
      return cmd_train(ta);
    }
    if (*sample) {
      if (*sample_seed_opt) sa.seed = sample_seed;
      if (*par_opt) sa.parallelism = sample_par;
      return cmd_sample(sa);
    }
    if (*bench) return cmd_bench(ba);
    if (*oracle) return cmd_oracle_check(oa);
  } catch (const std::exception& e) {
    logger()->error("{}", e.what());
    return exit_code_for(e);
  }
  return kValidation;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage{"ldpm"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace lungddpm::cli
