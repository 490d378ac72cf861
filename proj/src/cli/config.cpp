#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lungddpm/cli.hpp"

namespace lungddpm::cli {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  require_object(j, where);
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

Dims read_dims(const json& j, const char* key, Dims fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  std::vector<int> v;
  read(j, key, v, where);
  if (v.size() != 3) throw ConfigError(where + "." + key + " must be [nz, ny, nx]");
  return {v[0], v[1], v[2]};
}

void read_path(const json& j, const char* key, std::optional<std::filesystem::path>& out,
               const std::string& where) {
  if (!j.contains(key)) return;
  std::string s;
  read(j, key, s, where);
  out = s;
}

void read_solver(const json& j, SolverConfig& out, const std::string& where) {
  reject_unknown(j, {"method", "steps", "gamma", "blend_mode", "t_start"}, where);
  std::string method = to_string(out.method), blend = to_string(out.blend_mode);
  read(j, "method", method, where);
  read(j, "blend_mode", blend, where);
  try {
    out.method = solver_method_from_string(method);
    out.blend_mode = blend_mode_from_string(blend);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  read(j, "steps", out.steps, where);
  read(j, "gamma", out.gamma, where);
  if (j.contains("t_start")) {
    int t = 0;
    read(j, "t_start", t, where);
    out.t_start = t;
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    if (T < 2) throw ConfigError("schedule.T must be at least 2");
    const auto s = schedule();
    solver.validate(s);
    layout.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (predictor.kind != "analytic" && predictor.kind != "tiny_conv")
    throw ConfigError("predictor.kind must be 'analytic' or 'tiny_conv'");
  if (!(predictor.var > 0.0)) throw ConfigError("predictor.var must be positive");
  if (train.epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!train.patch_size.positive()) throw ConfigError("train.patch_size must be positive");
  if (train.patches_per_volume < 1) throw ConfigError("train.patches_per_volume must be positive");
  if (!sample.patch_size.positive()) throw ConfigError("sample.patch_size must be positive");
  if (sample.parallelism < 1) throw ConfigError("sample.parallelism must be positive");
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(root, {"seed", "schedule", "predictor", "solver", "layout", "train", "sample", "io"}, "config");

  RunConfig cfg;
  read(root, "seed", cfg.seed, "config");

  if (root.contains("schedule")) {
    const auto& j = root["schedule"];
    reject_unknown(j, {"kind", "T"}, "schedule");
    std::string kind = to_string(cfg.schedule_kind);
    read(j, "kind", kind, "schedule");
    try {
      cfg.schedule_kind = schedule_kind_from_string(kind);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("schedule.kind: ") + e.what());
    }
    read(j, "T", cfg.T, "schedule");
  }

  if (root.contains("predictor")) {
    const auto& j = root["predictor"];
    reject_unknown(j, {"kind", "mu", "var", "weights"}, "predictor");
    read(j, "kind", cfg.predictor.kind, "predictor");
    read(j, "mu", cfg.predictor.mu, "predictor");
    read(j, "var", cfg.predictor.var, "predictor");
    read_path(j, "weights", cfg.predictor.weights, "predictor");
  }

  if (root.contains("solver")) read_solver(root["solver"], cfg.solver, "solver");

  if (root.contains("layout")) {
    const auto& j = root["layout"];
    reject_unknown(j, {"class_probs", "diameter_bounds_mm", "axis_ratio_range", "min_lung_overlap", "max_placements"},
                   "layout");
    read(j, "class_probs", cfg.layout.class_probs, "layout");
    if (j.contains("diameter_bounds_mm")) {
      std::array<std::array<double, 2>, 3> b{};
      read(j, "diameter_bounds_mm", b, "layout");
      for (std::size_t k = 0; k < 3; ++k) cfg.layout.diameter_bounds[k] = {b[k][0], b[k][1]};
    }
    read(j, "axis_ratio_range", cfg.layout.axis_ratio_range, "layout");
    read(j, "min_lung_overlap", cfg.layout.min_lung_overlap, "layout");
    read(j, "max_placements", cfg.layout.max_placements, "layout");
  }

  if (root.contains("train")) {
    const auto& j = root["train"];
    reject_unknown(j, {"epochs", "lr", "patch_size", "patches_per_volume"}, "train");
    read(j, "epochs", cfg.train.epochs, "train");
    read(j, "lr", cfg.train.lr, "train");
    cfg.train.patch_size = read_dims(j, "patch_size", cfg.train.patch_size, "train");
    read(j, "patches_per_volume", cfg.train.patches_per_volume, "train");
  }

  if (root.contains("sample")) {
    const auto& j = root["sample"];
    reject_unknown(j, {"patch_size", "parallelism"}, "sample");
    cfg.sample.patch_size = read_dims(j, "patch_size", cfg.sample.patch_size, "sample");
    read(j, "parallelism", cfg.sample.parallelism, "sample");
  }

  if (root.contains("io")) {
    const auto& j = root["io"];
    reject_unknown(j, {"reference", "lung_layout", "weights", "out_prefix", "data_dir", "out_weights"}, "io");
    read_path(j, "reference", cfg.io.reference, "io");
    read_path(j, "lung_layout", cfg.io.lung_layout, "io");
    read_path(j, "weights", cfg.io.weights, "io");
    read_path(j, "out_prefix", cfg.io.out_prefix, "io");
    read_path(j, "data_dir", cfg.io.data_dir, "io");
    read_path(j, "out_weights", cfg.io.out_weights, "io");
  }

  cfg.validate();
  return cfg;
}

namespace {

std::string slurp(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + what + " " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(slurp(path, "config")); }

std::vector<ManifestEntry> parse_manifest(const std::string& json_text, const RunConfig& defaults) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!root.is_array()) throw ConfigError("manifest must be a JSON array of requests");
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const auto& j = root[i];
    const std::string where = "manifest[" + std::to_string(i) + "]";
    reject_unknown(j, {"reference_path", "layout_path", "patch_size", "solver", "seed"}, where);
    if (!j.contains("reference_path") || !j.contains("layout_path"))
      throw ConfigError(where + " needs reference_path and layout_path");
    ManifestEntry e;
    std::string ref, lay;
    read(j, "reference_path", ref, where);
    read(j, "layout_path", lay, where);
    e.reference = ref;
    e.layout = lay;
    e.patch_size = read_dims(j, "patch_size", defaults.sample.patch_size, where);
    e.solver = defaults.solver;
    if (j.contains("solver")) read_solver(j["solver"], e.solver, where + ".solver");
    e.seed = defaults.seed + i;
    read(j, "seed", e.seed, where);
    try {
      e.solver.validate(defaults.schedule());
    } catch (const ArgumentError& err) {
      throw ConfigError(where + ": " + err.what());
    }
    if (!e.patch_size.positive()) throw ConfigError(where + ".patch_size must be positive");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path, const RunConfig& defaults) {
  return parse_manifest(slurp(path, "manifest"), defaults);
}

}  // namespace lungddpm::cli
