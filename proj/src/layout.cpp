#include "lungddpm/layout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "lungddpm/errors.hpp"

namespace lungddpm {

std::string to_string(NoduleClass c) {
  switch (c) {
    case NoduleClass::small: return "small";
    case NoduleClass::medium: return "medium";
    case NoduleClass::large: return "large";
  }
  return "unknown";
}

NoduleClass nodule_class_from_string(const std::string& name) {
  if (name == "small") return NoduleClass::small;
  if (name == "medium") return NoduleClass::medium;
  if (name == "large") return NoduleClass::large;
  throw ArgumentError("unknown nodule class '" + name + "'");
}

void LayoutConfig::validate() const {
  double total = 0.0;
  for (double p : class_probs) {
    if (!(p >= 0.0)) throw ArgumentError("layout class probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ArgumentError("layout class probabilities must sum to 1, got " + std::to_string(total));
  for (std::size_t k = 0; k < diameter_bounds.size(); ++k) {
    const auto& b = diameter_bounds[k];
    if (!(b.lo < b.hi) || b.lo < kMinNoduleDiameterMm || b.hi > kMaxNoduleDiameterMm)
      throw ArgumentError("diameter bounds for class " + to_string(static_cast<NoduleClass>(k)) +
                          " must be ordered and within [1.41, 57.42] mm");
    if (k > 0 && b.lo < diameter_bounds[k - 1].hi)
      throw ArgumentError("diameter bounds must not overlap between classes");
  }
  if (!(axis_ratio_range[0] > 0.0 && axis_ratio_range[0] <= axis_ratio_range[1] &&
        axis_ratio_range[1] <= 1.0))
    throw ArgumentError("axis ratio range must satisfy 0 < lo <= hi <= 1");
  if (!(min_lung_overlap >= 0.0 && min_lung_overlap <= 1.0))
    throw ArgumentError("min_lung_overlap must lie in [0, 1]");
  if (max_placements < 1) throw ArgumentError("max_placements must be positive");
}

EllipsoidSpec sample_nodule_spec(const LayoutConfig& cfg, Rng& rng) {
  std::discrete_distribution<int> pick_class(cfg.class_probs.begin(), cfg.class_probs.end());
  EllipsoidSpec spec;
  const int k = pick_class(rng);
  spec.nodule_class = static_cast<NoduleClass>(k);

  const auto& b = cfg.diameter_bounds[k];
  spec.diameter_mm = std::uniform_real_distribution<double>(b.lo, b.hi)(rng);

  const double major = spec.diameter_mm / 2.0;
  const auto [r_lo, r_hi] = cfg.axis_ratio_range;
  auto ratio = [&] { return r_lo == r_hi ? r_lo : std::uniform_real_distribution<double>(r_lo, r_hi)(rng); };
  spec.semi_axes_mm = {major, major * ratio(), major * ratio()};

  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (auto& a : spec.rotation) a = angle(rng);
  return spec;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// R = Rz * Ry * Rx acting on (z, y, x) vectors; columns are the body axes.
Mat3 rotation_matrix(const std::array<double, 3>& angles) {
  auto mul = [](const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
  };
  // Rotation about index axis `ax` in the plane of the other two.
  auto about = [](int ax, double th) {
    Mat3 m{};
    m[ax][ax] = 1.0;
    const int u = (ax + 1) % 3, v = (ax + 2) % 3;
    m[u][u] = std::cos(th);
    m[u][v] = -std::sin(th);
    m[v][u] = std::sin(th);
    m[v][v] = std::cos(th);
    return m;
  };
  return mul(mul(about(0, angles[0]), about(1, angles[1])), about(2, angles[2]));
}

void require_spec(const EllipsoidSpec& spec) {
  for (double a : spec.semi_axes_mm)
    if (!(a > 0.0) || !std::isfinite(a)) throw ArgumentError("ellipsoid semi-axes must be positive");
}

}  // namespace

std::array<int, 3> ellipsoid_half_extent(const EllipsoidSpec& spec, const Spacing& spacing) {
  require_spec(spec);
  const Mat3 r = rotation_matrix(spec.rotation);
  const std::array<double, 3> sp{spacing.sz, spacing.sy, spacing.sx};
  std::array<int, 3> half{};
  for (int i = 0; i < 3; ++i) {
    double e2 = 0.0;
    for (int j = 0; j < 3; ++j) e2 += std::pow(r[i][j] * spec.semi_axes_mm[j], 2);
    half[i] = static_cast<int>(std::ceil(std::sqrt(e2) / sp[i]));
  }
  return half;
}

std::vector<std::size_t> rasterize_ellipsoid(const EllipsoidSpec& spec, const Dims& dims,
                                             const Spacing& spacing) {
  const auto half = ellipsoid_half_extent(spec, spacing);
  const Mat3 r = rotation_matrix(spec.rotation);
  const std::array<double, 3> sp{spacing.sz, spacing.sy, spacing.sx};
  const std::array<double, 3> inv_a{1.0 / spec.semi_axes_mm[0], 1.0 / spec.semi_axes_mm[1],
                                    1.0 / spec.semi_axes_mm[2]};
  const auto& c = spec.center;

  std::vector<std::size_t> out;
  const int z0 = std::max(0, c[0] - half[0]), z1 = std::min(dims.nz - 1, c[0] + half[0]);
  const int y0 = std::max(0, c[1] - half[1]), y1 = std::min(dims.ny - 1, c[1] + half[1]);
  const int x0 = std::max(0, c[2] - half[2]), x1 = std::min(dims.nx - 1, c[2] + half[2]);
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const std::array<double, 3> p{(z - c[0]) * sp[0], (y - c[1]) * sp[1], (x - c[2]) * sp[2]};
        double s = 0.0;
        for (int j = 0; j < 3; ++j) {
          // body coordinate j = (R^T p)_j
          const double q = r[0][j] * p[0] + r[1][j] * p[1] + r[2][j] * p[2];
          s += (q * inv_a[j]) * (q * inv_a[j]);
        }
        if (s <= 1.0) out.push_back(dims.index(z, y, x));
      }
  return out;
}

Placement place_nodule(const EllipsoidSpec& spec, const SemanticLayout& lung, const Spacing& spacing,
                       Rng& rng, const LayoutConfig& cfg) {
  const Dims& d = lung.dims();
  const auto half = ellipsoid_half_extent(spec, spacing);

  std::vector<std::size_t> candidates;
  for (int z = half[0]; z < d.nz - half[0]; ++z)
    for (int y = half[1]; y < d.ny - half[1]; ++y)
      for (int x = half[2]; x < d.nx - half[2]; ++x)
        if (lung.at(z, y, x) == Label::lung) candidates.push_back(d.index(z, y, x));
  if (candidates.empty())
    throw PlacementError("no lung voxel can host a " + std::to_string(spec.diameter_mm) +
                         " mm nodule inside a " + to_string(d) + " layout");

  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  for (int attempt = 0; attempt < cfg.max_placements; ++attempt) {
    const std::size_t i = candidates[pick(rng)];
    EllipsoidSpec placed = spec;
    const int plane = d.ny * d.nx;
    placed.center = {static_cast<int>(i / plane), static_cast<int>(i % plane) / d.nx,
                     static_cast<int>(i % d.nx)};
    const auto voxels = rasterize_ellipsoid(placed, d, spacing);
    const auto on_lung = std::count_if(voxels.begin(), voxels.end(),
                                       [&](std::size_t v) { return lung[v] == Label::lung; });
    if (static_cast<double>(on_lung) < cfg.min_lung_overlap * static_cast<double>(voxels.size()))
      continue;
    Placement out{lung, placed, voxels.size()};
    for (std::size_t v : voxels) out.layout.set(v, Label::nodule);
    return out;
  }
  throw PlacementError("no placement with " + std::to_string(cfg.min_lung_overlap * 100.0) +
                       "% lung overlap after " + std::to_string(cfg.max_placements) + " attempts");
}

namespace {

// Inclusive 3D prefix sums; box() counts matching voxels in a region.
class PrefixCount {
public:
  template <typename Pred>
  PrefixCount(const SemanticLayout& l, Pred pred) : d_(l.dims()) {
    sums_.assign(static_cast<std::size_t>(d_.nz + 1) * (d_.ny + 1) * (d_.nx + 1), 0);
    for (int z = 0; z < d_.nz; ++z)
      for (int y = 0; y < d_.ny; ++y)
        for (int x = 0; x < d_.nx; ++x)
          at(z + 1, y + 1, x + 1) = (pred(l.at(z, y, x)) ? 1 : 0) + at(z, y + 1, x + 1) +
                                    at(z + 1, y, x + 1) + at(z + 1, y + 1, x) - at(z, y, x + 1) -
                                    at(z, y + 1, x) - at(z + 1, y, x) + at(z, y, x);
  }

  std::int64_t box(const CropRegion& r) const {
    const int z0 = r.origin[0], y0 = r.origin[1], x0 = r.origin[2];
    const int z1 = z0 + r.size.nz, y1 = y0 + r.size.ny, x1 = x0 + r.size.nx;
    return at(z1, y1, x1) - at(z0, y1, x1) - at(z1, y0, x1) - at(z1, y1, x0) + at(z0, y0, x1) +
           at(z0, y1, x0) + at(z1, y0, x0) - at(z0, y0, x0);
  }

private:
  std::int64_t& at(int z, int y, int x) {
    return sums_[(static_cast<std::size_t>(z) * (d_.ny + 1) + y) * (d_.nx + 1) + x];
  }
  std::int64_t at(int z, int y, int x) const {
    return sums_[(static_cast<std::size_t>(z) * (d_.ny + 1) + y) * (d_.nx + 1) + x];
  }

  Dims d_;
  std::vector<std::int64_t> sums_;
};

}  // namespace

CropRegion pick_healthy_crop(const SemanticLayout& layout, const SemanticLayout& existing_nodules,
                             Dims size, Rng& rng) {
  const Dims& d = layout.dims();
  if (!(existing_nodules.dims() == d))
    throw ArgumentError("nodule layout dims " + to_string(existing_nodules.dims()) +
                        " differ from layout dims " + to_string(d));
  if (!size.positive() || size.nz > d.nz || size.ny > d.ny || size.nx > d.nx)
    throw ArgumentError("crop size " + to_string(size) + " does not fit in " + to_string(d));

  const PrefixCount lung(layout, [](Label l) { return l == Label::lung; });
  const PrefixCount nodules(existing_nodules, [](Label l) { return l == Label::nodule; });
  const double min_lung = kMinCropLungFraction * static_cast<double>(size.count());

  std::uniform_int_distribution<int> oz(0, d.nz - size.nz), oy(0, d.ny - size.ny),
      ox(0, d.nx - size.nx);
  for (int attempt = 0; attempt < kCropAttempts; ++attempt) {
    CropRegion r{{oz(rng), oy(rng), ox(rng)}, size};
    if (nodules.box(r) == 0 && static_cast<double>(lung.box(r)) >= min_lung) return r;
  }
  throw SearchExhaustedError("no nodule-free crop of " + to_string(size) + " with >= 5% lung after " +
                             std::to_string(kCropAttempts) + " attempts");
}

void paint_nodule(VoxelVolume& v, const SemanticLayout& layout, double intensity, double texture_sd,
                  Rng& rng) {
  if (!(v.dims() == layout.dims())) throw ArgumentError("volume and layout dims differ");
  std::normal_distribution<double> tex(0.0, texture_sd);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (layout.is_nodule(i)) v[i] = std::clamp(intensity + (texture_sd > 0 ? tex(rng) : 0.0), -1.0, 1.0);
}

std::string spec_to_json_line(const EllipsoidSpec& spec) {
  nlohmann::json j{{"class", to_string(spec.nodule_class)},
                   {"diameter_mm", spec.diameter_mm},
                   {"center", spec.center},
                   {"semi_axes_mm", spec.semi_axes_mm},
                   {"rotation", spec.rotation}};
  return j.dump();
}

void write_spec_log(std::span<const EllipsoidSpec> specs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& s : specs) out << spec_to_json_line(s) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace lungddpm
