#include "lungddpm/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include "lungddpm/errors.hpp"

namespace lungddpm {

std::string to_string(const Dims& d) {
  return std::to_string(d.nz) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nx);
}

VoxelVolume::VoxelVolume(Dims dims, Spacing spacing, double fill)
    : dims_(dims), spacing_(spacing) {
  if (!dims.positive()) throw ArgumentError("volume dims must be positive, got " + to_string(dims));
  if (!(spacing.sz > 0 && spacing.sy > 0 && spacing.sx > 0))
    throw ArgumentError("volume spacing must be positive");
  data_.assign(dims.count(), fill);
}

VoxelVolume::VoxelVolume(Dims dims, Spacing spacing, Buffer data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (!dims.positive()) throw ArgumentError("volume dims must be positive, got " + to_string(dims));
  if (!(spacing.sz > 0 && spacing.sy > 0 && spacing.sx > 0))
    throw ArgumentError("volume spacing must be positive");
  if (data_.size() != dims.count())
    throw ArgumentError("volume data length " + std::to_string(data_.size()) +
                        " does not match dims " + to_string(dims));
}

bool VoxelVolume::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

SemanticLayout::SemanticLayout(Dims dims, Spacing spacing, Label fill)
    : dims_(dims), spacing_(spacing) {
  if (!dims.positive()) throw ArgumentError("layout dims must be positive, got " + to_string(dims));
  if (!(spacing.sz > 0 && spacing.sy > 0 && spacing.sx > 0))
    throw ArgumentError("layout spacing must be positive");
  labels_.assign(dims.count(), static_cast<std::uint8_t>(fill));
}

std::size_t SemanticLayout::count(Label l) const noexcept {
  return static_cast<std::size_t>(
      std::count(labels_.begin(), labels_.end(), static_cast<std::uint8_t>(l)));
}

bool CropRegion::fits(const Dims& parent) const noexcept {
  return size.positive() && origin[0] >= 0 && origin[1] >= 0 && origin[2] >= 0 &&
         origin[0] + size.nz <= parent.nz && origin[1] + size.ny <= parent.ny &&
         origin[2] + size.nx <= parent.nx;
}

namespace {

void require_fits(const CropRegion& r, const Dims& parent) {
  if (!r.fits(parent))
    throw ArgumentError("crop region origin (" + std::to_string(r.origin[0]) + "," +
                        std::to_string(r.origin[1]) + "," + std::to_string(r.origin[2]) +
                        ") size " + to_string(r.size) + " outside parent " + to_string(parent));
}

// Calls f(parent_offset, patch_offset) for every x-row of the region.
template <typename F>
void for_each_row(const Dims& parent, const CropRegion& r, F&& f) {
  for (int z = 0; z < r.size.nz; ++z)
    for (int y = 0; y < r.size.ny; ++y)
      f(parent.index(z + r.origin[0], y + r.origin[1], r.origin[2]), r.size.index(z, y, 0));
}

}  // namespace

VoxelVolume crop(const VoxelVolume& v, const CropRegion& r) {
  require_fits(r, v.dims());
  VoxelVolume out(r.size, v.spacing());
  auto src = v.values();
  auto dst = out.values();
  for_each_row(v.dims(), r, [&](auto p, auto q) { std::copy_n(src.begin() + p, r.size.nx, dst.begin() + q); });
  return out;
}

SemanticLayout crop(const SemanticLayout& v, const CropRegion& r) {
  require_fits(r, v.dims());
  SemanticLayout out(r.size, v.spacing());
  auto src = v.raw();
  auto dst = out.raw();
  for_each_row(v.dims(), r, [&](auto p, auto q) { std::copy_n(src.begin() + p, r.size.nx, dst.begin() + q); });
  return out;
}

VoxelVolume paste(const VoxelVolume& parent, const VoxelVolume& patch, const CropRegion& r) {
  require_fits(r, parent.dims());
  if (patch.dims() != r.size)
    throw ArgumentError("patch dims " + to_string(patch.dims()) + " differ from region size " +
                        to_string(r.size));
  VoxelVolume out = parent;
  auto dst = out.values();
  auto src = patch.values();
  for_each_row(out.dims(), r, [&](auto p, auto q) { std::copy_n(src.begin() + q, r.size.nx, dst.begin() + p); });
  return out;
}

SemanticLayout paste(const SemanticLayout& parent, const SemanticLayout& patch, const CropRegion& r) {
  require_fits(r, parent.dims());
  if (patch.dims() != r.size)
    throw ArgumentError("patch dims " + to_string(patch.dims()) + " differ from region size " +
                        to_string(r.size));
  SemanticLayout out = parent;
  auto dst = out.raw();
  auto src = patch.raw();
  for_each_row(out.dims(), r, [&](auto p, auto q) { std::copy_n(src.begin() + q, r.size.nx, dst.begin() + p); });
  return out;
}

namespace {

int resampled_extent(int n, double spacing, double target) {
  return std::max(1, static_cast<int>(std::lround(n * spacing / target)));
}

struct AxisSample {
  int i0, i1;
  double w;  // weight of i1
};

AxisSample axis_sample(int i_out, double target, double spacing, int n) {
  const double pos = std::min(i_out * target / spacing, static_cast<double>(n - 1));
  const int i0 = static_cast<int>(std::floor(pos));
  const int i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, pos - i0};
}

int nearest_index(int i_out, double target, double spacing, int n) {
  const double pos = i_out * target / spacing;
  return std::clamp(static_cast<int>(std::lround(pos)), 0, n - 1);
}

}  // namespace

VoxelVolume resample_isotropic(const VoxelVolume& v, double target_mm) {
  if (!(target_mm > 0)) throw ArgumentError("resample target spacing must be positive");
  const auto& d = v.dims();
  const auto& s = v.spacing();
  const Dims od{resampled_extent(d.nz, s.sz, target_mm), resampled_extent(d.ny, s.sy, target_mm),
                resampled_extent(d.nx, s.sx, target_mm)};
  VoxelVolume out(od, Spacing{target_mm, target_mm, target_mm});
  if (od == d && s == out.spacing()) return v;

  std::vector<AxisSample> ys(od.ny), xs(od.nx);
  for (int y = 0; y < od.ny; ++y) ys[y] = axis_sample(y, target_mm, s.sy, d.ny);
  for (int x = 0; x < od.nx; ++x) xs[x] = axis_sample(x, target_mm, s.sx, d.nx);
  for (int z = 0; z < od.nz; ++z) {
    const auto az = axis_sample(z, target_mm, s.sz, d.nz);
    for (int y = 0; y < od.ny; ++y) {
      const auto ay = ys[y];
      for (int x = 0; x < od.nx; ++x) {
        const auto ax = xs[x];
        auto lerp_x = [&](int zz, int yy) {
          return (1.0 - ax.w) * v.at(zz, yy, ax.i0) + ax.w * v.at(zz, yy, ax.i1);
        };
        auto lerp_y = [&](int zz) { return (1.0 - ay.w) * lerp_x(zz, ay.i0) + ay.w * lerp_x(zz, ay.i1); };
        out.at(z, y, x) = (1.0 - az.w) * lerp_y(az.i0) + az.w * lerp_y(az.i1);
      }
    }
  }
  return out;
}

SemanticLayout resample_isotropic(const SemanticLayout& v, double target_mm) {
  if (!(target_mm > 0)) throw ArgumentError("resample target spacing must be positive");
  const auto& d = v.dims();
  const auto& s = v.spacing();
  const Dims od{resampled_extent(d.nz, s.sz, target_mm), resampled_extent(d.ny, s.sy, target_mm),
                resampled_extent(d.nx, s.sx, target_mm)};
  SemanticLayout out(od, Spacing{target_mm, target_mm, target_mm});
  for (int z = 0; z < od.nz; ++z) {
    const int sz = nearest_index(z, target_mm, s.sz, d.nz);
    for (int y = 0; y < od.ny; ++y) {
      const int sy = nearest_index(y, target_mm, s.sy, d.ny);
      for (int x = 0; x < od.nx; ++x) out.set(z, y, x, v.at(sz, sy, nearest_index(x, target_mm, s.sx, d.nx)));
    }
  }
  return out;
}

double hu_to_unit(double hu) noexcept {
  const double u = 2.0 * (hu - kHuWindowLow) / (kHuWindowHigh - kHuWindowLow) - 1.0;
  return std::clamp(u, -1.0, 1.0);
}

double unit_to_hu(double u) noexcept {
  return kHuWindowLow + (u + 1.0) * 0.5 * (kHuWindowHigh - kHuWindowLow);
}

std::pair<VoxelVolume, SemanticLayout> make_phantom(std::uint64_t seed, Dims dims,
                                                    Spacing spacing) {
  if (dims.nz < 16 || dims.ny < 16 || dims.nx < 16)
    throw ArgumentError("phantom dims must be at least 16 per axis, got " + to_string(dims));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::normal_distribution<double> texture(0.0, 0.02);

  struct Ellipsoid {
    std::array<double, 3> c, r;
    bool inside(double z, double y, double x) const {
      const double dz = (z - c[0]) / r[0], dy = (y - c[1]) / r[1], dx = (x - c[2]) / r[2];
      return dz * dz + dy * dy + dx * dx <= 1.0;
    }
  };
  std::array<Ellipsoid, 2> lungs;
  for (int k = 0; k < 2; ++k) {
    const double cx = (k == 0 ? 0.28 : 0.72) + jitter(rng);
    lungs[k].c = {(0.5 + jitter(rng)) * (dims.nz - 1), (0.5 + jitter(rng)) * (dims.ny - 1),
                  cx * (dims.nx - 1)};
    lungs[k].r = {0.40 * dims.nz * (1.0 + jitter(rng)), 0.36 * dims.ny * (1.0 + jitter(rng)),
                  0.19 * dims.nx * (1.0 + jitter(rng))};
  }

  VoxelVolume vol(dims, spacing, kTissueIntensity);
  SemanticLayout layout(dims, spacing);
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x)
        if (lungs[0].inside(z, y, x) || lungs[1].inside(z, y, x)) {
          vol.at(z, y, x) = kLungIntensity;
          layout.set(z, y, x, Label::lung);
        }

  // Vessel proxies: straight tubes between two random points of each lung.
  constexpr int kVesselsPerLung = 3;
  std::uniform_real_distribution<double> unit(-0.7, 0.7);
  std::uniform_real_distribution<double> radius(0.6, 1.2);
  for (const auto& lung : lungs) {
    for (int v = 0; v < kVesselsPerLung; ++v) {
      std::array<double, 3> a, b;
      for (int i = 0; i < 3; ++i) {
        a[i] = lung.c[i] + unit(rng) * lung.r[i];
        b[i] = lung.c[i] + unit(rng) * lung.r[i];
      }
      const double rad = radius(rng);
      std::array<double, 3> ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
      const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
      for (int z = 0; z < dims.nz; ++z)
        for (int y = 0; y < dims.ny; ++y)
          for (int x = 0; x < dims.nx; ++x) {
            if (layout.at(z, y, x) != Label::lung) continue;
            const std::array<double, 3> ap{z - a[0], y - a[1], x - a[2]};
            double u = len2 > 0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2 : 0.0;
            u = std::clamp(u, 0.0, 1.0);
            double d2 = 0;
            for (int i = 0; i < 3; ++i) {
              const double e = ap[i] - u * ab[i];
              d2 += e * e;
            }
            if (d2 <= rad * rad) vol.at(z, y, x) = kVesselIntensity;
          }
    }
  }

  for (auto& v : vol.values()) v = std::clamp(v + texture(rng), -1.0, 1.0);
  return {std::move(vol), std::move(layout)};
}

// --- binary I/O ------------------------------------------------------------

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'L', 'D', 'P', 'V'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::span<const std::uint8_t> rest() const { return bytes_.subspan(pos_); }

private:
  void need(std::size_t n, const char* field) {
    if (remaining() < n)
      throw FormatError(std::string("truncated header reading ") + field, pos_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> encode_header(VolumeDtype dtype, const Dims& d, const Spacing& s) {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, kVolumeFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(dtype));
  put_u32(out, static_cast<std::uint32_t>(d.nz));
  put_u32(out, static_cast<std::uint32_t>(d.ny));
  put_u32(out, static_cast<std::uint32_t>(d.nx));
  put_f32(out, static_cast<float>(s.sz));
  put_f32(out, static_cast<float>(s.sy));
  put_f32(out, static_cast<float>(s.sx));
  return out;
}

struct Header {
  VolumeDtype dtype;
  Dims dims;
  Spacing spacing;
  std::span<const std::uint8_t> payload;
};

Header decode_header(std::span<const std::uint8_t> bytes, VolumeDtype expected) {
  if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw FormatError("bad magic, expected \"LDPV\"", 0);
  Reader r(bytes.subspan(0));
  r.u32("magic");
  const auto version_at = r.pos();
  if (const auto version = r.u32("version"); version != kVolumeFormatVersion)
    throw FormatError("unsupported version " + std::to_string(version), version_at);
  const auto dtype_at = r.pos();
  const auto dtype = r.u32("dtype");
  if (dtype > 1) throw FormatError("unknown dtype " + std::to_string(dtype), dtype_at);
  if (static_cast<VolumeDtype>(dtype) != expected)
    throw FormatError(std::string("dtype ") + std::to_string(dtype) + " where " +
                          std::to_string(static_cast<std::uint32_t>(expected)) + " was expected",
                      dtype_at);

  const auto dims_at = r.pos();
  const std::uint64_t nz = r.u32("nz"), ny = r.u32("ny"), nx = r.u32("nx");
  constexpr std::uint64_t kMaxAxis = std::numeric_limits<std::int32_t>::max();
  if (nz == 0 || ny == 0 || nx == 0 || nz > kMaxAxis || ny > kMaxAxis || nx > kMaxAxis)
    throw FormatError("invalid dims " + std::to_string(nz) + "x" + std::to_string(ny) + "x" +
                          std::to_string(nx),
                      dims_at);
  // Three 31-bit factors can overflow 64 bits; check in two steps.
  const std::uint64_t elem = dtype == 0 ? 4 : 1;
  const std::uint64_t plane = ny * nx;
  if (nz > std::numeric_limits<std::uint64_t>::max() / (plane * elem))
    throw FormatError("dimension overflow", dims_at);

  Spacing s;
  s.sz = r.f32("spacing_z");
  s.sy = r.f32("spacing_y");
  s.sx = r.f32("spacing_x");
  if (!(s.sz > 0 && s.sy > 0 && s.sx > 0) || !std::isfinite(s.sz) || !std::isfinite(s.sy) ||
      !std::isfinite(s.sx))
    throw FormatError("non-positive spacing", dims_at + 12);

  const std::uint64_t expected_bytes = nz * plane * elem;
  if (r.remaining() != expected_bytes)
    throw FormatError("payload length mismatch: expected " + std::to_string(expected_bytes) +
                          " bytes, found " + std::to_string(r.remaining()),
                      r.pos());
  return {static_cast<VolumeDtype>(dtype),
          Dims{static_cast<int>(nz), static_cast<int>(ny), static_cast<int>(nx)}, s, r.rest()};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

void write_file(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const VoxelVolume& v) {
  auto out = encode_header(VolumeDtype::float32, v.dims(), v.spacing());
  out.reserve(out.size() + 4 * v.size());
  for (double x : v.values()) put_f32(out, static_cast<float>(x));
  return out;
}

std::vector<std::uint8_t> encode_layout(const SemanticLayout& l) {
  auto out = encode_header(VolumeDtype::uint8, l.dims(), l.spacing());
  out.insert(out.end(), l.raw().begin(), l.raw().end());
  return out;
}

VoxelVolume decode_volume(std::span<const std::uint8_t> bytes) {
  const auto h = decode_header(bytes, VolumeDtype::float32);
  VoxelVolume::Buffer data(h.dims.count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t u = 0;
    for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(h.payload[4 * i + k]) << (8 * k);
    const float f = std::bit_cast<float>(u);
    if (!std::isfinite(f))
      throw FormatError("non-finite intensity", kVolumeHeaderBytes + 4 * i);
    data[i] = f;
  }
  return VoxelVolume(h.dims, h.spacing, std::move(data));
}

SemanticLayout decode_layout(std::span<const std::uint8_t> bytes) {
  const auto h = decode_header(bytes, VolumeDtype::uint8);
  SemanticLayout out(h.dims, h.spacing);
  for (std::size_t i = 0; i < h.payload.size(); ++i) {
    if (h.payload[i] > static_cast<std::uint8_t>(Label::nodule))
      throw FormatError("invalid label " + std::to_string(h.payload[i]), kVolumeHeaderBytes + i);
    out.raw()[i] = h.payload[i];
  }
  return out;
}

void write_volume(const VoxelVolume& v, const std::filesystem::path& path) { write_file(encode_volume(v), path); }
void write_layout(const SemanticLayout& l, const std::filesystem::path& path) { write_file(encode_layout(l), path); }
VoxelVolume read_volume(const std::filesystem::path& path) { return decode_volume(read_file(path)); }
SemanticLayout read_layout(const std::filesystem::path& path) { return decode_layout(read_file(path)); }

}  // namespace lungddpm
