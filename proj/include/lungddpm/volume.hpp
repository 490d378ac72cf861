#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lungddpm/alloc_tracker.hpp"

namespace lungddpm {

/// Voxel grid extents, z outermost and x innermost.
struct Dims {
  int nz = 0, ny = 0, nx = 0;

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(nz) * static_cast<std::size_t>(ny) *
           static_cast<std::size_t>(nx);
  }
  std::size_t index(int z, int y, int x) const noexcept {
    return (static_cast<std::size_t>(z) * ny + static_cast<std::size_t>(y)) * nx +
           static_cast<std::size_t>(x);
  }
  bool positive() const noexcept { return nz > 0 && ny > 0 && nx > 0; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Voxel size in millimetres.
struct Spacing {
  double sz = 1.0, sy = 1.0, sx = 1.0;
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

std::string to_string(const Dims& d);

/// Scalar intensity volume in normalized units, [-1, 1] for CT-derived data.
class VoxelVolume {
public:
  using Buffer = std::vector<double, TrackingAllocator<double>>;

  VoxelVolume() = default;
  explicit VoxelVolume(Dims dims, Spacing spacing = {}, double fill = 0.0);
  VoxelVolume(Dims dims, Spacing spacing, Buffer data);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& at(int z, int y, int x) { return data_[dims_.index(z, y, x)]; }
  double at(int z, int y, int x) const { return data_[dims_.index(z, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const VoxelVolume&, const VoxelVolume&) = default;

private:
  Dims dims_{};
  Spacing spacing_{};
  Buffer data_;
};

enum class Label : std::uint8_t { background = 0, lung = 1, nodule = 2 };

/// Per-voxel anatomical labels.
class SemanticLayout {
public:
  using Buffer = std::vector<std::uint8_t, TrackingAllocator<std::uint8_t>>;

  SemanticLayout() = default;
  explicit SemanticLayout(Dims dims, Spacing spacing = {}, Label fill = Label::background);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::size_t size() const noexcept { return labels_.size(); }

  Label at(int z, int y, int x) const { return static_cast<Label>(labels_[dims_.index(z, y, x)]); }
  void set(int z, int y, int x, Label l) { labels_[dims_.index(z, y, x)] = static_cast<std::uint8_t>(l); }
  Label operator[](std::size_t i) const { return static_cast<Label>(labels_[i]); }
  void set(std::size_t i, Label l) { labels_[i] = static_cast<std::uint8_t>(l); }

  std::span<const std::uint8_t> raw() const noexcept { return labels_; }
  std::span<std::uint8_t> raw() noexcept { return labels_; }

  bool is_nodule(std::size_t i) const noexcept { return labels_[i] == static_cast<std::uint8_t>(Label::nodule); }
  std::size_t count(Label l) const noexcept;

  friend bool operator==(const SemanticLayout&, const SemanticLayout&) = default;

private:
  Dims dims_{};
  Spacing spacing_{};
  Buffer labels_;
};

/// Axis-aligned box inside a parent grid.
struct CropRegion {
  std::array<int, 3> origin{0, 0, 0};  // z, y, x
  Dims size{};

  bool fits(const Dims& parent) const noexcept;
  bool contains(int z, int y, int x) const noexcept {
    return z >= origin[0] && z < origin[0] + size.nz && y >= origin[1] &&
           y < origin[1] + size.ny && x >= origin[2] && x < origin[2] + size.nx;
  }
  friend bool operator==(const CropRegion&, const CropRegion&) = default;
};

VoxelVolume crop(const VoxelVolume& v, const CropRegion& r);
SemanticLayout crop(const SemanticLayout& v, const CropRegion& r);
VoxelVolume paste(const VoxelVolume& parent, const VoxelVolume& patch, const CropRegion& r);
SemanticLayout paste(const SemanticLayout& parent, const SemanticLayout& patch, const CropRegion& r);

/// Resamples to isotropic `target_mm` spacing. Output voxel i sits at
/// physical position i * target_mm (origin-aligned); positions past the last
/// source voxel clamp to the edge. Trilinear for intensities.
VoxelVolume resample_isotropic(const VoxelVolume& v, double target_mm);
/// Nearest-neighbour variant for label maps.
SemanticLayout resample_isotropic(const SemanticLayout& v, double target_mm);

/// Affine map from Hounsfield units to [-1, 1] using the window [-1000, 400].
inline constexpr double kHuWindowLow = -1000.0;
inline constexpr double kHuWindowHigh = 400.0;
double hu_to_unit(double hu) noexcept;
double unit_to_hu(double u) noexcept;

/// Procedural thorax: two ellipsoidal lungs in soft tissue, with vessel-like
/// tubes inside the lungs. Deterministic in `seed`; dims must be >= 16 per axis.
/// Geometry is defined in voxels; `spacing` is only attached as metadata.
std::pair<VoxelVolume, SemanticLayout> make_phantom(std::uint64_t seed, Dims dims,
                                                    Spacing spacing = {});

inline constexpr double kLungIntensity = -0.9;
inline constexpr double kTissueIntensity = 0.1;
inline constexpr double kVesselIntensity = 0.5;

// Binary volume files ("LDPV"): magic, u32 version, u32 dtype, u32 nz/ny/nx,
// f32 spacing z/y/x, then the payload in z-major order, little-endian.
inline constexpr std::uint32_t kVolumeFormatVersion = 1;
enum class VolumeDtype : std::uint32_t { float32 = 0, uint8 = 1 };
inline constexpr std::size_t kVolumeHeaderBytes = 4 + 4 + 4 + 12 + 12;

/// Intensities are stored as f32; reading back yields the f32-rounded values.
std::vector<std::uint8_t> encode_volume(const VoxelVolume& v);
std::vector<std::uint8_t> encode_layout(const SemanticLayout& l);
VoxelVolume decode_volume(std::span<const std::uint8_t> bytes);
SemanticLayout decode_layout(std::span<const std::uint8_t> bytes);

void write_volume(const VoxelVolume& v, const std::filesystem::path& path);
void write_layout(const SemanticLayout& l, const std::filesystem::path& path);
VoxelVolume read_volume(const std::filesystem::path& path);
SemanticLayout read_layout(const std::filesystem::path& path);

}  // namespace lungddpm
