#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lungddpm/forward.hpp"
#include "lungddpm/volume.hpp"

namespace lungddpm {

enum class NoduleClass { small = 0, medium = 1, large = 2 };

std::string to_string(NoduleClass c);
NoduleClass nodule_class_from_string(const std::string& name);

/// Diameter interval in mm, [lo, hi).
struct DiameterBounds {
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr double kMinNoduleDiameterMm = 1.41;
inline constexpr double kMaxNoduleDiameterMm = 57.42;

struct LayoutConfig {
  std::array<double, 3> class_probs{0.19, 0.62, 0.19};
  std::array<DiameterBounds, 3> diameter_bounds{
      DiameterBounds{kMinNoduleDiameterMm, 6.0}, DiameterBounds{6.0, 16.0},
      DiameterBounds{16.0, kMaxNoduleDiameterMm}};
  /// Range of the two minor semi-axes relative to the major one.
  std::array<double, 2> axis_ratio_range{0.6, 1.0};
  /// Minimum fraction of nodule voxels that must land on lung labels.
  double min_lung_overlap = 0.9;
  int max_placements = 100;

  void validate() const;
};

/// Rotated ellipsoid. Semi-axes are along the body frame (z, y, x) before
/// rotation; `rotation` holds z-y-x Euler angles in radians.
struct EllipsoidSpec {
  NoduleClass nodule_class = NoduleClass::medium;
  std::array<int, 3> center{0, 0, 0};
  std::array<double, 3> semi_axes_mm{1.0, 1.0, 1.0};
  std::array<double, 3> rotation{0.0, 0.0, 0.0};
  double diameter_mm = 2.0;
};

/// Draws class, diameter (uniform within the class) and shape. The centre is
/// left at the origin; placement assigns it.
EllipsoidSpec sample_nodule_spec(const LayoutConfig& cfg, Rng& rng);

/// Half extents, in voxels, of the axis-aligned box enclosing the ellipsoid.
std::array<int, 3> ellipsoid_half_extent(const EllipsoidSpec& spec, const Spacing& spacing);

/// Flat indices of the voxels whose centres lie inside the ellipsoid, clipped
/// to `dims`, in increasing order.
std::vector<std::size_t> rasterize_ellipsoid(const EllipsoidSpec& spec, const Dims& dims,
                                             const Spacing& spacing);

struct Placement {
  SemanticLayout layout;  // input labels plus the new nodule
  EllipsoidSpec spec;     // with its centre assigned
  std::size_t voxels = 0;
};

/// Places the nodule at a random lung voxel such that its bounding box lies
/// inside the volume and at least `min_lung_overlap` of it is on lung.
/// Throws PlacementError when no candidate centre exists or after
/// `max_placements` rejected attempts.
Placement place_nodule(const EllipsoidSpec& spec, const SemanticLayout& lung, const Spacing& spacing,
                       Rng& rng, const LayoutConfig& cfg = {});

inline constexpr int kCropAttempts = 1000;
inline constexpr double kMinCropLungFraction = 0.05;

/// Uniformly random crop of `size` with no nodule voxel in `existing_nodules`
/// and at least 5% lung voxels in `layout`. Rejection sampling over
/// kCropAttempts origins; throws SearchExhaustedError when none qualifies.
CropRegion pick_healthy_crop(const SemanticLayout& layout, const SemanticLayout& existing_nodules,
                             Dims size, Rng& rng);

/// Overwrites voxels labelled nodule with `intensity` plus N(0, texture_sd) noise.
void paint_nodule(VoxelVolume& v, const SemanticLayout& layout, double intensity, double texture_sd,
                  Rng& rng);

/// {class, diameter_mm, center, semi_axes_mm, rotation} as one JSON line.
std::string spec_to_json_line(const EllipsoidSpec& spec);
void write_spec_log(std::span<const EllipsoidSpec> specs, const std::filesystem::path& path);

}  // namespace lungddpm
