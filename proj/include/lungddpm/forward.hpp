#pragma once

#include <random>

#include "lungddpm/schedule.hpp"
#include "lungddpm/volume.hpp"

namespace lungddpm {

using Rng = std::mt19937_64;

/// A volume at noise level t of some schedule.
struct NoisyState {
  VoxelVolume x;
  int t = 0;
};

/// Fills a volume of the given geometry with i.i.d. standard normal draws.
VoxelVolume standard_normal(Dims dims, Spacing spacing, Rng& rng);

/// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
NoisyState q_sample(const VoxelVolume& x0, int t, const VoxelVolume& eps, const NoiseSchedule& s);

/// Same computation as q_sample; the carrier of the background during sampling.
NoisyState invert_reference(const VoxelVolume& x, int t_start, const VoxelVolume& eps,
                            const NoiseSchedule& s);

/// Nodule voxels of `m` take `noise`, every other voxel keeps `bg`.
NoisyState masked_mix(const NoisyState& bg, const VoxelVolume& noise, const SemanticLayout& m);

}  // namespace lungddpm
