#include "lungddpm/forward.hpp"

#include "lungddpm/errors.hpp"

namespace lungddpm {

VoxelVolume standard_normal(Dims dims, Spacing spacing, Rng& rng) {
  VoxelVolume out(dims, spacing);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : out.values()) v = n(rng);
  return out;
}

NoisyState q_sample(const VoxelVolume& x0, int t, const VoxelVolume& eps, const NoiseSchedule& s) {
  if (eps.dims() != x0.dims())
    throw ArgumentError("noise dims " + to_string(eps.dims()) + " differ from volume dims " +
                        to_string(x0.dims()));
  const double a = s.sqrt_alpha_bar(t);
  const double sig = s.sigma(t);
  NoisyState out{x0, t};
  if (a == 1.0 && sig == 0.0) return out;
  auto xv = out.x.values();
  auto ev = eps.values();
  for (std::size_t i = 0; i < xv.size(); ++i) xv[i] = a * xv[i] + sig * ev[i];
  return out;
}

NoisyState invert_reference(const VoxelVolume& x, int t_start, const VoxelVolume& eps,
                            const NoiseSchedule& s) {
  return q_sample(x, t_start, eps, s);
}

NoisyState masked_mix(const NoisyState& bg, const VoxelVolume& noise, const SemanticLayout& m) {
  if (noise.dims() != bg.x.dims() || m.dims() != bg.x.dims())
    throw ArgumentError("masked_mix dims disagree: state " + to_string(bg.x.dims()) + ", noise " +
                        to_string(noise.dims()) + ", mask " + to_string(m.dims()));
  NoisyState out = bg;
  auto xv = out.x.values();
  auto nv = noise.values();
  for (std::size_t i = 0; i < xv.size(); ++i)
    if (m.is_nodule(i)) xv[i] = nv[i];
  return out;
}

}  // namespace lungddpm
