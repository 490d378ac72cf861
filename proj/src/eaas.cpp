#include "lungddpm/eaas.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <thread>

#include <json.hpp>

#include "lungddpm/errors.hpp"

namespace lungddpm {

void EaasRequest::validate() const {
  if (!reference || !lung_layout || !predictor)
    throw ArgumentError("EAAS request needs a reference, a lung layout and a predictor");
  if (!(reference->dims() == lung_layout->dims()))
    throw ArgumentError("reference dims " + to_string(reference->dims()) + " differ from layout dims " +
                        to_string(lung_layout->dims()));
  const Dims& d = reference->dims();
  if (!patch_size.positive() || patch_size.nz > d.nz || patch_size.ny > d.ny || patch_size.nx > d.nx)
    throw ArgumentError("patch size " + to_string(patch_size) + " does not fit in reference " +
                        to_string(d));
  solver.validate(schedule);
  layout.validate();
}

EaasResult run_eaas(const EaasRequest& req) {
  req.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(req.seed);
  const VoxelVolume& reference = *req.reference;
  const SemanticLayout& lung = *req.lung_layout;

  // (1) nodule layout inside a healthy crop; a spec that does not fit is redrawn.
  std::optional<Placement> placed;
  CropRegion region;
  int attempts = 0;
  std::string last_failure;
  while (!placed && attempts < kLayoutAttempts) {
    ++attempts;
    const EllipsoidSpec spec = sample_nodule_spec(req.layout, rng);
    region = pick_healthy_crop(lung, lung, req.patch_size, rng);
    try {
      placed = place_nodule(spec, crop(lung, region), reference.spacing(), rng, req.layout);
    } catch (const PlacementError& e) {
      last_failure = e.what();
    }
  }
  if (!placed)
    throw PlacementError("no nodule placed after " + std::to_string(kLayoutAttempts) +
                         " spec draws; last: " + last_failure);

  // (2) invert the reference patch and replace the nodule region by fresh noise.
  const VoxelVolume x = crop(reference, region);
  const SemanticLayout& m = placed->layout;
  const int t_start = req.solver.start(req.schedule);
  const auto bg = invert_reference(x, t_start, standard_normal(x.dims(), x.spacing(), rng), req.schedule);
  const auto init = masked_mix(bg, standard_normal(x.dims(), x.spacing(), rng), m);

  EaasResult out;
  out.patch = pulmonary_solve(init, x, m, *req.predictor, req.solver, rng, req.schedule, &out.steps);

  // (3) fusion at the same coordinates.
  out.full_volume = paste(reference, out.patch, region);
  out.full_layout = paste(lung, m, region);
  out.crop = region;
  out.provenance.seed = req.seed;
  out.provenance.nfe = out.steps.nfe_total();
  out.provenance.layout_attempts = attempts;
  out.provenance.nodule = placed->spec;
  // Report the centre in full-volume coordinates.
  for (int i = 0; i < 3; ++i) out.provenance.nodule.center[i] += region.origin[i];
  out.provenance.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<BatchItem> run_batch(const std::vector<EaasRequest>& requests, int parallelism) {
  if (parallelism < 1) throw ArgumentError("parallelism must be positive");
  std::vector<BatchItem> items(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        items[i].result = run_eaas(requests[i]);
      } catch (const std::exception& e) {
        items[i].error = std::current_exception();
        items[i].error_message = "request " + std::to_string(i) + ": " + e.what();
      }
    }
  };

  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(parallelism), requests.size());
  if (n_threads <= 1) {
    worker();
    return items;
  }
  std::vector<std::jthread> pool;
  pool.reserve(n_threads);
  for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  pool.clear();  // joins
  return items;
}

namespace {

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

std::size_t fusion_locality_violations(const EaasResult& r, const VoxelVolume& reference) {
  const Dims& d = reference.dims();
  if (!(r.full_volume.dims() == d) || !(r.full_layout.dims() == d))
    throw ArgumentError("result dims differ from the reference");
  std::size_t bad = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        if (r.crop.contains(z, y, x)) continue;
        const std::size_t i = d.index(z, y, x);
        if (!same_bits(r.full_volume[i], reference[i])) ++bad;
        if (r.full_layout.is_nodule(i)) ++bad;
      }
  return bad;
}

std::size_t off_mask_changes(const EaasResult& r, const VoxelVolume& reference) {
  if (!(r.full_volume.dims() == reference.dims())) throw ArgumentError("result dims differ from the reference");
  std::size_t bad = 0;
  for (std::size_t i = 0; i < reference.size(); ++i)
    if (!same_bits(r.full_volume[i], reference[i]) && !r.full_layout.is_nodule(i)) ++bad;
  return bad;
}

std::string provenance_json(const EaasResult& r, const EaasRequest& req) {
  const auto& p = r.provenance;
  nlohmann::json j{
      {"seed", p.seed},
      {"nfe", p.nfe},
      {"wall_time_s", p.wall_time_s},
      {"layout_attempts", p.layout_attempts},
      {"crop", {{"origin", r.crop.origin}, {"size", {r.crop.size.nz, r.crop.size.ny, r.crop.size.nx}}}},
      {"nodule", nlohmann::json::parse(spec_to_json_line(p.nodule))},
      {"solver",
       {{"method", to_string(req.solver.method)},
        {"steps", req.solver.steps},
        {"gamma", req.solver.gamma},
        {"blend_mode", to_string(req.solver.blend_mode)},
        {"t_start", req.solver.start(req.schedule)}}},
  };
  return j.dump(2);
}

}  // namespace lungddpm
