#pragma once

#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lungddpm/layout.hpp"
#include "lungddpm/predictor.hpp"
#include "lungddpm/solver.hpp"

namespace lungddpm {

/// One synthesis job. Inputs are shared read-only so a batch over the same
/// reference does not copy it per request.
struct EaasRequest {
  std::shared_ptr<const VoxelVolume> reference;
  std::shared_ptr<const SemanticLayout> lung_layout;
  Dims patch_size{64, 64, 64};
  std::shared_ptr<const NoisePredictor> predictor;
  NoiseSchedule schedule = make_schedule(ScheduleKind::cosine, 1000);
  SolverConfig solver;
  LayoutConfig layout;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::uint64_t nfe = 0;
  double wall_time_s = 0.0;
  int layout_attempts = 0;
  EllipsoidSpec nodule;
};

struct EaasResult {
  VoxelVolume full_volume;
  SemanticLayout full_layout;
  CropRegion crop;
  VoxelVolume patch;
  Provenance provenance;
  StepLog steps;
};

/// Spec resampling budget when a drawn nodule cannot be placed in the crop.
inline constexpr int kLayoutAttempts = 50;

/// Layout -> healthy crop -> inversion at t_start -> masked mix -> pulmonary
/// solve -> paste. Deterministic in `req.seed` when gamma = 0.
EaasResult run_eaas(const EaasRequest& req);

/// Per-request outcome of a batch; exactly one of result / error is set.
struct BatchItem {
  std::optional<EaasResult> result;
  std::exception_ptr error;
  std::string error_message;
};

/// Runs requests on up to `parallelism` threads. Results are order-aligned
/// and identical to standalone run_eaas calls.
std::vector<BatchItem> run_batch(const std::vector<EaasRequest>& requests, int parallelism);

/// Number of voxels that violate fusion locality: voxels outside the crop
/// that differ bitwise from the reference, plus nodule labels outside the crop.
std::size_t fusion_locality_violations(const EaasResult& r, const VoxelVolume& reference);

/// Voxels that differ from the reference but are not labelled nodule.
std::size_t off_mask_changes(const EaasResult& r, const VoxelVolume& reference);

std::string provenance_json(const EaasResult& r, const EaasRequest& req);

}  // namespace lungddpm
