#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "lungddpm/architecture.hpp"
#include "lungddpm/forward.hpp"
#include "lungddpm/predictor.hpp"

namespace lungddpm {

/// Three-layer fully convolutional noise predictor.
///
/// Input channels are the noisy volume and the binary nodule mask. Layers:
///   conv 3^3, 2 -> 8, bias, + projected sinusoidal time features, SiLU
///   conv 3^3, 8 -> 8, bias, SiLU
///   conv 3^3, 8 -> 1, no bias
/// Flat parameter order (also the checkpoint order):
///   conv1.weight[8][2][27], conv1.bias[8], time.weight[8][8],
///   conv2.weight[8][8][27], conv2.bias[8], conv3.weight[1][8][27]
/// Conv weights are indexed [out][in][kz*9 + ky*3 + kx].
class TinyConvPredictor final : public NoisePredictor {
public:
  static constexpr int kHidden = 8;
  static constexpr int kTimeFeatures = 8;
  static constexpr int kTaps = 27;
  static constexpr std::size_t kParameterCount =
      kHidden * 2 * kTaps + kHidden + kHidden * kTimeFeatures + kHidden * kHidden * kTaps +
      kHidden + kHidden * kTaps;

  /// Zero-initialized network for a schedule horizon T.
  explicit TinyConvPredictor(int T);
  /// Random initialization, deterministic in `seed`.
  static TinyConvPredictor initialized(int T, std::uint64_t seed);

  TinyConvPredictor(const TinyConvPredictor& other);
  TinyConvPredictor& operator=(const TinyConvPredictor& other);

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  static ArchitectureDescriptor architecture();

  /// Mean squared error between the prediction for (x_t, t, mask) and `eps`.
  /// When `grad` is non-null it receives dLoss/dparam (resized as needed).
  double loss_and_gradient(const VoxelVolume& x_t, const SemanticLayout& mask, int t,
                           const VoxelVolume& eps, std::vector<double>* grad) const;

  /// One Adam step on `grad`. Moments persist across calls.
  void apply_adam(std::span<const double> grad, double lr);

  int horizon_T() const noexcept { return T_; }

protected:
  VoxelVolume do_predict(const VoxelVolume& x_t, int t, const SemanticLayout& c) const override;
  int horizon() const noexcept override { return T_; }

private:
  int T_;
  std::vector<double> params_;
  std::vector<double> adam_m_, adam_v_;
  std::uint64_t adam_step_ = 0;
};

/// One training iteration: t ~ U{1..T}, eps ~ N(0, I), x_t by q_sample, MSE
/// against the prediction on (x_t, mask), then an Adam update. Returns the
/// loss before the update.
double train_step(TinyConvPredictor& p, const VoxelVolume& x0, const SemanticLayout& m, Rng& rng,
                  const NoiseSchedule& s, double lr);

struct TrainingSample {
  VoxelVolume patch;
  SemanticLayout layout;
};

/// Runs `epochs` passes over `dataset` (shuffled per epoch). Returns the
/// per-step loss curve; deterministic in `seed`.
std::vector<double> train(TinyConvPredictor& p, std::span<const TrainingSample> dataset, int epochs,
                          double lr, std::uint64_t seed, const NoiseSchedule& s);

/// CSV with header "step,loss".
void write_loss_csv(std::span<const double> losses, const std::filesystem::path& path);

// Checkpoint: "LDPW", u32 version, u32 parameter count, f32 parameters, little-endian.
inline constexpr std::uint32_t kWeightsFormatVersion = 1;
std::vector<std::uint8_t> encode_weights(const TinyConvPredictor& p);
void decode_weights(TinyConvPredictor& p, std::span<const std::uint8_t> bytes);
void save_weights(const TinyConvPredictor& p, const std::filesystem::path& path);
TinyConvPredictor load_weights(const std::filesystem::path& path, int T);

}  // namespace lungddpm
