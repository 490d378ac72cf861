#include "lungddpm/tiny_conv.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "lungddpm/errors.hpp"

namespace lungddpm {

namespace {

using Scratch = std::vector<double, TrackingAllocator<double>>;

constexpr int H = TinyConvPredictor::kHidden;
constexpr int F = TinyConvPredictor::kTimeFeatures;
constexpr int K = TinyConvPredictor::kTaps;

// Offsets into the flat parameter vector.
constexpr std::size_t kW1 = 0;
constexpr std::size_t kB1 = kW1 + H * 2 * K;
constexpr std::size_t kWt = kB1 + H;
constexpr std::size_t kW2 = kWt + H * F;
constexpr std::size_t kB2 = kW2 + H * H * K;
constexpr std::size_t kW3 = kB2 + H;
static_assert(kW3 + H * K == TinyConvPredictor::kParameterCount);

struct Grid {
  explicit Grid(const Dims& d)
      : nz(d.nz), ny(d.ny), nx(d.nx), vox(d.count()), py(d.ny + 2), px(d.nx + 2),
        pvox(static_cast<std::size_t>(d.nz + 2) * py * px) {}
  int nz, ny, nx;
  std::size_t vox;
  int py, px;
  std::size_t pvox;

  std::size_t pidx(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * py + y) * px + x;
  }
};

// Writes `channels` unpadded channels into the interior of zeroed padded buffers.
void pad(const double* src, int channels, double* dst, const Grid& g) {
  std::fill(dst, dst + channels * g.pvox, 0.0);
  for (int c = 0; c < channels; ++c)
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        std::copy_n(src + c * g.vox + (static_cast<std::size_t>(z) * g.ny + y) * g.nx, g.nx,
                    dst + c * g.pvox + g.pidx(z + 1, y + 1, 1));
}

void unpad(const double* src, int channels, double* dst, const Grid& g) {
  for (int c = 0; c < channels; ++c)
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        std::copy_n(src + c * g.pvox + g.pidx(z + 1, y + 1, 1), g.nx,
                    dst + c * g.vox + (static_cast<std::size_t>(z) * g.ny + y) * g.nx);
}

// out[co] = bias[co] + sum_ci w[co][ci] (*) in[ci], same padding.
void conv_forward(const double* in_pad, int cin, double* out, int cout, const double* w,
                  const double* bias, const Grid& g) {
  for (int co = 0; co < cout; ++co) {
    double* o = out + co * g.vox;
    std::fill(o, o + g.vox, bias ? bias[co] : 0.0);
    for (int ci = 0; ci < cin; ++ci) {
      const double* in = in_pad + ci * g.pvox;
      const double* wk = w + (static_cast<std::size_t>(co) * cin + ci) * K;
      for (int k = 0; k < K; ++k) {
        const double wv = wk[k];
        if (wv == 0.0) continue;
        const int kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
        for (int z = 0; z < g.nz; ++z)
          for (int y = 0; y < g.ny; ++y) {
            double* orow = o + (static_cast<std::size_t>(z) * g.ny + y) * g.nx;
            const double* irow = in + g.pidx(z + kz, y + ky, kx);
            for (int x = 0; x < g.nx; ++x) orow[x] += wv * irow[x];
          }
      }
    }
  }
}

// Accumulates dw (and db) and, if din_pad is non-null, the padded input gradient.
void conv_backward(const double* in_pad, int cin, const double* dout, int cout, const double* w,
                   double* dw, double* db, double* din_pad, const Grid& g) {
  if (din_pad) std::fill(din_pad, din_pad + cin * g.pvox, 0.0);
  for (int co = 0; co < cout; ++co) {
    const double* d = dout + co * g.vox;
    if (db) db[co] += std::accumulate(d, d + g.vox, 0.0);
    for (int ci = 0; ci < cin; ++ci) {
      const double* in = in_pad + ci * g.pvox;
      double* din = din_pad ? din_pad + ci * g.pvox : nullptr;
      const std::size_t widx = (static_cast<std::size_t>(co) * cin + ci) * K;
      for (int k = 0; k < K; ++k) {
        const int kz = k / 9, ky = (k / 3) % 3, kx = k % 3;
        const double wv = w[widx + k];
        double acc = 0.0;
        for (int z = 0; z < g.nz; ++z)
          for (int y = 0; y < g.ny; ++y) {
            const double* drow = d + (static_cast<std::size_t>(z) * g.ny + y) * g.nx;
            const std::size_t p = g.pidx(z + kz, y + ky, kx);
            const double* irow = in + p;
            for (int x = 0; x < g.nx; ++x) acc += drow[x] * irow[x];
            if (din && wv != 0.0) {
              double* dirow = din + p;
              for (int x = 0; x < g.nx; ++x) dirow[x] += wv * drow[x];
            }
          }
        dw[widx + k] += acc;
      }
    }
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

std::array<double, F> time_features(int t) {
  std::array<double, F> f{};
  constexpr int half = F / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    f[k] = std::sin(t * freq);
    f[half + k] = std::cos(t * freq);
  }
  return f;
}

// Activations kept for the backward pass.
struct Forward {
  explicit Forward(const Grid& g)
      : in_pad(2 * g.pvox), a1(H * g.vox), h1_pad(H * g.pvox), a2(H * g.vox), h2_pad(H * g.pvox),
        out(g.vox) {}
  Scratch in_pad, a1, h1_pad, a2, h2_pad, out;
  std::array<double, F> feat{};
};

void run_forward(std::span<const double> p, const VoxelVolume& x_t, const SemanticLayout& mask, int t,
                 const Grid& g, Forward& f) {
  Scratch in(2 * g.vox);
  std::copy(x_t.values().begin(), x_t.values().end(), in.begin());
  for (std::size_t i = 0; i < g.vox; ++i) in[g.vox + i] = mask.is_nodule(i) ? 1.0 : 0.0;
  pad(in.data(), 2, f.in_pad.data(), g);

  f.feat = time_features(t);
  std::array<double, H> bias1{};
  for (int c = 0; c < H; ++c) {
    bias1[c] = p[kB1 + c];
    for (int k = 0; k < F; ++k) bias1[c] += p[kWt + c * F + k] * f.feat[k];
  }
  conv_forward(f.in_pad.data(), 2, f.a1.data(), H, p.data() + kW1, bias1.data(), g);

  Scratch h(H * g.vox);
  std::transform(f.a1.begin(), f.a1.end(), h.begin(), silu);
  pad(h.data(), H, f.h1_pad.data(), g);

  conv_forward(f.h1_pad.data(), H, f.a2.data(), H, p.data() + kW2, p.data() + kB2, g);
  std::transform(f.a2.begin(), f.a2.end(), h.begin(), silu);
  pad(h.data(), H, f.h2_pad.data(), g);

  conv_forward(f.h2_pad.data(), H, f.out.data(), 1, p.data() + kW3, nullptr, g);
}

}  // namespace

TinyConvPredictor::TinyConvPredictor(int T)
    : T_(T), params_(kParameterCount, 0.0), adam_m_(kParameterCount, 0.0),
      adam_v_(kParameterCount, 0.0) {
  if (T < 1) throw ArgumentError("predictor horizon must be positive");
}

TinyConvPredictor::TinyConvPredictor(const TinyConvPredictor& other)
    : NoisePredictor(), T_(other.T_), params_(other.params_), adam_m_(other.adam_m_),
      adam_v_(other.adam_v_), adam_step_(other.adam_step_) {}

TinyConvPredictor& TinyConvPredictor::operator=(const TinyConvPredictor& other) {
  T_ = other.T_;
  params_ = other.params_;
  adam_m_ = other.adam_m_;
  adam_v_ = other.adam_v_;
  adam_step_ = other.adam_step_;
  return *this;
}

TinyConvPredictor TinyConvPredictor::initialized(int T, std::uint64_t seed) {
  TinyConvPredictor p(T);
  Rng rng(seed);
  auto fill = [&](std::size_t off, std::size_t n, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    for (std::size_t i = 0; i < n; ++i) p.params_[off + i] = d(rng);
  };
  fill(kW1, H * 2 * K, std::sqrt(2.0 / (2 * K)));
  fill(kWt, H * F, 0.1);
  fill(kW2, H * H * K, std::sqrt(2.0 / (H * K)));
  fill(kW3, H * K, std::sqrt(1.0 / (H * K)));
  return p;
}

ArchitectureDescriptor TinyConvPredictor::architecture() {
  return {"tiny_conv",
          {{LayerKind::conv3d, 3, 2, H}, {LayerKind::conv3d, 3, H, H}, {LayerKind::conv3d, 3, H, 1}}};
}

VoxelVolume TinyConvPredictor::do_predict(const VoxelVolume& x_t, int t, const SemanticLayout& c) const {
  const Grid g(x_t.dims());
  Forward f(g);
  run_forward(params_, x_t, c, t, g, f);
  VoxelVolume out(x_t.dims(), x_t.spacing());
  std::copy(f.out.begin(), f.out.end(), out.values().begin());
  return out;
}

double TinyConvPredictor::loss_and_gradient(const VoxelVolume& x_t, const SemanticLayout& mask, int t,
                                            const VoxelVolume& eps, std::vector<double>* grad) const {
  if (eps.dims() != x_t.dims() || mask.dims() != x_t.dims())
    throw ArgumentError("loss inputs disagree in dims");
  const Grid g(x_t.dims());
  Forward f(g);
  run_forward(params_, x_t, mask, t, g, f);

  const auto ev = eps.values();
  const double n = static_cast<double>(g.vox);
  double loss = 0.0;
  Scratch dout(g.vox);
  for (std::size_t i = 0; i < g.vox; ++i) {
    const double r = f.out[i] - ev[i];
    loss += r * r;
    dout[i] = 2.0 * r / n;
  }
  loss /= n;
  if (!grad) return loss;

  grad->assign(kParameterCount, 0.0);
  double* dp = grad->data();

  Scratch dpad(H * g.pvox), dh(H * g.vox);
  conv_backward(f.h2_pad.data(), H, dout.data(), 1, params_.data() + kW3, dp + kW3, nullptr,
                dpad.data(), g);
  unpad(dpad.data(), H, dh.data(), g);
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= silu_grad(f.a2[i]);

  conv_backward(f.h1_pad.data(), H, dh.data(), H, params_.data() + kW2, dp + kW2, dp + kB2,
                dpad.data(), g);
  unpad(dpad.data(), H, dh.data(), g);
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= silu_grad(f.a1[i]);

  conv_backward(f.in_pad.data(), 2, dh.data(), H, params_.data() + kW1, dp + kW1, dp + kB1, nullptr, g);
  // The time projection enters layer 1 as a per-channel bias.
  for (int c = 0; c < H; ++c)
    for (int k = 0; k < F; ++k) dp[kWt + c * F + k] = dp[kB1 + c] * f.feat[k];
  return loss;
}

void TinyConvPredictor::apply_adam(std::span<const double> grad, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++adam_step_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_m_[i] = b1 * adam_m_[i] + (1.0 - b1) * grad[i];
    adam_v_[i] = b2 * adam_v_[i] + (1.0 - b2) * grad[i] * grad[i];
    params_[i] -= lr * (adam_m_[i] / c1) / (std::sqrt(adam_v_[i] / c2) + eps);
  }
}

double train_step(TinyConvPredictor& p, const VoxelVolume& x0, const SemanticLayout& m, Rng& rng,
                  const NoiseSchedule& s, double lr) {
  if (m.dims() != x0.dims()) throw ArgumentError("training patch and layout dims differ");
  std::uniform_int_distribution<int> pick_t(1, s.T());
  const int t = pick_t(rng);
  const auto eps = standard_normal(x0.dims(), x0.spacing(), rng);
  const auto x_t = q_sample(x0, t, eps, s);

  std::vector<double> grad;
  const double loss = p.loss_and_gradient(x_t.x, m, t, eps, &grad);
  if (!std::isfinite(loss))
    throw TrainingError("non-finite training loss at t=" + std::to_string(t));
  p.apply_adam(grad, lr);
  return loss;
}

std::vector<double> train(TinyConvPredictor& p, std::span<const TrainingSample> dataset, int epochs,
                          double lr, std::uint64_t seed, const NoiseSchedule& s) {
  if (dataset.empty()) throw ArgumentError("training dataset is empty");
  if (epochs < 0) throw ArgumentError("epochs must be non-negative");
  Rng rng(seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(epochs) * dataset.size());
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto i : order) curve.push_back(train_step(p, dataset[i].patch, dataset[i].layout, rng, s, lr));
  }
  return curve;
}

void write_loss_csv(std::span<const double> losses, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "step,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::uint8_t> encode_weights(const TinyConvPredictor& p) {
  std::vector<std::uint8_t> out{'L', 'D', 'P', 'W'};
  auto put = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(kWeightsFormatVersion);
  put(static_cast<std::uint32_t>(p.parameters().size()));
  for (double w : p.parameters()) put(std::bit_cast<std::uint32_t>(static_cast<float>(w)));
  return out;
}

void decode_weights(TinyConvPredictor& p, std::span<const std::uint8_t> bytes) {
  auto get = [&](std::size_t at) {
    if (bytes.size() < at + 4) throw FormatError("truncated weights file", at);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  if (bytes.size() < 4 || bytes[0] != 'L' || bytes[1] != 'D' || bytes[2] != 'P' || bytes[3] != 'W')
    throw FormatError("bad magic, expected \"LDPW\"", 0);
  if (const auto v = get(4); v != kWeightsFormatVersion)
    throw FormatError("unsupported weights version " + std::to_string(v), 4);
  const auto count = get(8);
  if (count != TinyConvPredictor::kParameterCount)
    throw FormatError("parameter count " + std::to_string(count) + ", expected " +
                          std::to_string(TinyConvPredictor::kParameterCount),
                      8);
  if (bytes.size() != 12 + 4 * static_cast<std::size_t>(count))
    throw FormatError("payload length mismatch: expected " + std::to_string(4 * count) +
                          " bytes, found " + std::to_string(bytes.size() - 12),
                      12);
  auto params = p.parameters();
  for (std::size_t i = 0; i < count; ++i) params[i] = std::bit_cast<float>(get(12 + 4 * i));
}

void save_weights(const TinyConvPredictor& p, const std::filesystem::path& path) {
  const auto bytes = encode_weights(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

TinyConvPredictor load_weights(const std::filesystem::path& path, int T) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  TinyConvPredictor p(T);
  decode_weights(p, bytes);
  return p;
}

}  // namespace lungddpm
