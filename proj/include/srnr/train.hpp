#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srnr/degrade.hpp"
#include "srnr/tensor_nn.hpp"
#include "srnr/volume.hpp"

namespace srnr::train {

enum class Precision { Float32, Float64 };

const char* to_string(Precision p) noexcept;
Precision parse_precision(const std::string& s);

struct TrainConfig {
  Dims patch{32, 32, 32};
  std::size_t batch_size = 4;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 5;
  std::size_t patches_per_volume = 16;
  std::uint64_t seed = 0;
  Precision precision = Precision::Float32;
  double min_mask_coverage = 0.3;
  // 0 = automatic (SRNR_THREADS, else hardware concurrency).
  unsigned threads = 0;

  void validate() const;
};

// Worker count for `requested` (0 = SRNR_THREADS or hardware concurrency).
unsigned resolve_threads(unsigned requested);

struct AdamState {
  std::uint64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Mean squared error over all elements; grad = 2 (pred - target) / N.
template <typename T>
std::pair<double, nn::Tensor5<T>> l2_loss(const nn::Tensor5<T>& pred, const nn::Tensor5<T>& target);

// Bias-corrected Adam update in place (t is incremented first). Throws
// TrainingDivergence on a non-finite gradient before touching anything.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg);

struct TrainSample {
  Volume3D input;
  Volume3D target;
  std::size_t volume_id = 0;
  std::array<std::size_t, 3> corner{};
  double mask_fraction = 0.0;
  bool coverage_relaxed = false;
};

// One training volume: network input, target residual and brain mask.
struct PairData {
  Volume3D input;
  Volume3D target_residual;
  BrainMask mask;
};

Volume3D extract_patch(const Volume3D& vol, const std::array<std::size_t, 3>& corner, const Dims& size);

// Draws patch corners uniformly, rejecting patches whose mask coverage is
// below cfg.min_mask_coverage; after 100 rejections the rule is relaxed for
// that patch and a warning is counted.
class PatchSampler {
 public:
  PatchSampler(std::span<const PairData> pairs, const TrainConfig& cfg, std::uint64_t seed);

  TrainSample next();
  std::size_t relaxed_count() const noexcept { return relaxed_; }

 private:
  double coverage(std::size_t vol, const std::array<std::size_t, 3>& corner) const;

  std::span<const PairData> pairs_;
  Dims patch_;
  double min_coverage_;
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::size_t next_volume_ = 0;
  std::size_t relaxed_ = 0;
  std::vector<std::vector<std::uint32_t>> integral_;  // summed-volume tables of the masks
};

// `count` samples cycling round-robin over the volumes.
std::vector<TrainSample> sample_patches(std::span<const PairData> pairs, const TrainConfig& cfg, std::uint64_t seed,
                                        std::size_t count);

struct EpochLoss {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation volume
};

struct TrainResult {
  nn::MuNet net;
  std::vector<EpochLoss> curve;
  double initial_loss = 0.0;  // training loss of the first batch before any update
  std::size_t steps = 0;
  std::size_t relaxed_patches = 0;
};

// Trains on prepared pairs. With two or more pairs the last one is held out
// for validation loss only.
TrainResult train_on_pairs(std::span<const PairData> pairs, const nn::NetShape& shape, const TrainConfig& cfg);

// Builds one (input, residual) pair per volume (noise seed derived from
// nspec.seed and the volume index, drawn once) and trains.
TrainResult train_model(std::span<const Volume3D> hr_volumes, std::span<const BrainMask> masks,
                        const DegradeSpec& dspec, const NoiseSpec& nspec, const nn::NetShape& shape,
                        const TrainConfig& cfg);

// Noise seed used for training volume `index` under `nspec`.
std::uint64_t volume_noise_seed(const NoiseSpec& nspec, std::size_t index);

struct N2NOracleResult {
  std::vector<double> theta_true;
  std::vector<double> theta_clean;
  std::vector<double> theta_noisy;
  // sigma * sqrt(diag((X^T X)^-1)): standard error of theta_noisy - theta_clean.
  std::vector<double> std_error;
};

// Least squares y = X theta* solved by Cholesky on the normal equations,
// once with clean and once with Gaussian-noisy targets. n_params = 1 is
// mean estimation (X = ones); larger designs add uniform(-1, 1) columns.
N2NOracleResult n2n_closed_form_oracle(std::size_t n_samples, double noise_sigma, std::uint64_t seed,
                                       std::size_t n_params = 1);

// Tiling used by inference: start offsets per axis and the tile edge lengths.
struct TilePlan {
  std::array<std::vector<std::size_t>, 3> starts;
  Dims tile{};
};

TilePlan plan_tiles(const Dims& dims, const Dims& patch);

// Separable sin^2 window over a tile; strictly positive.
std::vector<double> tile_window(const Dims& tile);

// Network prediction (input + blended residual) over a whole upsampled volume
// using overlapping tiles at half-patch stride.
Volume3D predict_volume(const nn::MuNet& net, const Volume3D& upsampled, const Dims& patch,
                        Precision precision = Precision::Float32);

// Upsamples a thick-slice volume to the fine grid, then predicts.
Volume3D infer_volume(const nn::MuNet& net, const Volume3D& low_res, const DegradeSpec& dspec, const Dims& patch,
                      Precision precision = Precision::Float32);

}  // namespace srnr::train
