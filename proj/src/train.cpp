#include "srnr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <numbers>
#include <thread>

#include "srnr/error.hpp"
#include "srnr/rng.hpp"

namespace srnr::train {

using nn::Tensor5;

const char* to_string(Precision p) noexcept { return p == Precision::Float32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& s) {
  if (s == "float32" || s == "float" || s == "single") return Precision::Float32;
  if (s == "float64" || s == "double") return Precision::Float64;
  throw Error(ErrorCode::InvalidArgument, "unknown precision '" + s + "' (float32 or float64)");
}

void TrainConfig::validate() const {
  for (auto p : patch)
    if (p == 0) throw Error(ErrorCode::InvalidArgument, "patch dims must be positive");
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be positive");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
    throw Error(ErrorCode::InvalidArgument, "Adam betas must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "adam_eps must be positive");
  if (epochs < 0) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 0");
  if (patches_per_volume == 0) throw Error(ErrorCode::InvalidArgument, "patches_per_volume must be positive");
  if (!(min_mask_coverage >= 0.0 && min_mask_coverage <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "min_mask_coverage must lie in [0, 1]");
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SRNR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <typename T>
std::pair<double, Tensor5<T>> l2_loss(const Tensor5<T>& pred, const Tensor5<T>& target) {
  if (pred.shape() != target.shape())
    throw Error(ErrorCode::Shape, "l2_loss: " + nn::shape_str(pred.shape()) + " vs " + nn::shape_str(target.shape()));
  const double n = static_cast<double>(pred.size());
  Tensor5<T> grad(pred.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += e * e;
    grad[i] = static_cast<T>(2.0 * e / n);
  }
  return {sum / n, std::move(grad)};
}

template std::pair<double, Tensor5<float>> l2_loss(const Tensor5<float>&, const Tensor5<float>&);
template std::pair<double, Tensor5<double>> l2_loss(const Tensor5<double>&, const Tensor5<double>&);

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw Error(ErrorCode::Shape, "adam_step: parameter, gradient and moment lengths differ");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw Error(ErrorCode::TrainingDivergence, "non-finite gradient at parameter " + std::to_string(i) +
                                                     " (step " + std::to_string(state.t + 1) + ")");
  state.t += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
  }
}

// ---------------------------------------------------------------------------
// Patches

Volume3D extract_patch(const Volume3D& vol, const std::array<std::size_t, 3>& corner, const Dims& size) {
  for (int a = 0; a < 3; ++a)
    if (corner[a] + size[a] > vol.dims()[a]) throw Error(ErrorCode::Shape, "patch extends beyond the volume");
  std::vector<double> data;
  data.reserve(voxel_count(size));
  for (std::size_t i = 0; i < size[0]; ++i)
    for (std::size_t j = 0; j < size[1]; ++j) {
      const std::size_t base = vol.index(corner[0] + i, corner[1] + j, corner[2]);
      const auto src = vol.data().subspan(base, size[2]);
      data.insert(data.end(), src.begin(), src.end());
    }
  return Volume3D(size, vol.spacing(), std::move(data));
}

PatchSampler::PatchSampler(std::span<const PairData> pairs, const TrainConfig& cfg, std::uint64_t seed)
    : pairs_(pairs), patch_(cfg.patch), min_coverage_(cfg.min_mask_coverage), seed_(seed) {
  if (pairs_.empty()) throw Error(ErrorCode::EmptyStream, "no training volumes to sample patches from");
  for (const auto& p : pairs_) {
    const Dims& d = p.input.dims();
    if (!p.target_residual.same_shape(p.input) || p.mask.dims() != d)
      throw Error(ErrorCode::Shape, "pair input, target and mask dims differ");
    for (int a = 0; a < 3; ++a)
      if (patch_[a] > d[a])
        throw Error(ErrorCode::EmptyStream, "patch larger than volume along axis " + std::to_string(a));
    // Summed-volume table with a zero border.
    const std::size_t X = d[0] + 1, Y = d[1] + 1, Z = d[2] + 1;
    std::vector<std::uint32_t> s(X * Y * Z, 0);
    const auto at = [&](std::size_t i, std::size_t j, std::size_t k) -> std::uint32_t& { return s[(i * Y + j) * Z + k]; };
    for (std::size_t i = 1; i < X; ++i)
      for (std::size_t j = 1; j < Y; ++j)
        for (std::size_t k = 1; k < Z; ++k)
          at(i, j, k) = (p.mask[(((i - 1) * d[1]) + (j - 1)) * d[2] + (k - 1)] ? 1u : 0u) + at(i - 1, j, k) +
                        at(i, j - 1, k) + at(i, j, k - 1) - at(i - 1, j - 1, k) - at(i - 1, j, k - 1) -
                        at(i, j - 1, k - 1) + at(i - 1, j - 1, k - 1);
    integral_.push_back(std::move(s));
  }
}

double PatchSampler::coverage(std::size_t vol, const std::array<std::size_t, 3>& c) const {
  const Dims& d = pairs_[vol].mask.dims();
  const std::size_t Y = d[1] + 1, Z = d[2] + 1;
  const auto& s = integral_[vol];
  const auto at = [&](std::size_t i, std::size_t j, std::size_t k) -> std::int64_t { return s[(i * Y + j) * Z + k]; };
  const std::size_t i0 = c[0], j0 = c[1], k0 = c[2];
  const std::size_t i1 = i0 + patch_[0], j1 = j0 + patch_[1], k1 = k0 + patch_[2];
  const std::int64_t n = at(i1, j1, k1) - at(i0, j1, k1) - at(i1, j0, k1) - at(i1, j1, k0) + at(i0, j0, k1) +
                         at(i0, j1, k0) + at(i1, j0, k0) - at(i0, j0, k0);
  return static_cast<double>(n) / static_cast<double>(voxel_count(patch_));
}

TrainSample PatchSampler::next() {
  const std::size_t v = next_volume_;
  next_volume_ = (next_volume_ + 1) % pairs_.size();
  const Dims& d = pairs_[v].input.dims();
  rng::Stream rs(rng::derive(seed_, "patch", draws_++));
  std::array<std::size_t, 3> corner{};
  double cov = 0.0;
  bool relaxed = true;
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (int a = 0; a < 3; ++a) corner[a] = static_cast<std::size_t>(rs.below(d[a] - patch_[a] + 1));
    cov = coverage(v, corner);
    if (cov >= min_coverage_) {
      relaxed = false;
      break;
    }
  }
  if (relaxed) {
    ++relaxed_;
    std::cerr << "warning: patch from volume " << v << " accepted with mask coverage " << cov << " < "
              << min_coverage_ << " after 100 tries\n";
  }
  const auto& p = pairs_[v];
  return {extract_patch(p.input, corner, patch_), extract_patch(p.target_residual, corner, patch_), v, corner, cov,
          relaxed};
}

std::vector<TrainSample> sample_patches(std::span<const PairData> pairs, const TrainConfig& cfg, std::uint64_t seed,
                                        std::size_t count) {
  PatchSampler sampler(pairs, cfg, seed);
  std::vector<TrainSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.next());
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

template <typename T>
Tensor5<T> to_tensor(const Volume3D& v) {
  const Dims& d = v.dims();
  return Tensor5<T>({1, 1, d[0], d[1], d[2]}, std::vector<T>(v.data().begin(), v.data().end()));
}

struct SampleGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

template <typename T>
SampleGrad sample_gradient(const nn::MuNet& net, const TrainSample& s) {
  const auto x = to_tensor<T>(s.input);
  const auto target = to_tensor<T>(s.target);
  auto [residual, tape] = nn::munet_forward(net, x);
  auto [loss, g] = l2_loss(residual, target);
  return {loss, nn::munet_backward(net, tape, g).params};
}

template <typename T>
double sample_loss(const nn::MuNet& net, const TrainSample& s) {
  return l2_loss(nn::munet_residual(net, to_tensor<T>(s.input)), to_tensor<T>(s.target)).first;
}

// Runs f(i) for i in [0, n) on up to `threads` workers. Each index writes only
// its own slot, so results do not depend on the schedule.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  const std::size_t workers = std::min<std::size_t>(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename T>
TrainResult train_impl(std::span<const PairData> pairs, const nn::NetShape& shape, const TrainConfig& cfg) {
  const bool has_val = pairs.size() >= 2;
  const auto train_pairs = has_val ? pairs.first(pairs.size() - 1) : pairs;
  const unsigned threads = resolve_threads(cfg.threads);

  TrainResult result;
  result.net = nn::init_params(shape, cfg.seed);
  if (cfg.epochs == 0) return result;

  std::vector<TrainSample> val_samples;
  if (has_val)
    val_samples = sample_patches(pairs.last(1), cfg, rng::derive(cfg.seed, "validation"), cfg.patches_per_volume);

  auto params = nn::flatten_params(result.net);
  AdamState adam(params.size());
  const std::size_t per_epoch = cfg.patches_per_volume * train_pairs.size();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    PatchSampler sampler(train_pairs, cfg, rng::derive(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t done = 0; done < per_epoch; done += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, per_epoch - done);
      std::vector<TrainSample> batch;
      for (std::size_t i = 0; i < b; ++i) batch.push_back(sampler.next());
      std::vector<SampleGrad> per_sample(b);
      parallel_for(b, threads, [&](std::size_t i) { per_sample[i] = sample_gradient<T>(result.net, batch[i]); });

      std::vector<double> grad(params.size(), 0.0);
      double batch_loss = 0.0;
      for (const auto& sg : per_sample) {
        batch_loss += sg.loss;
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += sg.grad[p];
      }
      const double inv_b = 1.0 / static_cast<double>(b);
      batch_loss *= inv_b;
      for (auto& g : grad) g *= inv_b;
      if (!std::isfinite(batch_loss))
        throw Error(ErrorCode::TrainingDivergence, "non-finite training loss at epoch " + std::to_string(epoch));
      if (result.steps == 0) result.initial_loss = batch_loss;

      adam_step(params, grad, adam, cfg);
      nn::assign_params(result.net, params);
      ++result.steps;
      loss_sum += batch_loss;
      ++batches;
    }
    result.relaxed_patches += sampler.relaxed_count();

    EpochLoss row{epoch, loss_sum / static_cast<double>(batches), std::numeric_limits<double>::quiet_NaN()};
    if (has_val) {
      std::vector<double> losses(val_samples.size());
      parallel_for(val_samples.size(), threads,
                   [&](std::size_t i) { losses[i] = sample_loss<T>(result.net, val_samples[i]); });
      double s = 0.0;
      for (double l : losses) s += l;
      row.val_loss = s / static_cast<double>(losses.size());
    }
    result.curve.push_back(row);
  }
  return result;
}

}  // namespace

TrainResult train_on_pairs(std::span<const PairData> pairs, const nn::NetShape& shape, const TrainConfig& cfg) {
  cfg.validate();
  shape.validate();
  if (pairs.empty()) throw Error(ErrorCode::InvalidArgument, "training needs at least one volume");
  return cfg.precision == Precision::Float32 ? train_impl<float>(pairs, shape, cfg)
                                             : train_impl<double>(pairs, shape, cfg);
}

std::uint64_t volume_noise_seed(const NoiseSpec& nspec, std::size_t index) {
  return rng::derive(nspec.seed, "train-volume", index);
}

TrainResult train_model(std::span<const Volume3D> hr_volumes, std::span<const BrainMask> masks,
                        const DegradeSpec& dspec, const NoiseSpec& nspec, const nn::NetShape& shape,
                        const TrainConfig& cfg) {
  if (hr_volumes.empty()) throw Error(ErrorCode::InvalidArgument, "training needs at least one volume");
  if (masks.size() != hr_volumes.size()) throw Error(ErrorCode::InvalidArgument, "one mask per training volume required");
  cfg.validate();
  std::vector<PairData> pairs;
  for (std::size_t v = 0; v < hr_volumes.size(); ++v) {
    NoiseSpec ns = nspec;
    ns.seed = volume_noise_seed(nspec, v);
    auto pair = make_training_pair(hr_volumes[v], masks[v], dspec, ns);
    pairs.push_back({std::move(pair.input), std::move(pair.target_residual), crop_to_factor(masks[v], dspec)});
  }
  return train_on_pairs(pairs, shape, cfg);
}

// ---------------------------------------------------------------------------
// Noise2Noise closed-form check

namespace {

// In-place Cholesky of the SPD matrix a (n x n, row-major); returns false if
// a pivot is not safely positive.
bool cholesky(std::vector<double>& a, std::size_t n) {
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::fabs(a[i * n + i]));
  const double tol = scale * 1e-12;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > tol)) return false;
    a[j * n + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / a[j * n + j];
    }
  }
  return true;
}

std::vector<double> cholesky_solve(const std::vector<double>& l, std::size_t n, std::vector<double> b) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= l[i * n + k] * b[k];
    b[i] /= l[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= l[k * n + i] * b[k];
    b[i] /= l[i * n + i];
  }
  return b;
}

}  // namespace

N2NOracleResult n2n_closed_form_oracle(std::size_t n_samples, double noise_sigma, std::uint64_t seed,
                                       std::size_t n_params) {
  if (n_samples < 10) throw Error(ErrorCode::InvalidArgument, "n2n oracle needs at least 10 samples");
  if (n_params == 0) throw Error(ErrorCode::InvalidArgument, "n2n oracle needs at least one parameter");
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
  const std::size_t p = n_params;

  N2NOracleResult r;
  r.theta_true.resize(p);
  for (std::size_t j = 0; j < p; ++j) r.theta_true[j] = (j % 2 == 0 ? 1.0 : -1.0) / static_cast<double>(j + 1);

  const std::uint64_t design_seed = rng::derive(seed, "n2n-design");
  const std::uint64_t noise_seed = rng::derive(seed, "n2n-noise");
  const auto x_at = [&](std::size_t i, std::size_t j) {
    return j == 0 ? 1.0 : 2.0 * rng::uniform(design_seed, i * p + j) - 1.0;
  };

  std::vector<double> gram(p * p, 0.0), rhs_clean(p, 0.0), rhs_noisy(p, 0.0);
  std::vector<double> row(p);
  for (std::size_t i = 0; i < n_samples; ++i) {
    double y = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      row[j] = x_at(i, j);
      y += row[j] * r.theta_true[j];
    }
    const double y_noisy = y + noise_sigma * rng::normal(noise_seed, i);
    for (std::size_t j = 0; j < p; ++j) {
      rhs_clean[j] += row[j] * y;
      rhs_noisy[j] += row[j] * y_noisy;
      for (std::size_t k = 0; k < p; ++k) gram[j * p + k] += row[j] * row[k];
    }
  }
  if (!cholesky(gram, p)) throw Error(ErrorCode::DegenerateDesign, "normal matrix is singular");
  r.theta_clean = cholesky_solve(gram, p, rhs_clean);
  r.theta_noisy = noise_sigma == 0.0 ? r.theta_clean : cholesky_solve(gram, p, rhs_noisy);
  r.std_error.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> e(p, 0.0);
    e[j] = 1.0;
    r.std_error[j] = noise_sigma * std::sqrt(cholesky_solve(gram, p, e)[j]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Inference

TilePlan plan_tiles(const Dims& dims, const Dims& patch) {
  TilePlan plan;
  for (int a = 0; a < 3; ++a) {
    if (patch[a] == 0) throw Error(ErrorCode::InvalidArgument, "patch dims must be positive");
    const std::size_t n = dims[a];
    const std::size_t p = std::min(patch[a], n);
    plan.tile[a] = p;
    auto& s = plan.starts[a];
    if (p == n) {
      s.push_back(0);
      continue;
    }
    const std::size_t stride = std::max<std::size_t>(1, p / 2);
    for (std::size_t x = 0; x + p < n; x += stride) s.push_back(x);
    s.push_back(n - p);
  }
  return plan;
}

std::vector<double> tile_window(const Dims& tile) {
  std::array<std::vector<double>, 3> w;
  for (int a = 0; a < 3; ++a) {
    w[a].resize(tile[a]);
    for (std::size_t t = 0; t < tile[a]; ++t) {
      const double s = std::sin(std::numbers::pi * (static_cast<double>(t) + 0.5) / static_cast<double>(tile[a]));
      w[a][t] = s * s;
    }
  }
  std::vector<double> out;
  out.reserve(voxel_count(tile));
  for (double x : w[0])
    for (double y : w[1])
      for (double z : w[2]) out.push_back(x * y * z);
  return out;
}

namespace {

template <typename T>
Volume3D predict_impl(const nn::MuNet& net, const Volume3D& upsampled, const Dims& patch) {
  const Dims& d = upsampled.dims();
  const TilePlan plan = plan_tiles(d, patch);
  const std::size_t n_tiles = plan.starts[0].size() * plan.starts[1].size() * plan.starts[2].size();
  if (n_tiles == 1) {
    const auto r = nn::munet_residual(net, to_tensor<T>(upsampled));
    std::vector<double> out(upsampled.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = upsampled[i] + static_cast<double>(r[i]);
    return Volume3D(d, upsampled.spacing(), std::move(out));
  }
  const auto window = tile_window(plan.tile);
  const Dims& t = plan.tile;
  std::vector<double> num(upsampled.size(), 0.0), den(upsampled.size(), 0.0);
  for (std::size_t x0 : plan.starts[0])
    for (std::size_t y0 : plan.starts[1])
      for (std::size_t z0 : plan.starts[2]) {
        const auto patch_vol = extract_patch(upsampled, {x0, y0, z0}, t);
        const auto r = nn::munet_residual(net, to_tensor<T>(patch_vol));
        std::size_t q = 0;
        for (std::size_t i = 0; i < t[0]; ++i)
          for (std::size_t j = 0; j < t[1]; ++j)
            for (std::size_t k = 0; k < t[2]; ++k, ++q) {
              const std::size_t idx = upsampled.index(x0 + i, y0 + j, z0 + k);
              num[idx] += window[q] * static_cast<double>(r[q]);
              den[idx] += window[q];
            }
      }
  std::vector<double> out(upsampled.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = upsampled[i] + num[i] / den[i];
  return Volume3D(d, upsampled.spacing(), std::move(out));
}

}  // namespace

Volume3D predict_volume(const nn::MuNet& net, const Volume3D& upsampled, const Dims& patch, Precision precision) {
  return precision == Precision::Float32 ? predict_impl<float>(net, upsampled, patch)
                                         : predict_impl<double>(net, upsampled, patch);
}

Volume3D infer_volume(const nn::MuNet& net, const Volume3D& low_res, const DegradeSpec& dspec, const Dims& patch,
                      Precision precision) {
  dspec.validate();
  const std::size_t target = low_res.dims()[dspec.slice_axis] * static_cast<std::size_t>(dspec.factor);
  const auto up = upsample_cubic(low_res, target, dspec.slice_axis).volume;
  return predict_volume(net, up, patch, precision);
}

}  // namespace srnr::train
