#include "srnr/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "srnr/error.hpp"
#include "srnr/rng.hpp"

namespace srnr {

void DegradeSpec::validate() const {
  if (slice_axis < 0 || slice_axis > 2) throw Error(ErrorCode::InvalidArgument, "slice_axis must be 0, 1 or 2");
  if (factor < 2) throw Error(ErrorCode::InvalidArgument, "downsampling factor must be >= 2");
}

void NoiseSpec::validate() const {
  if (!(sigma_rel >= 0.0) || !std::isfinite(sigma_rel))
    throw Error(ErrorCode::InvalidArgument, "sigma_rel must be finite and >= 0");
  if (!std::isfinite(mu)) throw Error(ErrorCode::InvalidArgument, "mu must be finite");
}

namespace {

// Strides of the slice axis and the two others for row-major dims.
struct AxisWalk {
  std::size_t n;        // extent along the axis
  std::size_t stride;   // element stride along the axis
  std::size_t outer;    // number of profiles
  Dims dims;

  AxisWalk(const Dims& d, int axis) : n(d[axis]), stride(1), outer(voxel_count(d) / d[axis]), dims(d) {
    for (int a = axis + 1; a < 3; ++a) stride *= d[a];
  }

  // Base offset of profile p (p in [0, outer)).
  std::size_t base(std::size_t p) const {
    const std::size_t hi = p / stride;  // combined index of axes before `axis`
    const std::size_t lo = p % stride;  // combined index of axes after `axis`
    return hi * n * stride + lo;
  }
};

}  // namespace

std::size_t divisible_extent(const Dims& dims, const DegradeSpec& spec) {
  spec.validate();
  const auto f = static_cast<std::size_t>(spec.factor);
  return dims[spec.slice_axis] / f * f;
}

DownsampleResult downsample_slices(const Volume3D& vol, const DegradeSpec& spec) {
  spec.validate();
  const auto f = static_cast<std::size_t>(spec.factor);
  const std::size_t extent = vol.dims()[spec.slice_axis];
  if (extent < f)
    throw Error(ErrorCode::Shape, "slice extent " + std::to_string(extent) + " smaller than factor " + std::to_string(f));
  const std::size_t kept = extent / f * f;
  const std::size_t n_out = kept / f;

  AxisWalk in(vol.dims(), spec.slice_axis);
  Dims out_dims = vol.dims();
  out_dims[spec.slice_axis] = n_out;
  AxisWalk out(out_dims, spec.slice_axis);
  std::vector<double> data(voxel_count(out_dims));
  const auto src = vol.data();
  for (std::size_t p = 0; p < in.outer; ++p) {
    const std::size_t ib = in.base(p), ob = out.base(p);
    for (std::size_t s = 0; s < n_out; ++s) {
      double sum = 0.0;
      for (std::size_t t = 0; t < f; ++t) sum += src[ib + (s * f + t) * in.stride];
      data[ob + s * out.stride] = sum / static_cast<double>(f);
    }
  }
  Spacing spacing = vol.spacing();
  spacing[spec.slice_axis] *= static_cast<double>(f);
  return {Volume3D(out_dims, spacing, std::move(data)), extent - kept};
}

std::vector<double> spline_weights(std::size_t n_knots, std::size_t target_extent) {
  if (n_knots == 0) throw Error(ErrorCode::InvalidArgument, "spline needs at least one knot");
  const double f = static_cast<double>(target_extent) / static_cast<double>(n_knots);
  const auto knot = [&](std::size_t i) { return (static_cast<double>(i) + 0.5) * f - 0.5; };
  std::vector<double> w(target_extent * n_knots, 0.0);
  const auto row = [&](std::size_t x) { return w.begin() + static_cast<std::ptrdiff_t>(x * n_knots); };

  if (n_knots == 1) {
    for (std::size_t x = 0; x < target_extent; ++x) row(x)[0] = 1.0;
    return w;
  }

  // Second-derivative response M[i][j] = d M_i / d y_j of the natural spline,
  // from the Thomas algorithm applied to each unit knot vector.
  const std::size_t n = n_knots;
  std::vector<double> m(n * n, 0.0);
  if (n >= 4) {
    const std::size_t ni = n - 2;  // interior unknowns M_1 .. M_{n-2}
    const double h = f;
    // Forward-eliminated diagonal for the constant 1-4-1 system.
    std::vector<double> cprime(ni), denom(ni);
    for (std::size_t r = 0; r < ni; ++r) {
      denom[r] = 4.0 - (r > 0 ? cprime[r - 1] : 0.0);
      cprime[r] = 1.0 / denom[r];
    }
    std::vector<double> rhs(ni), sol(ni);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < ni; ++r) {
        const std::size_t i = r + 1;  // knot index
        const double yim1 = (i - 1 == j) ? 1.0 : 0.0;
        const double yi = (i == j) ? 1.0 : 0.0;
        const double yip1 = (i + 1 == j) ? 1.0 : 0.0;
        rhs[r] = 6.0 / (h * h) * (yip1 - 2.0 * yi + yim1);
      }
      for (std::size_t r = 0; r < ni; ++r) rhs[r] = (rhs[r] - (r > 0 ? rhs[r - 1] : 0.0)) / denom[r];
      for (std::size_t r = ni; r-- > 0;) sol[r] = rhs[r] - (r + 1 < ni ? cprime[r] * sol[r + 1] : 0.0);
      for (std::size_t r = 0; r < ni; ++r) m[(r + 1) * n + j] = sol[r];
    }
  }

  for (std::size_t x = 0; x < target_extent; ++x) {
    const double pos = static_cast<double>(x);
    auto r = row(x);
    if (pos <= knot(0)) {
      r[0] = 1.0;
      continue;
    }
    if (pos >= knot(n - 1)) {
      r[n - 1] = 1.0;
      continue;
    }
    auto seg = static_cast<std::size_t>(std::floor((pos - knot(0)) / f));
    seg = std::min(seg, n - 2);
    const double t = (pos - knot(seg)) / f;
    const double a = 1.0 - t;
    r[seg] += a;
    r[seg + 1] += t;
    if (n >= 4) {
      const double ca = f * f / 6.0 * (a * a * a - a);
      const double cb = f * f / 6.0 * (t * t * t - t);
      for (std::size_t j = 0; j < n; ++j) r[j] += ca * m[seg * n + j] + cb * m[(seg + 1) * n + j];
    }
  }
  return w;
}

UpsampleResult upsample_cubic(const Volume3D& vol, std::size_t target_extent, int slice_axis) {
  if (slice_axis < 0 || slice_axis > 2) throw Error(ErrorCode::InvalidArgument, "slice_axis must be 0, 1 or 2");
  const std::size_t n = vol.dims()[slice_axis];
  if (target_extent < n)
    throw Error(ErrorCode::InvalidArgument, "target extent " + std::to_string(target_extent) +
                                                " is smaller than input extent " + std::to_string(n));
  const auto w = spline_weights(n, target_extent);

  AxisWalk in(vol.dims(), slice_axis);
  Dims out_dims = vol.dims();
  out_dims[slice_axis] = target_extent;
  AxisWalk out(out_dims, slice_axis);
  std::vector<double> data(voxel_count(out_dims));
  std::vector<double> profile(n);
  const auto src = vol.data();
  for (std::size_t p = 0; p < in.outer; ++p) {
    const std::size_t ib = in.base(p), ob = out.base(p);
    for (std::size_t s = 0; s < n; ++s) profile[s] = src[ib + s * in.stride];
    for (std::size_t x = 0; x < target_extent; ++x) {
      const double* wr = w.data() + x * n;
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) acc += wr[s] * profile[s];
      data[ob + x * out.stride] = acc;
    }
  }
  Spacing spacing = vol.spacing();
  spacing[slice_axis] *= static_cast<double>(n) / static_cast<double>(target_extent);
  return {Volume3D(out_dims, spacing, std::move(data)), n < 4};
}

double unit_noise(std::uint64_t seed, std::size_t voxel_index) { return rng::normal(seed, voxel_index); }

Volume3D add_gaussian_noise(const Volume3D& vol, const BrainMask& mask, const NoiseSpec& spec) {
  spec.validate();
  mask.check_matches(vol);
  if (spec.sigma_rel == 0.0) return vol;
  const double sigma = spec.sigma_rel * masked_stats(vol, mask).std_dev;
  std::vector<double> out(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) out[i] = vol[i] + spec.mu + sigma * unit_noise(spec.seed, i);
  return Volume3D(vol.dims(), vol.spacing(), std::move(out));
}

Volume3D crop_to_factor(const Volume3D& vol, const DegradeSpec& spec) {
  const std::size_t extent = divisible_extent(vol.dims(), spec);
  if (extent == 0) throw Error(ErrorCode::Shape, "slice extent smaller than factor");
  return crop_axis(vol, spec.slice_axis, extent);
}

BrainMask crop_to_factor(const BrainMask& mask, const DegradeSpec& spec) {
  const std::size_t extent = divisible_extent(mask.dims(), spec);
  if (extent == 0) throw Error(ErrorCode::Shape, "slice extent smaller than factor");
  return crop_axis(mask, spec.slice_axis, extent);
}

Volume3D degrade_input(const Volume3D& hr, const DegradeSpec& spec) {
  auto low = downsample_slices(hr, spec);
  const std::size_t target = low.volume.dims()[spec.slice_axis] * static_cast<std::size_t>(spec.factor);
  auto up = upsample_cubic(low.volume, target, spec.slice_axis).volume;
  // Restore the exact fine spacing (the ratio above may round).
  std::vector<double> data = std::move(up).take_data();
  Dims dims = hr.dims();
  dims[spec.slice_axis] = target;
  return Volume3D(dims, hr.spacing(), std::move(data));
}

TrainingPair make_training_pair(const Volume3D& hr, const BrainMask& mask, const DegradeSpec& dspec,
                                const NoiseSpec& nspec) {
  mask.check_matches(hr);
  const Volume3D hr_c = crop_to_factor(hr, dspec);
  const BrainMask mask_c = crop_to_factor(mask, dspec);
  const std::size_t cropped = hr.dims()[dspec.slice_axis] - hr_c.dims()[dspec.slice_axis];
  auto pair = make_training_pair_from_reference(hr_c, add_gaussian_noise(hr_c, mask_c, nspec), dspec);
  pair.cropped_slices = cropped;
  return pair;
}

TrainingPair make_training_pair_from_reference(const Volume3D& hr, const Volume3D& reference,
                                               const DegradeSpec& dspec) {
  dspec.validate();
  if (!hr.same_shape(reference)) throw Error(ErrorCode::Shape, "reference dims differ from ground truth");
  if (hr.dims()[dspec.slice_axis] % static_cast<std::size_t>(dspec.factor) != 0)
    throw Error(ErrorCode::Shape, "slice extent not divisible by factor; crop first");
  Volume3D input = degrade_input(hr, dspec);
  Volume3D residual = subtract(reference, input);
  return {std::move(input), std::move(residual), reference, 0};
}

}  // namespace srnr
