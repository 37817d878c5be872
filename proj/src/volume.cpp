#include "srnr/volume.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "srnr/error.hpp"
#include "srnr/rng.hpp"

namespace srnr {

namespace {

std::string dims_str(const Dims& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

void check_axis(int axis) {
  if (axis < 0 || axis > 2) throw Error(ErrorCode::InvalidArgument, "axis must be 0, 1 or 2");
}

}  // namespace

Volume3D::Volume3D(Dims dims, Spacing spacing, std::vector<double> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  if (dims_[0] == 0 || dims_[1] == 0 || dims_[2] == 0)
    throw Error(ErrorCode::Shape, "volume dims must be positive, got " + dims_str(dims_));
  if (data_.size() != voxel_count(dims_))
    throw Error(ErrorCode::Shape, "data length " + std::to_string(data_.size()) +
                                      " does not match dims " + dims_str(dims_));
  for (double s : spacing_)
    if (!(s > 0.0) || !std::isfinite(s))
      throw Error(ErrorCode::InvalidArgument, "voxel spacing must be positive and finite");
  for (double v : data_)
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite voxel value");
}

Volume3D Volume3D::filled(Dims dims, Spacing spacing, double value) {
  return Volume3D(dims, spacing, std::vector<double>(voxel_count(dims), value));
}

BrainMask::BrainMask(Dims dims, std::vector<std::uint8_t> bits) : dims_(dims), bits_(std::move(bits)) {
  if (bits_.size() != voxel_count(dims_))
    throw Error(ErrorCode::Shape, "mask length does not match dims " + dims_str(dims_));
  for (auto& b : bits_) {
    b = b ? 1 : 0;
    count_ += b;
  }
  if (count_ == 0) throw Error(ErrorCode::InvalidArgument, "empty brain mask");
}

BrainMask BrainMask::from_volume(const Volume3D& vol) {
  std::vector<std::uint8_t> bits(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) bits[i] = vol[i] != 0.0;
  return BrainMask(vol.dims(), std::move(bits));
}

BrainMask BrainMask::full(Dims dims) { return BrainMask(dims, std::vector<std::uint8_t>(voxel_count(dims), 1)); }

void BrainMask::check_matches(const Volume3D& vol) const {
  if (vol.dims() != dims_)
    throw Error(ErrorCode::Shape, "mask dims " + dims_str(dims_) + " do not match volume dims " + dims_str(vol.dims()));
}

Volume3D BrainMask::to_volume(Spacing spacing) const {
  std::vector<double> data(bits_.begin(), bits_.end());
  return Volume3D(dims_, spacing, std::move(data));
}

// ---------------------------------------------------------------------------
// Phantom

namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;
  std::array<std::array<double, 3>, 3> rot;  // rows: local axes in grid coords
  double value;
  bool shell;
};

std::array<std::array<double, 3>, 3> rotation(double a, double b, double c) {
  // Rz(a) * Ry(b) * Rx(c)
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  const double cc = std::cos(c), sc = std::sin(c);
  return {{{ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc},
           {sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc},
           {-sb, cb * sc, cb * cc}}};
}

// Returns normalized radius f (< 1 inside) and an estimate of the distance to
// the surface in voxels, (1 - f) / |grad f|.
std::pair<double, double> ellipsoid_eval(const Ellipsoid& e, double x, double y, double z) {
  const double p[3] = {x - e.center[0], y - e.center[1], z - e.center[2]};
  double f2 = 0.0, g2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double u = e.rot[a][0] * p[0] + e.rot[a][1] * p[1] + e.rot[a][2] * p[2];
    const double r = e.radii[a];
    f2 += (u / r) * (u / r);
    g2 += (u / (r * r)) * (u / (r * r));
  }
  const double f = std::sqrt(f2);
  if (f == 0.0) return {0.0, *std::min_element(e.radii.begin(), e.radii.end())};
  const double grad = std::sqrt(g2) / f;
  return {f, (1.0 - f) / grad};
}

}  // namespace

std::pair<Volume3D, BrainMask> generate_phantom(const PhantomSpec& spec) {
  for (std::size_t d : spec.dims)
    if (d < 8) throw Error(ErrorCode::InvalidSpec, "phantom dims must be at least 8 along every axis");
  if (spec.n_ellipsoids < 1) throw Error(ErrorCode::InvalidSpec, "n_ellipsoids must be >= 1");
  if (spec.shell_thickness_vox < 1) throw Error(ErrorCode::InvalidSpec, "shell_thickness_vox must be >= 1");
  if (spec.intensity_levels.empty()) throw Error(ErrorCode::InvalidSpec, "intensity_levels must not be empty");
  for (double v : spec.intensity_levels)
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidSpec, "intensity levels must lie in [0, 1]");

  rng::Stream rs(spec.seed);
  const auto pick_level = [&] { return spec.intensity_levels[rs.below(spec.intensity_levels.size())]; };

  std::vector<Ellipsoid> shapes;
  shapes.reserve(spec.n_ellipsoids);
  {
    Ellipsoid outer{};
    for (int a = 0; a < 3; ++a) {
      const double n = static_cast<double>(spec.dims[a]);
      outer.center[a] = 0.5 * (n - 1.0) + rs.uniform(-0.03, 0.03) * n;
      outer.radii[a] = rs.uniform(0.34, 0.42) * n;
    }
    outer.rot = rotation(rs.uniform(-0.2, 0.2), rs.uniform(-0.1, 0.1), rs.uniform(-0.1, 0.1));
    outer.value = pick_level();
    outer.shell = true;
    shapes.push_back(outer);
  }
  const Ellipsoid& outer = shapes.front();
  for (int e = 1; e < spec.n_ellipsoids; ++e) {
    Ellipsoid inner{};
    // Center uniformly inside 0.65 of the outer ellipsoid.
    std::array<double, 3> u{};
    double r2 = 2.0;
    while (r2 > 1.0) {
      r2 = 0.0;
      for (auto& c : u) {
        c = rs.uniform(-1.0, 1.0);
        r2 += c * c;
      }
    }
    for (int a = 0; a < 3; ++a) {
      double offset = 0.0;
      for (int b = 0; b < 3; ++b) offset += outer.rot[b][a] * (0.65 * u[b] * outer.radii[b]);
      inner.center[a] = outer.center[a] + offset;
      inner.radii[a] = rs.uniform(0.2, 0.45) * outer.radii[a];
    }
    inner.rot = rotation(rs.uniform(-3.14159, 3.14159), rs.uniform(-1.5, 1.5), rs.uniform(-3.14159, 3.14159));
    inner.value = pick_level();
    // Sparse inner shells; the outer one plays the cortex.
    inner.shell = e % 3 == 1;
    shapes.push_back(inner);
  }

  const Dims& d = spec.dims;
  std::vector<double> data(voxel_count(d), 0.0);
  std::vector<std::uint8_t> bits(voxel_count(d), 0);
  const double shell = static_cast<double>(spec.shell_thickness_vox);
  for (std::size_t i = 0; i < d[0]; ++i)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t k = 0; k < d[2]; ++k) {
        const std::size_t idx = (i * d[1] + j) * d[2] + k;
        for (const auto& e : shapes) {
          const auto [f, dist] = ellipsoid_eval(e, double(i), double(j), double(k));
          if (f >= 1.0) continue;
          bits[idx] = 1;
          data[idx] = (spec.shells && e.shell && dist < shell) ? 1.0 : e.value;
        }
      }
  bool any = false;
  for (auto b : bits) any = any || b;
  if (!any) throw Error(ErrorCode::InvalidSpec, "phantom contains no ellipsoid voxels");
  return {Volume3D(d, spec.spacing, std::move(data)), BrainMask(d, std::move(bits))};
}

// ---------------------------------------------------------------------------
// Intensity statistics

namespace {

std::vector<double> masked_values(const Volume3D& vol, const BrainMask& mask) {
  mask.check_matches(vol);
  std::vector<double> vals;
  vals.reserve(mask.count());
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (mask[i]) vals.push_back(vol[i]);
  return vals;
}

double percentile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double masked_percentile(const Volume3D& vol, const BrainMask& mask, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorCode::InvalidArgument, "percentile must lie in [0, 1]");
  auto vals = masked_values(vol, mask);
  std::sort(vals.begin(), vals.end());
  return percentile_sorted(vals, q);
}

std::pair<Volume3D, NormParams> normalize(const Volume3D& vol, const BrainMask& mask) {
  auto vals = masked_values(vol, mask);
  std::sort(vals.begin(), vals.end());
  const double p1 = percentile_sorted(vals, 0.01);
  const double p99 = percentile_sorted(vals, 0.99);
  if (!(p99 > p1))
    throw Error(ErrorCode::DegenerateIntensity, "masked 1st and 99th percentiles coincide (" + std::to_string(p1) + ")");
  const NormParams params{p1, 1.0 / (p99 - p1)};
  std::vector<double> out(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i)
    out[i] = std::clamp(params.apply(vol[i]), kNormClampLo, kNormClampHi);
  return {Volume3D(vol.dims(), vol.spacing(), std::move(out)), params};
}

Volume3D denormalize(const Volume3D& vol, const NormParams& params) {
  std::vector<double> out(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) out[i] = params.invert(vol[i]);
  return Volume3D(vol.dims(), vol.spacing(), std::move(out));
}

MaskedStats masked_stats(const Volume3D& vol, const BrainMask& mask) {
  mask.check_matches(vol);
  // Welford's update.
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (!mask[i]) continue;
    ++n;
    const double delta = vol[i] - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (vol[i] - mean);
  }
  return {mean, std::sqrt(std::max(0.0, m2 / static_cast<double>(n)))};
}

Volume3D average_volumes(std::span<const Volume3D> vols) {
  if (vols.empty()) throw Error(ErrorCode::InvalidArgument, "average_volumes needs at least one volume");
  const Volume3D& first = vols.front();
  std::vector<double> acc(first.size(), 0.0);
  for (const auto& v : vols) {
    if (v.dims() != first.dims() || v.spacing() != first.spacing())
      throw Error(ErrorCode::Shape, "average_volumes: mismatched dims or spacing");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  const double n = static_cast<double>(vols.size());
  for (auto& a : acc) a /= n;
  return Volume3D(first.dims(), first.spacing(), std::move(acc));
}

BrainMask threshold_mask(const Volume3D& vol) {
  std::vector<double> sorted(vol.data().begin(), vol.data().end());
  std::sort(sorted.begin(), sorted.end());
  const double thr = 0.1 * percentile_sorted(sorted, 0.99);
  const Dims& d = vol.dims();
  std::vector<std::uint8_t> above(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) above[i] = vol[i] > thr;

  // Label 6-connected components, keep the largest (first found wins ties).
  std::vector<std::int32_t> label(vol.size(), -1);
  std::int32_t best = -1;
  std::size_t best_size = 0;
  std::int32_t next = 0;
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < vol.size(); ++seed) {
    if (!above[seed] || label[seed] >= 0) continue;
    std::size_t size = 0;
    label[seed] = next;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t idx = queue.front();
      queue.pop_front();
      ++size;
      const std::size_t k = idx % d[2];
      const std::size_t j = (idx / d[2]) % d[1];
      const std::size_t i = idx / (d[1] * d[2]);
      const auto visit = [&](std::size_t n) {
        if (above[n] && label[n] < 0) {
          label[n] = next;
          queue.push_back(n);
        }
      };
      if (i > 0) visit(idx - d[1] * d[2]);
      if (i + 1 < d[0]) visit(idx + d[1] * d[2]);
      if (j > 0) visit(idx - d[2]);
      if (j + 1 < d[1]) visit(idx + d[2]);
      if (k > 0) visit(idx - 1);
      if (k + 1 < d[2]) visit(idx + 1);
    }
    if (size > best_size) {
      best_size = size;
      best = next;
    }
    ++next;
  }
  if (best < 0) throw Error(ErrorCode::DegenerateIntensity, "threshold mask is empty");
  std::vector<std::uint8_t> bits(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) bits[i] = label[i] == best;
  return BrainMask(d, std::move(bits));
}

namespace {

template <typename T>
std::vector<T> crop_buffer(std::span<const T> src, const Dims& d, int axis, std::size_t extent, Dims& out_dims) {
  if (extent == 0 || extent > d[axis])
    throw Error(ErrorCode::Shape, "crop extent " + std::to_string(extent) + " outside [1, " + std::to_string(d[axis]) + "]");
  out_dims = d;
  out_dims[axis] = extent;
  std::vector<T> out;
  out.reserve(voxel_count(out_dims));
  for (std::size_t i = 0; i < out_dims[0]; ++i)
    for (std::size_t j = 0; j < out_dims[1]; ++j)
      for (std::size_t k = 0; k < out_dims[2]; ++k) out.push_back(src[(i * d[1] + j) * d[2] + k]);
  return out;
}

}  // namespace

Volume3D crop_axis(const Volume3D& vol, int axis, std::size_t extent) {
  check_axis(axis);
  if (extent == vol.dims()[axis]) return vol;
  Dims out_dims{};
  auto data = crop_buffer(vol.data(), vol.dims(), axis, extent, out_dims);
  return Volume3D(out_dims, vol.spacing(), std::move(data));
}

BrainMask crop_axis(const BrainMask& mask, int axis, std::size_t extent) {
  check_axis(axis);
  if (extent == mask.dims()[axis]) return mask;
  Dims out_dims{};
  auto bits = crop_buffer(mask.bits(), mask.dims(), axis, extent, out_dims);
  return BrainMask(out_dims, std::move(bits));
}

Volume3D subtract(const Volume3D& a, const Volume3D& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::Shape, "subtract: dims differ");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return Volume3D(a.dims(), a.spacing(), std::move(out));
}

Volume3D add(const Volume3D& a, const Volume3D& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::Shape, "add: dims differ");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return Volume3D(a.dims(), a.spacing(), std::move(out));
}

}  // namespace srnr
