#include "srnr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "srnr/error.hpp"
#include "srnr/text.hpp"

namespace srnr::metrics {

namespace {

void check_pair(const Volume3D& a, const Volume3D& b, const BrainMask& mask) {
  if (!a.same_shape(b)) throw Error(ErrorCode::Shape, "metric inputs have different dims");
  mask.check_matches(a);
}

// Filters `v` along `axis` with truncated, renormalized taps.
std::vector<double> filter_axis(const std::vector<double>& v, const Dims& d, int axis, const std::vector<double>& taps) {
  const std::size_t n = d[axis];
  std::size_t stride = 1;
  for (int a = axis + 1; a < 3; ++a) stride *= d[a];
  const std::size_t outer = voxel_count(d) / n;
  const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);

  // Renormalization factor per position along the axis.
  std::vector<double> inv_norm(n);
  for (std::size_t x = 0; x < n; ++x) {
    double s = 0.0;
    for (std::ptrdiff_t t = -r; t <= r; ++t) {
      const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(x) + t;
      if (p >= 0 && p < static_cast<std::ptrdiff_t>(n)) s += taps[t + r];
    }
    inv_norm[x] = 1.0 / s;
  }

  std::vector<double> out(v.size());
  std::vector<double> line(n);
  for (std::size_t p = 0; p < outer; ++p) {
    const std::size_t base = (p / stride) * n * stride + (p % stride);
    for (std::size_t x = 0; x < n; ++x) line[x] = v[base + x * stride];
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t t = -r; t <= r; ++t) {
        const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(x) + t;
        if (q >= 0 && q < static_cast<std::ptrdiff_t>(n)) acc += taps[t + r] * line[q];
      }
      out[base + x * stride] = acc * inv_norm[x];
    }
  }
  return out;
}

std::vector<double> gaussian_blur(std::vector<double> v, const Dims& d, const std::vector<double>& taps) {
  for (int axis = 0; axis < 3; ++axis) v = filter_axis(v, d, axis, taps);
  return v;
}

}  // namespace

double mae(const Volume3D& a, const Volume3D& b, const BrainMask& mask) {
  check_pair(a, b, mask);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask[i]) s += std::fabs(a[i] - b[i]);
  return s / static_cast<double>(mask.count());
}

double mse(const Volume3D& a, const Volume3D& b, const BrainMask& mask) {
  check_pair(a, b, mask);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask[i]) {
      const double e = a[i] - b[i];
      s += e * e;
    }
  return s / static_cast<double>(mask.count());
}

double psnr(const Volume3D& a, const Volume3D& b, const BrainMask& mask, double peak) {
  if (!(peak > 0.0)) throw Error(ErrorCode::InvalidArgument, "PSNR peak must be positive");
  const double m = mse(a, b, mask);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

std::vector<double> gaussian_taps(std::size_t size, double sigma) {
  if (size % 2 == 0 || size == 0) throw Error(ErrorCode::InvalidArgument, "Gaussian window size must be odd");
  const auto r = static_cast<std::ptrdiff_t>(size / 2);
  std::vector<double> taps(size);
  double s = 0.0;
  for (std::ptrdiff_t t = -r; t <= r; ++t) {
    const double w = std::exp(-0.5 * static_cast<double>(t * t) / (sigma * sigma));
    taps[t + r] = w;
    s += w;
  }
  for (auto& w : taps) w /= s;
  return taps;
}

std::vector<double> ssim_map(const Volume3D& a, const Volume3D& b, std::size_t window, double sigma) {
  if (!a.same_shape(b)) throw Error(ErrorCode::Shape, "SSIM inputs have different dims");
  const auto taps = gaussian_taps(window, sigma);
  const Dims& d = a.dims();
  const std::size_t n = a.size();
  std::vector<double> va(a.data().begin(), a.data().end());
  std::vector<double> vb(b.data().begin(), b.data().end());
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const auto mu_a = gaussian_blur(std::move(va), d, taps);
  const auto mu_b = gaussian_blur(std::move(vb), d, taps);
  const auto e_aa = gaussian_blur(std::move(aa), d, taps);
  const auto e_bb = gaussian_blur(std::move(bb), d, taps);
  const auto e_ab = gaussian_blur(std::move(ab), d, taps);

  const double c1 = (kSsimK1 * kSsimRange) * (kSsimK1 * kSsimRange);
  const double c2 = (kSsimK2 * kSsimRange) * (kSsimK2 * kSsimRange);
  std::vector<double> map(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double var_a = e_aa[i] - ma * ma;
    const double var_b = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
    const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
    map[i] = std::clamp(num / den, -1.0, 1.0);
  }
  return map;
}

SsimResult ssim_detailed(const Volume3D& a, const Volume3D& b, const BrainMask& mask) {
  check_pair(a, b, mask);
  SsimResult res;
  const std::size_t smallest = *std::min_element(a.dims().begin(), a.dims().end());
  if (smallest < kSsimWindow) {
    res.window = smallest % 2 == 1 ? smallest : smallest - 1;
    res.window_shrunk = true;
  }
  const auto map = ssim_map(a, b, res.window, kSsimSigma);
  double s = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i)
    if (mask[i]) s += map[i];
  res.value = s / static_cast<double>(mask.count());
  return res;
}

MetricsRow evaluate(std::string label, const Volume3D& a, const Volume3D& b, const BrainMask& mask) {
  return {std::move(label), mae(a, b, mask), psnr(a, b, mask), ssim(a, b, mask)};
}

namespace {

Summary summarize(const std::vector<double>& vals) {
  Summary s;
  s.count = vals.size();
  if (vals.empty()) return s;
  double sum = 0.0;
  for (double v : vals) sum += v;
  s.mean = sum / static_cast<double>(vals.size());
  if (vals.size() > 1) {
    double ss = 0.0;
    for (double v : vals) ss += (v - s.mean) * (v - s.mean);
    s.std_dev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
  }
  return s;
}

}  // namespace

GroupMetrics group_metrics(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw Error(ErrorCode::InvalidArgument, "group_metrics needs at least one row");
  std::vector<double> m, p, s;
  std::size_t infinite = 0;
  for (const auto& r : rows) {
    m.push_back(r.mae);
    s.push_back(r.ssim);
    if (std::isinf(r.psnr_db)) {
      ++infinite;
    } else {
      p.push_back(r.psnr_db);
    }
  }
  GroupMetrics g{summarize(m), summarize(p), summarize(s)};
  g.psnr_db.excluded = infinite;
  if (p.empty()) g.psnr_db.mean = std::numeric_limits<double>::infinity();
  return g;
}

std::string format_row(const MetricsRow& row) {
  return row.label + "," + text::format_double(row.mae) + "," + text::format_double(row.psnr_db) + "," +
         text::format_double(row.ssim);
}

MetricsRow parse_row(const std::string& line) {
  const auto f = text::split(text::trim(line), ',');
  if (f.size() != 4) throw Error(ErrorCode::InvalidArgument, "metrics row needs 4 fields: '" + line + "'");
  return {f[0], text::parse_double(f[1]), text::parse_double(f[2]), text::parse_double(f[3])};
}

}  // namespace srnr::metrics
