#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "srnr/volume.hpp"

namespace srnr::metrics {

struct MetricsRow {
  std::string label;
  double mae = 0.0;
  double psnr_db = 0.0;  // +infinity when the images are identical on the mask
  double ssim = 0.0;
};

double mae(const Volume3D& a, const Volume3D& b, const BrainMask& mask);
double mse(const Volume3D& a, const Volume3D& b, const BrainMask& mask);

// 10 log10(peak^2 / MSE) over masked voxels; +infinity when MSE == 0.
double psnr(const Volume3D& a, const Volume3D& b, const BrainMask& mask, double peak = 1.0);

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr double kSsimRange = 1.0;

struct SsimResult {
  double value = 0.0;
  std::size_t window = kSsimWindow;  // odd edge length actually used
  bool window_shrunk = false;
};

// Normalized 1D Gaussian taps (size odd).
std::vector<double> gaussian_taps(std::size_t size, double sigma);

// Local SSIM map with an isotropic Gaussian window. Near the volume border the
// window is truncated and renormalized. Values clamped to [-1, 1].
std::vector<double> ssim_map(const Volume3D& a, const Volume3D& b, std::size_t window, double sigma = kSsimSigma);

// Masked mean of the SSIM map. If any axis is shorter than 11 voxels the
// window shrinks to the largest odd size that fits.
SsimResult ssim_detailed(const Volume3D& a, const Volume3D& b, const BrainMask& mask);
inline double ssim(const Volume3D& a, const Volume3D& b, const BrainMask& mask) {
  return ssim_detailed(a, b, mask).value;
}

MetricsRow evaluate(std::string label, const Volume3D& a, const Volume3D& b, const BrainMask& mask);

struct Summary {
  double mean = 0.0;
  double std_dev = 0.0;  // sample form (N - 1); 0 when N == 1
  std::size_t count = 0;  // values contributing
  std::size_t excluded = 0;  // infinite PSNRs left out
};

struct GroupMetrics {
  Summary mae;
  Summary psnr_db;
  Summary ssim;
};

// Group mean and sample standard deviation across rows. Infinite PSNR values
// are excluded and counted; if all are infinite the PSNR mean is +infinity.
GroupMetrics group_metrics(std::span<const MetricsRow> rows);

// "label,mae,psnr_db,ssim"
inline constexpr const char* kRowHeader = "label,mae,psnr_db,ssim";
std::string format_row(const MetricsRow& row);
MetricsRow parse_row(const std::string& line);

}  // namespace srnr::metrics
