#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "srnr/volume.hpp"

namespace srnr {

// Thick-slice acquisition along one axis.
struct DegradeSpec {
  int slice_axis = 2;
  int factor = 5;  // 3.5 mm / 0.7 mm

  void validate() const;
};

// Additive Gaussian noise; sigma is sigma_rel times the masked intensity std.
struct NoiseSpec {
  double mu = 0.0;
  double sigma_rel = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DownsampleResult {
  Volume3D volume;
  std::size_t cropped_slices = 0;  // trailing fine slices dropped before averaging
};

struct UpsampleResult {
  Volume3D volume;
  bool linear_fallback = false;  // fewer than 4 knots
};

// Largest multiple of spec.factor not exceeding the slice-axis extent.
std::size_t divisible_extent(const Dims& dims, const DegradeSpec& spec);

// Block mean of `factor` consecutive slices; slice spacing grows by factor.
DownsampleResult downsample_slices(const Volume3D& vol, const DegradeSpec& spec);

// Natural cubic spline through the thick-slice centres, evaluated at the
// fine-grid voxel centres 0 .. target_extent-1. Knot i sits at
// (i + 0.5) * f - 0.5 where f = target_extent / n_knots; samples outside the
// knot range take the end-knot value.
UpsampleResult upsample_cubic(const Volume3D& vol, std::size_t target_extent, int slice_axis);

// Dense (n_samples x n_knots) row-major matrix whose rows hold the spline
// weights of each output sample. The spline is linear in the knot values.
std::vector<double> spline_weights(std::size_t n_knots, std::size_t target_extent);

// Unit-variance noise field for `seed`; voxel idx takes counter idx.
double unit_noise(std::uint64_t seed, std::size_t voxel_index);

// vol + mu + sigma_rel * masked_std * unit_noise at every voxel.
Volume3D add_gaussian_noise(const Volume3D& vol, const BrainMask& mask, const NoiseSpec& spec);

struct TrainingPair {
  Volume3D input;             // cubic-upsampled thick-slice volume
  Volume3D target_residual;   // noisy reference - input
  Volume3D noisy_reference;
  std::size_t cropped_slices = 0;
};

// Crops hr (and mask) to a slice extent divisible by the factor.
Volume3D crop_to_factor(const Volume3D& vol, const DegradeSpec& spec);
BrainMask crop_to_factor(const BrainMask& mask, const DegradeSpec& spec);

// Upsampled network input for a ground-truth volume (already cropped).
Volume3D degrade_input(const Volume3D& hr, const DegradeSpec& spec);

TrainingPair make_training_pair(const Volume3D& hr, const BrainMask& mask, const DegradeSpec& dspec,
                                const NoiseSpec& nspec);

// Pair against an externally built reference (e.g. an average of noisy
// repetitions). hr and reference must already share dims divisible by factor.
TrainingPair make_training_pair_from_reference(const Volume3D& hr, const Volume3D& reference,
                                               const DegradeSpec& dspec);

}  // namespace srnr
