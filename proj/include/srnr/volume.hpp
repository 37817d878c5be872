#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace srnr {

using Dims = std::array<std::size_t, 3>;
using Spacing = std::array<double, 3>;

inline std::size_t voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

// Dense scalar grid. Voxel (i, j, k) lives at (i * ny + j) * nz + k, i.e.
// row-major with the last axis contiguous. Immutable after construction.
class Volume3D {
 public:
  Volume3D() = default;
  // Throws Shape / InvalidArgument if the data length, spacing or values are
  // not valid (non-finite voxels are rejected).
  Volume3D(Dims dims, Spacing spacing, std::vector<double> data);
  // Constant-valued volume.
  static Volume3D filled(Dims dims, Spacing spacing, double value);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> data() const noexcept { return data_; }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return (i * dims_[1] + j) * dims_[2] + k;
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const noexcept { return data_[index(i, j, k)]; }
  double operator[](std::size_t idx) const noexcept { return data_[idx]; }

  bool same_shape(const Volume3D& other) const noexcept { return dims_ == other.dims_; }

  // Releases the buffer so it can be transformed into a new volume.
  std::vector<double> take_data() && { return std::move(data_); }

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Dims dims_{0, 0, 0};
  Spacing spacing_{1.0, 1.0, 1.0};
  std::vector<double> data_;
};

// Boolean voxel set aligned to a Volume3D. Never empty.
class BrainMask {
 public:
  BrainMask() = default;
  BrainMask(Dims dims, std::vector<std::uint8_t> bits);
  // Nonzero voxels of `vol`.
  static BrainMask from_volume(const Volume3D& vol);
  static BrainMask full(Dims dims);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return bits_.size(); }
  std::size_t count() const noexcept { return count_; }
  bool operator[](std::size_t idx) const noexcept { return bits_[idx] != 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  // Throws Shape unless dims match.
  void check_matches(const Volume3D& vol) const;
  // Mask as a 0/1 volume (for writing to disk).
  Volume3D to_volume(Spacing spacing) const;

  friend bool operator==(const BrainMask&, const BrainMask&) = default;

 private:
  Dims dims_{0, 0, 0};
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
};

struct PhantomSpec {
  Dims dims{64, 64, 60};
  Spacing spacing{0.7, 0.7, 0.7};
  std::uint64_t seed = 0;
  int n_ellipsoids = 12;
  int shell_thickness_vox = 1;
  bool shells = true;
  std::vector<double> intensity_levels{0.35, 0.55, 0.7, 0.85};
};

// Procedural head-like phantom: a large outer ellipsoid with smaller
// ellipsoids painted inside it, each optionally rimmed by a thin bright
// shell. Pure function of the spec.
std::pair<Volume3D, BrainMask> generate_phantom(const PhantomSpec& spec);

// y = (x - offset) * scale.
struct NormParams {
  double offset = 0.0;
  double scale = 1.0;

  double apply(double x) const noexcept { return (x - offset) * scale; }
  double invert(double y) const noexcept { return y / scale + offset; }
};

inline constexpr double kNormClampLo = 0.0;
inline constexpr double kNormClampHi = 1.5;

// Linear-interpolated percentile (q in [0, 1]) of the masked voxels.
double masked_percentile(const Volume3D& vol, const BrainMask& mask, double q);

// Maps the masked 1st percentile to 0 and the 99th to 1, clamping every voxel
// to [0, 1.5].
std::pair<Volume3D, NormParams> normalize(const Volume3D& vol, const BrainMask& mask);
Volume3D denormalize(const Volume3D& vol, const NormParams& params);

struct MaskedStats {
  double mean = 0.0;
  double std_dev = 0.0;  // population form (divide by N)
};

MaskedStats masked_stats(const Volume3D& vol, const BrainMask& mask);

// Voxelwise mean of aligned volumes.
Volume3D average_volumes(std::span<const Volume3D> vols);

// Mask for ingested data: voxels above 10% of the 99th intensity percentile,
// restricted to the largest 6-connected component.
BrainMask threshold_mask(const Volume3D& vol);

// Keeps the first `extent` slices along `axis`.
Volume3D crop_axis(const Volume3D& vol, int axis, std::size_t extent);
BrainMask crop_axis(const BrainMask& mask, int axis, std::size_t extent);

// Elementwise a - b / a + b (same dims required; spacing from a).
Volume3D subtract(const Volume3D& a, const Volume3D& b);
Volume3D add(const Volume3D& a, const Volume3D& b);

}  // namespace srnr
