#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "srnr/volume.hpp"

// Minimal single-file NIfTI-1 support. Volume3D keeps its last axis
// contiguous while NIfTI stores the first axis fastest; both functions do the
// transposition, so voxel (i, j, k) in memory is NIfTI voxel (i, j, k).
namespace srnr::nifti {

inline constexpr std::int16_t kDatatypeInt16 = 4;
inline constexpr std::int16_t kDatatypeFloat32 = 16;
inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kVoxOffset = 352;

// The header fields this module interprets.
struct HeaderSubset {
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 0.0f;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  bool swapped = false;  // file byte order differs from host
};

// Parses the 348-byte header. Throws UnsupportedFormat / UnsupportedShape.
HeaderSubset parse_header(const std::array<std::uint8_t, kHeaderSize>& raw);

// Reads .nii or .nii.gz (gzip is detected from content, not the suffix).
Volume3D read_nifti(const std::filesystem::path& path);

// Writes float32, native byte order, scl_slope = 1, scl_inter = 0,
// vox_offset = 352. Paths ending in ".gz" are gzip-compressed; anything else is
// written uncompressed.
void write_nifti(const Volume3D& vol, const std::filesystem::path& path);

// Header + extension flag + voxel bytes exactly as write_nifti emits them.
std::vector<std::uint8_t> encode_nifti(const Volume3D& vol);

}  // namespace srnr::nifti
