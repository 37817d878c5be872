#include "srnr/nifti_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "srnr/error.hpp"

namespace srnr::nifti {

namespace {

// Byte offsets within the NIfTI-1 header.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffRegular = 38;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrowX = 280;
constexpr std::size_t kOffMagic = 344;

template <typename T>
T byteswap(T v) {
  auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

template <typename T>
T load(const std::uint8_t* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return swap ? byteswap(v) : v;
}

template <typename T>
void store(std::uint8_t* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

struct GzCloser {
  void operator()(gzFile f) const noexcept { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

void read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path) {
  auto* out = static_cast<std::uint8_t*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw Error(ErrorCode::Io, "unexpected end of file or read error in " + path.string());
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

}  // namespace

HeaderSubset parse_header(const std::array<std::uint8_t, kHeaderSize>& raw) {
  HeaderSubset h;
  const std::int32_t sizeof_hdr = load<std::int32_t>(raw.data() + kOffSizeofHdr, false);
  if (sizeof_hdr == 348) {
    h.swapped = false;
  } else if (byteswap(sizeof_hdr) == 348) {
    h.swapped = true;
  } else {
    throw Error(ErrorCode::UnsupportedFormat, "sizeof_hdr is not 348 in either byte order");
  }
  if (std::memcmp(raw.data() + kOffMagic, "n+1\0", 4) != 0)
    throw Error(ErrorCode::UnsupportedFormat, "magic is not \"n+1\" (only single-file NIfTI-1 is supported)");

  for (int i = 0; i < 8; ++i) h.dim[i] = load<std::int16_t>(raw.data() + kOffDim + 2 * i, h.swapped);
  h.datatype = load<std::int16_t>(raw.data() + kOffDatatype, h.swapped);
  h.bitpix = load<std::int16_t>(raw.data() + kOffBitpix, h.swapped);
  for (int i = 0; i < 8; ++i) h.pixdim[i] = load<float>(raw.data() + kOffPixdim + 4 * i, h.swapped);
  h.vox_offset = load<float>(raw.data() + kOffVoxOffset, h.swapped);
  h.scl_slope = load<float>(raw.data() + kOffSclSlope, h.swapped);
  h.scl_inter = load<float>(raw.data() + kOffSclInter, h.swapped);

  const int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7) throw Error(ErrorCode::UnsupportedShape, "dim[0] = " + std::to_string(ndim));
  for (int i = 1; i <= ndim; ++i)
    if (h.dim[i] < 1) throw Error(ErrorCode::UnsupportedShape, "non-positive dim[" + std::to_string(i) + "]");
  for (int i = 4; i <= ndim; ++i)
    if (h.dim[i] != 1)
      throw Error(ErrorCode::UnsupportedShape, "only 3D volumes are supported (dim[" + std::to_string(i) +
                                                   "] = " + std::to_string(h.dim[i]) + ")");
  if (h.datatype != kDatatypeFloat32 && h.datatype != kDatatypeInt16)
    throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype));
  return h;
}

Volume3D read_nifti(const std::filesystem::path& path) {
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::array<std::uint8_t, kHeaderSize> raw{};
  read_exact(f.get(), raw.data(), raw.size(), path);
  const HeaderSubset h = parse_header(raw);

  Dims dims{1, 1, 1};
  Spacing spacing{1.0, 1.0, 1.0};
  for (int a = 0; a < 3; ++a) {
    if (a < h.dim[0]) {
      dims[a] = static_cast<std::size_t>(h.dim[a + 1]);
      const double s = std::fabs(static_cast<double>(h.pixdim[a + 1]));
      spacing[a] = (s > 0.0 && std::isfinite(s)) ? s : 1.0;
    }
  }

  const auto offset = static_cast<std::size_t>(std::max(h.vox_offset, static_cast<float>(kHeaderSize)));
  for (std::size_t skip = offset - kHeaderSize; skip > 0;) {
    std::array<std::uint8_t, 256> sink{};
    const std::size_t n = std::min(skip, sink.size());
    read_exact(f.get(), sink.data(), n, path);
    skip -= n;
  }

  const std::size_t count = voxel_count(dims);
  const std::size_t bytes_per = h.datatype == kDatatypeFloat32 ? 4 : 2;
  std::vector<std::uint8_t> payload(count * bytes_per);
  read_exact(f.get(), payload.data(), payload.size(), path);

  const double slope = (h.scl_slope == 0.0f || !std::isfinite(h.scl_slope)) ? 1.0 : h.scl_slope;
  const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
  const bool identity_scaling = slope == 1.0 && inter == 0.0;

  std::vector<double> data(count);
  std::size_t src = 0;
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i, ++src) {
        const std::uint8_t* p = payload.data() + src * bytes_per;
        const double stored = h.datatype == kDatatypeFloat32 ? static_cast<double>(load<float>(p, h.swapped))
                                                             : static_cast<double>(load<std::int16_t>(p, h.swapped));
        data[(i * dims[1] + j) * dims[2] + k] = identity_scaling ? stored : stored * slope + inter;
      }
  return Volume3D(dims, spacing, std::move(data));
}

std::vector<std::uint8_t> encode_nifti(const Volume3D& vol) {
  const Dims& d = vol.dims();
  for (std::size_t n : d)
    if (n > 32767) throw Error(ErrorCode::UnsupportedShape, "dimension exceeds NIfTI-1 int16 range");

  std::vector<std::uint8_t> out(kVoxOffset + 4 * vol.size(), 0);
  std::uint8_t* h = out.data();
  store<std::int32_t>(h + kOffSizeofHdr, 348);
  h[kOffRegular] = 'r';
  const std::int16_t dim[8] = {3, static_cast<std::int16_t>(d[0]), static_cast<std::int16_t>(d[1]),
                               static_cast<std::int16_t>(d[2]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store<std::int16_t>(h + kOffDim + 2 * i, dim[i]);
  store<std::int16_t>(h + kOffDatatype, kDatatypeFloat32);
  store<std::int16_t>(h + kOffBitpix, 32);
  const float pixdim[8] = {1.0f, static_cast<float>(vol.spacing()[0]), static_cast<float>(vol.spacing()[1]),
                           static_cast<float>(vol.spacing()[2]), 0.0f, 0.0f, 0.0f, 0.0f};
  for (int i = 0; i < 8; ++i) store<float>(h + kOffPixdim + 4 * i, pixdim[i]);
  store<float>(h + kOffVoxOffset, static_cast<float>(kVoxOffset));
  store<float>(h + kOffSclSlope, 1.0f);
  store<float>(h + kOffSclInter, 0.0f);
  h[kOffXyztUnits] = 2;  // millimetres
  std::memcpy(h + kOffDescrip, "srnr", 4);
  // Axis-aligned affine: qform is the identity quaternion with pixdim
  // scaling, sform repeats it explicitly.
  store<std::int16_t>(h + kOffQformCode, 1);
  store<std::int16_t>(h + kOffSformCode, 1);
  for (int r = 0; r < 3; ++r) store<float>(h + kOffSrowX + 16 * r + 4 * r, pixdim[r + 1]);
  std::memcpy(h + kOffMagic, "n+1\0", 4);

  std::uint8_t* p = out.data() + kVoxOffset;
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i, p += 4) store<float>(p, static_cast<float>(vol.at(i, j, k)));
  return out;
}

void write_nifti(const Volume3D& vol, const std::filesystem::path& path) {
  const auto bytes = encode_nifti(vol);
  const std::string name = path.string();
  if (name.size() > 3 && name.compare(name.size() - 3, 3, ".gz") == 0) {
    GzHandle f(gzopen(name.c_str(), "wb"));
    if (!f) throw Error(ErrorCode::Io, "cannot open " + name + " for writing");
    if (gzwrite(f.get(), bytes.data(), static_cast<unsigned>(bytes.size())) != static_cast<int>(bytes.size()))
      throw Error(ErrorCode::Io, "write failed for " + name);
    return;
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot open " + name + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::Io, "write failed for " + name);
}

}  // namespace srnr::nifti
