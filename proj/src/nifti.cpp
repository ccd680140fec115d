#include "wmage/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "wmage/error.hpp"

namespace wmage {

static_assert(std::endian::native == std::endian::little, "NIfTI codec assumes a little-endian host");

Volume3D::Volume3D(Dims3 d, Spacing3 s, std::vector<double> values)
    : dims(d), spacing(s), data(std::move(values)) {
  if (d.nx < 1 || d.ny < 1 || d.nz < 1) throw Error(Errc::InvalidDims, "volume dims must be >= 1");
  if (!(s.sx > 0 && s.sy > 0 && s.sz > 0)) throw Error(Errc::InvalidDims, "volume spacing must be > 0");
  if (data.size() != d.voxels()) throw Error(Errc::InvalidDims, "volume data length does not match dims");
}

Volume3D::Volume3D(Dims3 d, Spacing3 s, double fill) : Volume3D(d, s, std::vector<double>(d.voxels(), fill)) {}

namespace nifti {
namespace {

// Field offsets within the 348-byte NIfTI-1 header.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffMagic = 344;

template <class T>
T load_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

template <class T>
void store_le(Bytes& bytes, std::size_t offset, T value) {
  std::memcpy(bytes.data() + offset, &value, sizeof(T));
}

int bytes_per_voxel(int datatype) {
  switch (datatype) {
    case kUint8: return 1;
    case kInt16: return 2;
    case kInt32: return 4;
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
  }
}

}  // namespace

Header parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < std::size_t(kHeaderSize))
    throw Error(Errc::TruncatedData, "input shorter than the 348-byte header");

  Header h;
  h.sizeof_hdr = load_le<std::int32_t>(bytes, 0);
  if (h.sizeof_hdr != kHeaderSize) {
    if (__builtin_bswap32(std::uint32_t(h.sizeof_hdr)) == std::uint32_t(kHeaderSize))
      throw Error(Errc::BigEndian, "big-endian NIfTI files are not supported");
    throw Error(Errc::BadHeader, "sizeof_hdr is " + std::to_string(h.sizeof_hdr) + ", expected 348");
  }

  std::memcpy(h.magic.data(), bytes.data() + kOffMagic, 4);
  if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0)
    throw Error(Errc::BadMagic, "magic is not \"n+1\" (single-file NIfTI-1)");

  for (int i = 0; i < 8; ++i) h.dim[i] = load_le<std::int16_t>(bytes, kOffDim + 2 * i);
  for (int i = 0; i < 8; ++i) h.pixdim[i] = load_le<float>(bytes, kOffPixdim + 4 * i);
  h.datatype = load_le<std::int16_t>(bytes, kOffDatatype);
  h.bitpix = load_le<std::int16_t>(bytes, kOffBitpix);
  h.vox_offset = load_le<float>(bytes, kOffVoxOffset);
  h.scl_slope = load_le<float>(bytes, kOffSclSlope);
  h.scl_inter = load_le<float>(bytes, kOffSclInter);
  h.qform_code = load_le<std::int16_t>(bytes, kOffQformCode);
  h.sform_code = load_le<std::int16_t>(bytes, kOffSformCode);

  if (h.dim[0] != 3) throw Error(Errc::UnsupportedRank, "dim[0] is " + std::to_string(h.dim[0]) + ", expected 3");
  for (int i = 1; i <= 3; ++i)
    if (h.dim[i] < 1) throw Error(Errc::BadHeader, "dim[" + std::to_string(i) + "] must be >= 1");
  for (int i = 1; i <= 3; ++i)
    if (!(h.pixdim[i] > 0) || !std::isfinite(h.pixdim[i]))
      throw Error(Errc::BadHeader, "pixdim[" + std::to_string(i) + "] must be > 0");
  if (bytes_per_voxel(h.datatype) == 0)
    throw Error(Errc::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype));
  if (!std::isfinite(h.vox_offset) || h.vox_offset < float(kHeaderSize) || h.vox_offset != std::floor(h.vox_offset))
    throw Error(Errc::BadHeader, "vox_offset must be an integer >= 348");
  if (!std::isfinite(h.scl_slope) || !std::isfinite(h.scl_inter))
    throw Error(Errc::BadHeader, "non-finite intensity scaling");
  return h;
}

}  // namespace nifti

namespace {

template <class T>
void decode_into(std::span<const std::uint8_t> payload, std::vector<double>& out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v;
    std::memcpy(&v, payload.data() + i * sizeof(T), sizeof(T));
    out[i] = double(v);
  }
}

}  // namespace

Volume3D read_volume(std::span<const std::uint8_t> bytes) {
  using namespace nifti;
  const Header h = parse_header(bytes);
  const Dims3 dims{h.dim[1], h.dim[2], h.dim[3]};
  const std::size_t n = dims.voxels();
  const std::size_t offset = std::size_t(h.vox_offset);
  const int bpv = bytes_per_voxel(h.datatype);
  if (bytes.size() < offset || bytes.size() - offset < n * std::size_t(bpv))
    throw Error(Errc::TruncatedData, "header promises " + std::to_string(n * bpv) + " data bytes at offset " +
                                         std::to_string(offset) + ", file has " + std::to_string(bytes.size()));

  std::vector<double> data(n);
  auto payload = bytes.subspan(offset, n * std::size_t(bpv));
  switch (h.datatype) {
    case kUint8: decode_into<std::uint8_t>(payload, data); break;
    case kInt16: decode_into<std::int16_t>(payload, data); break;
    case kInt32: decode_into<std::int32_t>(payload, data); break;
    case kFloat32: decode_into<float>(payload, data); break;
    case kFloat64: decode_into<double>(payload, data); break;
  }
  if (h.scl_slope != 0.0f) {
    const double slope = h.scl_slope, inter = h.scl_inter;
    for (auto& v : data) v = slope * v + inter;
  }
  return Volume3D(dims, Spacing3{h.pixdim[1], h.pixdim[2], h.pixdim[3]}, std::move(data));
}

Bytes write_volume(const Volume3D& vol, int datatype_code) {
  using namespace nifti;
  if (datatype_code != kFloat32 && datatype_code != kFloat64)
    throw Error(Errc::UnsupportedDatatype, "writer supports float32 (16) and float64 (64), got " +
                                               std::to_string(datatype_code));
  const auto& d = vol.dims;
  if (d.nx < 1 || d.ny < 1 || d.nz < 1 || d.nx > INT16_MAX || d.ny > INT16_MAX || d.nz > INT16_MAX)
    throw Error(Errc::InvalidDims, "dims must lie in [1, 32767]");
  if (vol.data.size() != d.voxels()) throw Error(Errc::InvalidDims, "volume data length does not match dims");

  const int bpv = datatype_code == kFloat32 ? 4 : 8;
  Bytes out(std::size_t(kDefaultVoxOffset) + vol.data.size() * std::size_t(bpv), 0);
  store_le<std::int32_t>(out, 0, kHeaderSize);
  const std::int16_t dim[8] = {3, std::int16_t(d.nx), std::int16_t(d.ny), std::int16_t(d.nz), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) store_le<std::int16_t>(out, kOffDim + 2 * i, dim[i]);
  store_le<std::int16_t>(out, kOffDatatype, std::int16_t(datatype_code));
  store_le<std::int16_t>(out, kOffBitpix, std::int16_t(8 * bpv));
  const float pixdim[8] = {1.0f, float(vol.spacing.sx), float(vol.spacing.sy), float(vol.spacing.sz), 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) store_le<float>(out, kOffPixdim + 4 * i, pixdim[i]);
  store_le<float>(out, kOffVoxOffset, float(kDefaultVoxOffset));
  store_le<float>(out, kOffSclSlope, 0.0f);
  store_le<float>(out, kOffSclInter, 0.0f);
  out[kOffXyztUnits] = 2 | 8;  // mm, seconds
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);

  std::uint8_t* payload = out.data() + kDefaultVoxOffset;
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    if (datatype_code == kFloat32) {
      const float v = float(vol.data[i]);
      std::memcpy(payload + 4 * i, &v, 4);
    } else {
      std::memcpy(payload + 8 * i, &vol.data[i], 8);
    }
  }
  return out;
}

LabelVolume read_labels(std::span<const std::uint8_t> bytes) {
  Volume3D vol = read_volume(bytes);
  LabelVolume out{vol.dims, vol.spacing, std::vector<std::int32_t>(vol.data.size())};
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const double v = vol.data[i];
    const double r = std::round(v);
    if (!(std::abs(v - r) <= 1e-6))
      throw Error(Errc::NonIntegerLabel, "voxel " + std::to_string(i) + " holds non-integer value " + format_double(v));
    if (r < 0) throw Error(Errc::NegativeLabel, "voxel " + std::to_string(i) + " holds negative label");
    if (r > double(INT32_MAX)) throw Error(Errc::NonIntegerLabel, "label exceeds int32 range");
    out.labels[i] = std::int32_t(r);
  }
  return out;
}

Bytes write_labels(const LabelVolume& labels) {
  std::vector<double> values(labels.labels.begin(), labels.labels.end());
  return write_volume(Volume3D(labels.dims, labels.spacing, std::move(values)), nifti::kFloat32);
}

Volume3D load_volume(const std::filesystem::path& path) { return read_volume(read_file(path)); }

LabelVolume load_labels(const std::filesystem::path& path) { return read_labels(read_file(path)); }

}  // namespace wmage
