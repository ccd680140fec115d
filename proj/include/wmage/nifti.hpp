#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wmage/io.hpp"

namespace wmage {

struct Dims3 {
  int nx = 0, ny = 0, nz = 0;

  std::size_t voxels() const { return std::size_t(nx) * std::size_t(ny) * std::size_t(nz); }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct Spacing3 {
  double sx = 1, sy = 1, sz = 1;
  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

/// Dense scalar grid, x fastest: index = x + nx * (y + ny * z).
struct Volume3D {
  Dims3 dims;
  Spacing3 spacing;
  std::vector<double> data;

  Volume3D() = default;
  Volume3D(Dims3 d, Spacing3 s, std::vector<double> values);
  Volume3D(Dims3 d, Spacing3 s, double fill = 0.0);

  std::size_t index(int x, int y, int z) const {
    return std::size_t(x) + std::size_t(dims.nx) * (std::size_t(y) + std::size_t(dims.ny) * std::size_t(z));
  }
  double at(int x, int y, int z) const { return data[index(x, y, z)]; }
  double& at(int x, int y, int z) { return data[index(x, y, z)]; }

  friend bool operator==(const Volume3D&, const Volume3D&) = default;
};

/// Integer segmentation grid; 0 is background.
struct LabelVolume {
  Dims3 dims;
  Spacing3 spacing;
  std::vector<std::int32_t> labels;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

namespace nifti {

inline constexpr int kHeaderSize = 348;
inline constexpr int kDefaultVoxOffset = 352;

enum Datatype : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

/// The subset of the NIfTI-1 header this project interprets. qform/sform are
/// parsed for completeness but only pixdim drives geometry.
struct Header {
  std::int32_t sizeof_hdr = kHeaderSize;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = kFloat32;
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{};
  float vox_offset = kDefaultVoxOffset;
  float scl_slope = 0;
  float scl_inter = 0;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
};

/// Validates and decodes the first 348 bytes. Throws wmage::Error with the
/// first failing check's code.
Header parse_header(std::span<const std::uint8_t> bytes);

}  // namespace nifti

Volume3D read_volume(std::span<const std::uint8_t> bytes);

/// Emits a single-file image; datatype_code must be float32 (16) or float64 (64).
Bytes write_volume(const Volume3D& vol, int datatype_code = nifti::kFloat32);

LabelVolume read_labels(std::span<const std::uint8_t> bytes);

/// Labels are written as float32 volumes, exact for ids below 2^24.
Bytes write_labels(const LabelVolume& labels);

Volume3D load_volume(const std::filesystem::path& path);
LabelVolume load_labels(const std::filesystem::path& path);

}  // namespace wmage
