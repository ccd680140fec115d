#include <doctest.h>

#include <cstring>
#include <random>

#include "oracles.hpp"
#include "wmage/error.hpp"
#include "wmage/nifti.hpp"

using namespace wmage;

namespace {

Errc code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    read_volume(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoFailure;
}

}  // namespace

TEST_CASE("hand-built float32 header decodes") {
  oracle::RawHeader h(16, 32, 2, 2, 2);
  std::vector<float> values{0, 1, 2, 3, 4, 5, 6, 7};
  auto v = read_volume(h.with_data(values));
  CHECK(v.dims == Dims3{2, 2, 2});
  CHECK(v.spacing == Spacing3{1, 1, 1});
  for (int i = 0; i < 8; ++i) CHECK(v.data[i] == i);
  CHECK(v.at(1, 0, 0) == 1);
  CHECK(v.at(0, 1, 0) == 2);
  CHECK(v.at(0, 0, 1) == 4);
}

TEST_CASE("single voxel float32 byte image") {
  Volume3D v({1, 1, 1}, {1, 1, 1}, std::vector<double>{3.5});
  auto b = write_volume(v, nifti::kFloat32);
  REQUIRE(b.size() == 356);
  // 3.5f == 0x40600000, little-endian
  CHECK(b[352] == 0x00);
  CHECK(b[353] == 0x00);
  CHECK(b[354] == 0x60);
  CHECK(b[355] == 0x40);
  CHECK(std::memcmp(b.data() + 344, "n+1\0", 4) == 0);
  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, b.data(), 4);
  CHECK(sizeof_hdr == 348);
  float vox_offset, slope;
  std::memcpy(&vox_offset, b.data() + 108, 4);
  std::memcpy(&slope, b.data() + 112, 4);
  CHECK(vox_offset == 352.0f);
  CHECK(slope == 0.0f);
}

TEST_CASE("integer datatypes and intensity scaling") {
  SUBCASE("uint8") {
    oracle::RawHeader h(2, 8, 2, 2, 1);
    auto v = read_volume(h.with_data(std::vector<std::uint8_t>{0, 1, 255, 7}));
    CHECK(v.data == std::vector<double>{0, 1, 255, 7});
  }
  SUBCASE("int16 with slope") {
    oracle::RawHeader h(4, 16, 3, 1, 1);
    h.put<float>(112, 0.5f);
    h.put<float>(116, 10.0f);
    auto v = read_volume(h.with_data(std::vector<std::int16_t>{-4, 0, 6}));
    CHECK(v.data == std::vector<double>{8, 10, 13});
  }
  SUBCASE("int32 with slope 0 means no rescale") {
    oracle::RawHeader h(8, 32, 1, 1, 2);
    h.put<float>(116, 99.0f);
    auto v = read_volume(h.with_data(std::vector<std::int32_t>{-70000, 70000}));
    CHECK(v.data == std::vector<double>{-70000, 70000});
  }
  SUBCASE("anisotropic spacing") {
    oracle::RawHeader h(64, 64, 1, 1, 1);
    h.put<float>(80, 1.5f);
    h.put<float>(84, 2.0f);
    h.put<float>(88, 0.25f);
    auto v = read_volume(h.with_data(std::vector<double>{1.25}));
    CHECK(v.spacing == Spacing3{1.5, 2.0, 0.25});
  }
}

TEST_CASE("labels") {
  SUBCASE("uint8 labels") {
    oracle::RawHeader h(2, 8, 2, 2, 1);
    auto l = read_labels(h.with_data(std::vector<std::uint8_t>{0, 1, 1, 2}));
    CHECK(l.labels == std::vector<std::int32_t>{0, 1, 1, 2});
  }
  SUBCASE("int16 all background") {
    oracle::RawHeader h(4, 16, 2, 2, 2);
    auto l = read_labels(h.with_data(std::vector<std::int16_t>(8, 0)));
    CHECK(l.labels == std::vector<std::int32_t>(8, 0));
  }
  SUBCASE("non-integer") {
    oracle::RawHeader h(16, 32, 2, 1, 1);
    try {
      read_labels(h.with_data(std::vector<float>{1.0f, 1.5f}));
      FAIL("expected NonIntegerLabel");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NonIntegerLabel);
    }
  }
  SUBCASE("negative") {
    oracle::RawHeader h(4, 16, 1, 1, 1);
    try {
      read_labels(h.with_data(std::vector<std::int16_t>{-3}));
      FAIL("expected NegativeLabel");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NegativeLabel);
    }
  }
  SUBCASE("label round trip") {
    LabelVolume l{{3, 2, 1}, {1, 1, 2}, {0, 4, 4, 134, 0, 1}};
    CHECK(read_labels(write_labels(l)) == l);
  }
}

TEST_CASE("malformed headers map to named errors") {
  oracle::RawHeader good(16, 32, 2, 1, 1);
  const auto ok = good.with_data(std::vector<float>{1, 2});
  CHECK_NOTHROW(read_volume(ok));

  auto bad_magic = ok;
  bad_magic[345] = 'x';
  CHECK(code_of(bad_magic) == Errc::BadMagic);

  auto pair_magic = ok;
  std::memcpy(pair_magic.data() + 344, "ni1\0", 4);
  CHECK(code_of(pair_magic) == Errc::BadMagic);

  auto dtype = good;
  dtype.put<std::int16_t>(70, 32);
  CHECK(code_of(dtype.with_data(std::vector<float>{1, 2})) == Errc::UnsupportedDatatype);

  auto rank = good;
  rank.put<std::int16_t>(40, 4);
  CHECK(code_of(rank.with_data(std::vector<float>{1, 2})) == Errc::UnsupportedRank);

  auto truncated = ok;
  truncated.pop_back();
  CHECK(code_of(truncated) == Errc::TruncatedData);
  CHECK(code_of(std::vector<std::uint8_t>(100, 0)) == Errc::TruncatedData);

  auto big = ok;
  std::reverse(big.begin(), big.begin() + 4);
  CHECK(code_of(big) == Errc::BigEndian);

  auto sizeof_bad = good;
  sizeof_bad.put<std::int32_t>(0, 540);
  CHECK(code_of(sizeof_bad.with_data(std::vector<float>{1, 2})) == Errc::BadHeader);

  auto zero_dim = good;
  zero_dim.put<std::int16_t>(44, 0);
  CHECK(code_of(zero_dim.with_data(std::vector<float>{1, 2})) == Errc::BadHeader);

  auto zero_pixdim = good;
  zero_pixdim.put<float>(84, 0.0f);
  CHECK(code_of(zero_pixdim.with_data(std::vector<float>{1, 2})) == Errc::BadHeader);

  auto small_offset = good;
  small_offset.put<float>(108, 100.0f);
  CHECK(code_of(small_offset.with_data(std::vector<float>{1, 2})) == Errc::BadHeader);
}

TEST_CASE("writer rejects unsupported types") {
  Volume3D v({1, 1, 1}, {1, 1, 1}, 0.0);
  try {
    write_volume(v, nifti::kInt16);
    FAIL("expected UnsupportedDatatype");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnsupportedDatatype);
  }
}

TEST_CASE("round trips") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(1, 9);
  std::normal_distribution<double> value(0, 10);
  for (int trial = 0; trial < 25; ++trial) {
    Dims3 d{dim(rng), dim(rng), dim(rng)};
    Volume3D v(d, {0.5 * dim(rng), 1.25, 2.0}, 0.0);
    for (auto& x : v.data) x = value(rng);
    auto b64 = write_volume(v, nifti::kFloat64);
    CHECK(read_volume(b64) == v);
    CHECK(write_volume(read_volume(b64), nifti::kFloat64) == b64);
    auto b32 = write_volume(v, nifti::kFloat32);
    auto back = read_volume(b32);
    CHECK(write_volume(back, nifti::kFloat32) == b32);
    for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(back.data[i] == double(float(v.data[i])));
  }
}
