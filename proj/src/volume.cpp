#include "wmage/volume.hpp"

#include <algorithm>
#include <cmath>

#include "wmage/error.hpp"

namespace wmage {
namespace {

struct AxisSample {
  int lo, hi;
  double w;  // weight of hi
};

std::vector<AxisSample> axis_samples(int n_src, int n_tgt) {
  std::vector<AxisSample> out(static_cast<std::size_t>(n_tgt));
  const double ratio = double(n_src) / double(n_tgt);
  for (int t = 0; t < n_tgt; ++t) {
    double s = (t + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, double(n_src - 1));
    int lo = int(std::floor(s));
    int hi = std::min(lo + 1, n_src - 1);
    out[std::size_t(t)] = {lo, hi, s - lo};
  }
  return out;
}

void require_same_dims(const Dims3& a, const Dims3& b, const char* what) {
  if (!(a == b))
    throw Error(Errc::GridMismatch, std::string(what) + ": grids differ (" + std::to_string(a.nx) + "x" +
                                        std::to_string(a.ny) + "x" + std::to_string(a.nz) + " vs " +
                                        std::to_string(b.nx) + "x" + std::to_string(b.ny) + "x" +
                                        std::to_string(b.nz) + ")");
}

}  // namespace

Volume3D resample_trilinear(const Volume3D& vol, Dims3 target) {
  if (target.nx < 1 || target.ny < 1 || target.nz < 1)
    throw Error(Errc::InvalidDims, "resample target dims must all be >= 1");
  const Dims3 src = vol.dims;
  if (src.nx < 1 || src.ny < 1 || src.nz < 1 || vol.data.size() != src.voxels())
    throw Error(Errc::InvalidDims, "resample source volume is malformed");

  const Spacing3 spacing{vol.spacing.sx * src.nx / target.nx, vol.spacing.sy * src.ny / target.ny,
                         vol.spacing.sz * src.nz / target.nz};
  Volume3D out(target, spacing, 0.0);
  if (src == target) {
    out.data = vol.data;
    return out;
  }

  const auto ax = axis_samples(src.nx, target.nx);
  const auto ay = axis_samples(src.ny, target.ny);
  const auto az = axis_samples(src.nz, target.nz);
  for (int z = 0; z < target.nz; ++z) {
    const auto& sz = az[std::size_t(z)];
    for (int y = 0; y < target.ny; ++y) {
      const auto& sy = ay[std::size_t(y)];
      for (int x = 0; x < target.nx; ++x) {
        const auto& sx = ax[std::size_t(x)];
        auto lerp_x = [&](int yy, int zz) {
          return (1 - sx.w) * vol.at(sx.lo, yy, zz) + sx.w * vol.at(sx.hi, yy, zz);
        };
        const double c0 = (1 - sy.w) * lerp_x(sy.lo, sz.lo) + sy.w * lerp_x(sy.hi, sz.lo);
        const double c1 = (1 - sy.w) * lerp_x(sy.lo, sz.hi) + sy.w * lerp_x(sy.hi, sz.hi);
        out.at(x, y, z) = (1 - sz.w) * c0 + sz.w * c1;
      }
    }
  }
  return out;
}

Volume3D mask_from_labels(const LabelVolume& labels) {
  std::vector<double> mask(labels.labels.size());
  std::transform(labels.labels.begin(), labels.labels.end(), mask.begin(),
                 [](std::int32_t l) { return l > 0 ? 1.0 : 0.0; });
  return Volume3D(labels.dims, labels.spacing, std::move(mask));
}

Volume3D apply_mask(const Volume3D& vol, const Volume3D& mask) {
  require_same_dims(vol.dims, mask.dims, "apply_mask");
  Volume3D out = vol;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  return out;
}

MultiChannelVolume stack_channels(const Volume3D& fa, const Volume3D& md, double md_scale) {
  require_same_dims(fa.dims, md.dims, "stack_channels");
  if (!(fa.spacing == md.spacing)) throw Error(Errc::GridMismatch, "stack_channels: voxel spacings differ");
  MultiChannelVolume out;
  out.channels = {fa, md};
  if (md_scale != 1.0)
    for (auto& v : out.channels[1].data) v *= md_scale;
  out.channel_names = {"FA", "MD"};
  return out;
}

MultiChannelVolume prepare_network_input(const Volume3D& fa, const Volume3D& md, const LabelVolume& labels,
                                         int size, double md_scale) {
  const Volume3D mask = mask_from_labels(labels);
  const Dims3 target{size, size, size};
  return stack_channels(resample_trilinear(apply_mask(fa, mask), target),
                        resample_trilinear(apply_mask(md, mask), target), md_scale);
}

}  // namespace wmage
