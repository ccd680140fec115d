#pragma once

#include <string>
#include <vector>

#include "wmage/nifti.hpp"

namespace wmage {

/// Default multiplier applied to MD at stacking time so both channels are O(1)
/// (MD is ~1e-3 mm^2/s in physical units).
inline constexpr double kDefaultMdScale = 1000.0;

/// Co-registered channels sharing one grid, in a fixed order.
struct MultiChannelVolume {
  std::vector<Volume3D> channels;
  std::vector<std::string> channel_names;

  const Dims3& dims() const { return channels.front().dims; }
};

/// Center-based trilinear resampling onto target_dims covering the same field
/// of view. Source coordinate for target index t along an axis is
/// (t + 0.5) * (n_src / n_tgt) - 0.5, clamped to the source edge.
Volume3D resample_trilinear(const Volume3D& vol, Dims3 target_dims);

/// 1 where label > 0, else 0.
Volume3D mask_from_labels(const LabelVolume& labels);

Volume3D apply_mask(const Volume3D& vol, const Volume3D& mask);

/// FA first, MD second; MD values are multiplied by md_scale.
MultiChannelVolume stack_channels(const Volume3D& fa, const Volume3D& md, double md_scale = 1.0);

/// Mask, resample to size^3, and stack: the input path of the volumetric models.
MultiChannelVolume prepare_network_input(const Volume3D& fa, const Volume3D& md, const LabelVolume& labels,
                                         int size, double md_scale);

}  // namespace wmage
