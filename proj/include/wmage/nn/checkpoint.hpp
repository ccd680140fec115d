#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wmage/io.hpp"
#include "wmage/nn/adam.hpp"
#include "wmage/nn/tensor.hpp"

namespace wmage::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Binary layout (all integers little-endian):
///   "WMAGECKP" | u32 version | u32 meta_len | meta (`key = value` lines)
///   | u32 count | count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 values }
struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::map<std::string, std::string> metadata;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

Bytes encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Stores moments as `adam/m/<param>` and `adam/v/<param>` plus scalar
/// hyperparameters in the metadata.
void append_optimizer_state(Checkpoint& ckpt, std::span<const Parameter> params, const OptimizerState& state);
OptimizerState read_optimizer_state(const Checkpoint& ckpt, std::span<const Parameter> params);

}  // namespace wmage::nn
