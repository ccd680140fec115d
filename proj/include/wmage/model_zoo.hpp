#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wmage/nn/adam.hpp"
#include "wmage/nn/checkpoint.hpp"
#include "wmage/nn/ops.hpp"
#include "wmage/roi_features.hpp"
#include "wmage/volume.hpp"

namespace wmage {

enum class ModelKind { RoiMlp, ResNet };

struct MlpSpec {
  std::vector<int> layer_sizes;  // input first, 1 last
  void validate() const;
};

struct ResNetSpec {
  int variant = 18;
  int in_channels = 2;
  std::array<int, 4> block_counts{2, 2, 2, 2};
  std::array<int, 4> stage_widths{64, 128, 256, 512};
  int feature_dim = 512;

  /// Basic-block layouts: 10 -> (1,1,1,1), 18 -> (2,2,2,2), 34 -> (3,4,6,3).
  static ResNetSpec for_variant(int variant, int in_channels = 2);
  void validate() const;
};

inline constexpr int kResNetMinInput = 16;
inline constexpr int kHeadHidden = 64;

/// Parsed form of `roi_mlp:537-128-64-1` or `resnet:18,head_hidden=true,input=128`.
struct ModelSpec {
  ModelKind kind = ModelKind::RoiMlp;
  MlpSpec mlp;              // roi_mlp only
  int resnet_variant = 18;  // resnet only
  bool head_hidden = true;
  int input_size = 128;

  static ModelSpec parse(const std::string& text);
  std::string to_string() const;
};

/// Stack of dense layers with rectifiers between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, std::mt19937_64& rng, const std::string& prefix);

  nn::Tensor forward(const nn::Tensor& x) const;
  const MlpSpec& spec() const { return spec_; }
  void collect_parameters(std::vector<nn::Parameter>& out) const;

 private:
  struct Layer {
    nn::Parameter weight, bias;
  };
  MlpSpec spec_;
  std::vector<Layer> layers_;
};

struct ConvLayer {
  nn::Parameter weight;
  int stride = 1, pad = 0;
  nn::Tensor forward(const nn::Tensor& x) const { return nn::conv3d(x, weight.tensor, {}, stride, pad); }
};

struct BatchNormLayer {
  std::string name;
  nn::Parameter gamma, beta;
  nn::BatchNormStats stats;
  nn::Tensor forward(const nn::Tensor& x, nn::Mode mode) {
    return nn::batchnorm3d(x, gamma.tensor, beta.tensor, mode, stats);
  }
};

/// Two 3^3 convolutions with a shortcut; the shortcut is a 1^3 stride-2
/// convolution plus batch norm where the block downsamples.
class BasicBlock {
 public:
  BasicBlock(int in_ch, int out_ch, int stride, std::mt19937_64& rng, const std::string& prefix);
  nn::Tensor forward(const nn::Tensor& x, nn::Mode mode);

  void collect_parameters(std::vector<nn::Parameter>& out) const;
  void collect_batchnorms(std::vector<BatchNormLayer*>& out);
  bool has_projection() const { return projection_.has_value(); }

 private:
  ConvLayer conv1_, conv2_;
  BatchNormLayer bn1_, bn2_;
  std::optional<ConvLayer> projection_;
  std::optional<BatchNormLayer> projection_bn_;
};

/// 7^3 stride-2 stem, 3^3 stride-2 max pool, four stages of basic blocks,
/// global average pool: [B,C,S,S,S] -> [B,512].
class ResNetBackbone {
 public:
  ResNetBackbone(ResNetSpec spec, std::mt19937_64& rng, const std::string& prefix = "backbone");
  nn::Tensor forward(const nn::Tensor& x, nn::Mode mode);

  const ResNetSpec& spec() const { return spec_; }
  std::vector<BasicBlock>& blocks() { return blocks_; }
  void collect_parameters(std::vector<nn::Parameter>& out) const;
  void collect_batchnorms(std::vector<BatchNormLayer*>& out);

 private:
  ResNetSpec spec_;
  ConvLayer stem_;
  BatchNormLayer stem_bn_;
  std::vector<BasicBlock> blocks_;
};

/// Fixed affine maps around the network: inputs are standardized with
/// training-set statistics (ROI path) and the network regresses standardized
/// age, which is mapped back to years.
struct Normalization {
  std::vector<double> input_mean, input_std;
  double target_mean = 0.0, target_std = 1.0;
};

class AgeModel {
 public:
  AgeModel(ModelSpec spec, std::uint64_t seed);
  // Parameters are shared handles, so copies would alias; snapshot with state().
  AgeModel(const AgeModel&) = delete;
  AgeModel& operator=(const AgeModel&) = delete;
  AgeModel(AgeModel&&) = default;
  AgeModel& operator=(AgeModel&&) = default;

  ModelKind kind() const { return spec_.kind; }
  const ModelSpec& spec() const { return spec_; }
  std::optional<int> head_hidden() const;

  /// Network output in standardized age units, shape [B,1].
  /// RoiMlp: input [B,F] raw features (sex included), `sex` ignored.
  /// ResNet: input [B,C,S,S,S], sex [B,1].
  nn::Tensor forward(const nn::Tensor& input, const nn::Tensor& sex, nn::Mode mode);

  /// Eval-mode predictions in years.
  std::vector<double> predict_years(const nn::Tensor& input, const nn::Tensor& sex);

  std::vector<nn::Parameter> parameters() const;
  Normalization& normalization() { return norm_; }
  const Normalization& normalization() const { return norm_; }

  /// Parameters followed by buffers (running statistics, normalization).
  std::vector<nn::NamedArray> state() const;
  void load_state(const std::vector<nn::NamedArray>& arrays);

  ResNetBackbone* backbone() { return backbone_ ? &*backbone_ : nullptr; }
  const Mlp& head() const { return head_; }

 private:
  std::vector<BatchNormLayer*> batchnorms();
  nn::Tensor standardize_inputs(const nn::Tensor& input) const;

  ModelSpec spec_;
  std::optional<ResNetBackbone> backbone_;
  Mlp head_;  // the whole network for RoiMlp, the regression head for ResNet
  Normalization norm_;
};

AgeModel build_mlp(const MlpSpec& spec, std::uint64_t seed = 0);
ResNetBackbone build_resnet_backbone(const ResNetSpec& spec, std::uint64_t seed = 0);
/// 513 -> 64 -> 1 with a hidden layer, 513 -> 1 without.
Mlp build_head(bool with_hidden, std::uint64_t seed = 0);
AgeModel build_model(const ModelSpec& spec, std::uint64_t seed = 0);

std::size_t param_count(const AgeModel& model);
std::size_t param_count(const std::vector<nn::Parameter>& params);

double predict_age(AgeModel& model, const FeatureVector& features);
double predict_age(AgeModel& model, const MultiChannelVolume& input, Sex sex);

nn::Checkpoint to_checkpoint(const AgeModel& model);
AgeModel model_from_checkpoint(const nn::Checkpoint& ckpt);

/// Fan-in scaled normal initializer (variance 2 / fan_in).
nn::Tensor he_normal(nn::Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace wmage
