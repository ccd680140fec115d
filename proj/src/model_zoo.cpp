#include "wmage/model_zoo.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "wmage/config.hpp"
#include "wmage/error.hpp"
#include "wmage/io.hpp"

namespace wmage {

using nn::Mode;
using nn::Parameter;
using nn::Tensor;

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw Error(Errc::InvalidSpec, "an MLP needs at least input and output sizes");
  for (int n : layer_sizes)
    if (n < 1) throw Error(Errc::InvalidSpec, "MLP layer sizes must be positive");
  if (layer_sizes.back() != 1) throw Error(Errc::InvalidSpec, "MLP output size must be 1");
}

ResNetSpec ResNetSpec::for_variant(int variant, int in_channels) {
  ResNetSpec s;
  s.variant = variant;
  s.in_channels = in_channels;
  switch (variant) {
    case 10: s.block_counts = {1, 1, 1, 1}; break;
    case 18: s.block_counts = {2, 2, 2, 2}; break;
    case 34: s.block_counts = {3, 4, 6, 3}; break;
    default: throw Error(Errc::InvalidSpec, "ResNet variant must be 10, 18 or 34, got " + std::to_string(variant));
  }
  return s;
}

void ResNetSpec::validate() const {
  const auto expected = for_variant(variant, in_channels);
  if (block_counts != expected.block_counts)
    throw Error(Errc::InvalidSpec, "block counts do not match ResNet" + std::to_string(variant));
  if (in_channels < 1) throw Error(Errc::InvalidSpec, "in_channels must be positive");
  for (int w : stage_widths)
    if (w < 1) throw Error(Errc::InvalidSpec, "stage widths must be positive");
  if (feature_dim != stage_widths[3]) throw Error(Errc::InvalidSpec, "feature_dim must equal the last stage width");
}

ModelSpec ModelSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(Errc::InvalidSpec, "model spec needs `kind:...`: '" + text + "'");
  const auto kind = std::string(trim(std::string_view(text).substr(0, colon)));
  const auto rest = std::string(trim(std::string_view(text).substr(colon + 1)));
  ModelSpec spec;
  auto as_int = [&](std::string_view v) {
    try {
      return int(parse_int(v, "model spec"));
    } catch (const Error&) {
      throw Error(Errc::InvalidSpec, "bad integer '" + std::string(v) + "' in model spec '" + text + "'");
    }
  };
  if (kind == "roi_mlp") {
    spec.kind = ModelKind::RoiMlp;
    std::string_view sv = rest;
    while (!sv.empty()) {
      auto dash = sv.find('-');
      spec.mlp.layer_sizes.push_back(as_int(sv.substr(0, dash)));
      if (dash == std::string_view::npos) break;
      sv = sv.substr(dash + 1);
    }
    spec.mlp.validate();
    spec.input_size = spec.mlp.layer_sizes.front();
  } else if (kind == "resnet") {
    spec.kind = ModelKind::ResNet;
    auto fields = split_csv_line(rest);
    if (fields.empty() || fields[0].empty()) throw Error(Errc::InvalidSpec, "resnet spec needs a variant");
    spec.resnet_variant = as_int(fields[0]);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto eq = fields[i].find('=');
      if (eq == std::string::npos) throw Error(Errc::InvalidSpec, "expected key=value in '" + fields[i] + "'");
      auto key = std::string(trim(std::string_view(fields[i]).substr(0, eq)));
      auto val = std::string(trim(std::string_view(fields[i]).substr(eq + 1)));
      if (key == "head_hidden") {
        if (val != "true" && val != "false") throw Error(Errc::InvalidSpec, "head_hidden must be true or false");
        spec.head_hidden = val == "true";
      } else if (key == "input") {
        spec.input_size = as_int(val);
      } else {
        throw Error(Errc::InvalidSpec, "unknown resnet option '" + key + "'");
      }
    }
    ResNetSpec::for_variant(spec.resnet_variant);
    if (spec.input_size < kResNetMinInput)
      throw Error(Errc::InvalidSpec, "resnet input size must be >= " + std::to_string(kResNetMinInput));
  } else {
    throw Error(Errc::InvalidSpec, "unknown model kind '" + kind + "'");
  }
  return spec;
}

std::string ModelSpec::to_string() const {
  if (kind == ModelKind::RoiMlp) {
    std::string s = "roi_mlp:";
    for (std::size_t i = 0; i < mlp.layer_sizes.size(); ++i)
      s += (i ? "-" : "") + std::to_string(mlp.layer_sizes[i]);
    return s;
  }
  return "resnet:" + std::to_string(resnet_variant) + ",head_hidden=" + (head_hidden ? "true" : "false") +
         ",input=" + std::to_string(input_size);
}

Tensor he_normal(nn::Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
  std::vector<double> values(nn::shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

namespace {

ConvLayer make_conv(int in_ch, int out_ch, int kernel, int stride, int pad, std::mt19937_64& rng,
                    const std::string& name) {
  const auto k = std::size_t(kernel);
  ConvLayer conv;
  conv.weight = {name + ".weight",
                 he_normal({std::size_t(out_ch), std::size_t(in_ch), k, k, k}, std::size_t(in_ch) * k * k * k, rng)};
  conv.stride = stride;
  conv.pad = pad;
  return conv;
}

BatchNormLayer make_bn(int channels, const std::string& name) {
  BatchNormLayer bn;
  bn.name = name;
  bn.gamma = {name + ".gamma", Tensor::full({std::size_t(channels)}, 1.0, true)};
  bn.beta = {name + ".beta", Tensor::zeros({std::size_t(channels)}, true)};
  bn.stats = nn::BatchNormStats(std::size_t(channels));
  return bn;
}

}  // namespace

Mlp::Mlp(MlpSpec spec, std::mt19937_64& rng, const std::string& prefix) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t i = 0; i + 1 < spec_.layer_sizes.size(); ++i) {
    const auto in = std::size_t(spec_.layer_sizes[i]), out = std::size_t(spec_.layer_sizes[i + 1]);
    const std::string name = prefix + "." + std::to_string(i);
    layers_.push_back({{name + ".weight", he_normal({in, out}, in, rng)},
                       {name + ".bias", Tensor::zeros({out}, true)}});
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = nn::dense(h, layers_[i].weight.tensor, layers_[i].bias.tensor);
    if (i + 1 < layers_.size()) h = nn::relu(h);
  }
  return h;
}

void Mlp::collect_parameters(std::vector<Parameter>& out) const {
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
}

BasicBlock::BasicBlock(int in_ch, int out_ch, int stride, std::mt19937_64& rng, const std::string& prefix)
    : conv1_(make_conv(in_ch, out_ch, 3, stride, 1, rng, prefix + ".conv1")),
      conv2_(make_conv(out_ch, out_ch, 3, 1, 1, rng, prefix + ".conv2")),
      bn1_(make_bn(out_ch, prefix + ".bn1")),
      bn2_(make_bn(out_ch, prefix + ".bn2")) {
  if (stride != 1 || in_ch != out_ch) {
    projection_ = make_conv(in_ch, out_ch, 1, stride, 0, rng, prefix + ".downsample.conv");
    projection_bn_ = make_bn(out_ch, prefix + ".downsample.bn");
  }
}

Tensor BasicBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = nn::relu(bn1_.forward(conv1_.forward(x), mode));
  h = bn2_.forward(conv2_.forward(h), mode);
  Tensor shortcut = projection_ ? projection_bn_->forward(projection_->forward(x), mode) : x;
  return nn::relu(nn::add(h, shortcut));
}

void BasicBlock::collect_parameters(std::vector<Parameter>& out) const {
  out.push_back(conv1_.weight);
  out.push_back(bn1_.gamma);
  out.push_back(bn1_.beta);
  out.push_back(conv2_.weight);
  out.push_back(bn2_.gamma);
  out.push_back(bn2_.beta);
  if (projection_) {
    out.push_back(projection_->weight);
    out.push_back(projection_bn_->gamma);
    out.push_back(projection_bn_->beta);
  }
}

void BasicBlock::collect_batchnorms(std::vector<BatchNormLayer*>& out) {
  out.push_back(&bn1_);
  out.push_back(&bn2_);
  if (projection_bn_) out.push_back(&*projection_bn_);
}

ResNetBackbone::ResNetBackbone(ResNetSpec spec, std::mt19937_64& rng, const std::string& prefix)
    : spec_(std::move(spec)) {
  spec_.validate();
  stem_ = make_conv(spec_.in_channels, spec_.stage_widths[0], 7, 2, 3, rng, prefix + ".stem.conv");
  stem_bn_ = make_bn(spec_.stage_widths[0], prefix + ".stem.bn");
  int in_ch = spec_.stage_widths[0];
  for (int stage = 0; stage < 4; ++stage) {
    for (int b = 0; b < spec_.block_counts[std::size_t(stage)]; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      const int out_ch = spec_.stage_widths[std::size_t(stage)];
      blocks_.emplace_back(in_ch, out_ch, stride, rng,
                           prefix + ".layer" + std::to_string(stage + 1) + "." + std::to_string(b));
      in_ch = out_ch;
    }
  }
}

Tensor ResNetBackbone::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 5 || x.dim(1) != std::size_t(spec_.in_channels))
    throw Error(Errc::ShapeMismatch, "backbone expects [B," + std::to_string(spec_.in_channels) + ",D,H,W], got " +
                                         nn::shape_str(x.shape()));
  for (std::size_t i = 2; i < 5; ++i)
    if (x.dim(i) < std::size_t(kResNetMinInput))
      throw Error(Errc::EmptyOutput, "backbone input " + nn::shape_str(x.shape()) + " is smaller than " +
                                         std::to_string(kResNetMinInput) + "^3");
  Tensor h = nn::relu(stem_bn_.forward(stem_.forward(x), mode));
  h = nn::max_pool3d(h, 3, 2, 1);
  for (auto& block : blocks_) h = block.forward(h, mode);
  return nn::global_avg_pool(h);
}

void ResNetBackbone::collect_parameters(std::vector<Parameter>& out) const {
  out.push_back(stem_.weight);
  out.push_back(stem_bn_.gamma);
  out.push_back(stem_bn_.beta);
  for (const auto& b : blocks_) b.collect_parameters(out);
}

void ResNetBackbone::collect_batchnorms(std::vector<BatchNormLayer*>& out) {
  out.push_back(&stem_bn_);
  for (auto& b : blocks_) b.collect_batchnorms(out);
}

AgeModel::AgeModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  std::mt19937_64 rng(seed);
  if (spec_.kind == ModelKind::RoiMlp) {
    head_ = Mlp(spec_.mlp, rng, "mlp");
    const auto n = std::size_t(spec_.mlp.layer_sizes.front());
    norm_.input_mean.assign(n, 0.0);
    norm_.input_std.assign(n, 1.0);
  } else {
    backbone_.emplace(ResNetSpec::for_variant(spec_.resnet_variant), rng);
    const int in = backbone_->spec().feature_dim + 1;
    head_ = Mlp(MlpSpec{spec_.head_hidden ? std::vector<int>{in, kHeadHidden, 1} : std::vector<int>{in, 1}}, rng,
                "head");
  }
}

std::optional<int> AgeModel::head_hidden() const {
  if (spec_.kind == ModelKind::ResNet && spec_.head_hidden) return kHeadHidden;
  return std::nullopt;
}

Tensor AgeModel::standardize_inputs(const Tensor& input) const {
  const std::size_t F = norm_.input_mean.size();
  if (input.rank() != 2 || input.dim(1) != F)
    throw Error(Errc::ShapeMismatch, "ROI model expects [B," + std::to_string(F) + "] features, got " +
                                         nn::shape_str(input.shape()));
  std::vector<double> z(input.data().begin(), input.data().end());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (z[i] - norm_.input_mean[i % F]) / norm_.input_std[i % F];
  return Tensor(input.shape(), std::move(z));
}

Tensor AgeModel::forward(const Tensor& input, const Tensor& sex, Mode mode) {
  if (spec_.kind == ModelKind::RoiMlp) return head_.forward(standardize_inputs(input));
  if (!sex.defined() || sex.rank() != 2 || sex.dim(1) != 1 || sex.dim(0) != input.dim(0))
    throw Error(Errc::ShapeMismatch, "ResNet model needs a [B,1] sex tensor");
  return head_.forward(nn::concat_columns(backbone_->forward(input, mode), sex));
}

std::vector<double> AgeModel::predict_years(const Tensor& input, const Tensor& sex) {
  nn::NoGradGuard no_grad;
  Tensor z = forward(input, sex, Mode::Eval);
  std::vector<double> years(z.numel());
  for (std::size_t i = 0; i < years.size(); ++i) years[i] = norm_.target_mean + norm_.target_std * z.data()[i];
  return years;
}

std::vector<Parameter> AgeModel::parameters() const {
  std::vector<Parameter> out;
  if (backbone_) backbone_->collect_parameters(out);
  head_.collect_parameters(out);
  return out;
}

std::vector<BatchNormLayer*> AgeModel::batchnorms() {
  std::vector<BatchNormLayer*> out;
  if (backbone_) backbone_->collect_batchnorms(out);
  return out;
}

std::vector<nn::NamedArray> AgeModel::state() const {
  std::vector<nn::NamedArray> out;
  for (const auto& p : parameters())
    out.push_back({"param/" + p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  for (auto* bn : const_cast<AgeModel*>(this)->batchnorms()) {
    const auto C = bn->stats.running_mean.size();
    out.push_back({"buffer/" + bn->name + ".running_mean", {C}, bn->stats.running_mean});
    out.push_back({"buffer/" + bn->name + ".running_var", {C}, bn->stats.running_var});
  }
  if (!norm_.input_mean.empty()) {
    out.push_back({"buffer/norm.input_mean", {norm_.input_mean.size()}, norm_.input_mean});
    out.push_back({"buffer/norm.input_std", {norm_.input_std.size()}, norm_.input_std});
  }
  out.push_back({"buffer/norm.target", {2}, {norm_.target_mean, norm_.target_std}});
  return out;
}

void AgeModel::load_state(const std::vector<nn::NamedArray>& arrays) {
  std::map<std::string, const nn::NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  auto fetch = [&](const std::string& name, std::size_t n) -> const std::vector<double>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(Errc::BadCheckpoint, "missing '" + name + "'");
    if (it->second->values.size() != n) throw Error(Errc::BadCheckpoint, "'" + name + "' has the wrong size");
    return it->second->values;
  };
  for (auto& p : parameters()) {
    const auto& v = fetch("param/" + p.name, p.tensor.numel());
    std::copy(v.begin(), v.end(), p.tensor.data().begin());
  }
  for (auto* bn : batchnorms()) {
    const auto C = bn->stats.running_mean.size();
    bn->stats.running_mean = fetch("buffer/" + bn->name + ".running_mean", C);
    bn->stats.running_var = fetch("buffer/" + bn->name + ".running_var", C);
  }
  if (!norm_.input_mean.empty()) {
    norm_.input_mean = fetch("buffer/norm.input_mean", norm_.input_mean.size());
    norm_.input_std = fetch("buffer/norm.input_std", norm_.input_std.size());
  }
  const auto& t = fetch("buffer/norm.target", 2);
  norm_.target_mean = t[0];
  norm_.target_std = t[1];
}

AgeModel build_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelSpec ms;
  ms.kind = ModelKind::RoiMlp;
  ms.mlp = spec;
  ms.input_size = spec.layer_sizes.front();
  return AgeModel(ms, seed);
}

ResNetBackbone build_resnet_backbone(const ResNetSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ResNetBackbone(spec, rng);
}

Mlp build_head(bool with_hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int in = ResNetSpec{}.feature_dim + 1;
  return Mlp(MlpSpec{with_hidden ? std::vector<int>{in, kHeadHidden, 1} : std::vector<int>{in, 1}}, rng, "head");
}

AgeModel build_model(const ModelSpec& spec, std::uint64_t seed) { return AgeModel(spec, seed); }

std::size_t param_count(const std::vector<Parameter>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

std::size_t param_count(const AgeModel& model) { return param_count(model.parameters()); }

double predict_age(AgeModel& model, const FeatureVector& features) {
  if (model.kind() != ModelKind::RoiMlp) throw Error(Errc::KindMismatch, "feature vector given to a ResNet model");
  Tensor x({1, features.values.size()}, features.values);
  return model.predict_years(x, {}).front();
}

double predict_age(AgeModel& model, const MultiChannelVolume& input, Sex sex) {
  if (model.kind() != ModelKind::ResNet) throw Error(Errc::KindMismatch, "volume given to an ROI-feature model");
  const auto& d = input.dims();
  std::vector<double> data;
  data.reserve(input.channels.size() * d.voxels());
  for (const auto& ch : input.channels) data.insert(data.end(), ch.data.begin(), ch.data.end());
  Tensor x({1, input.channels.size(), std::size_t(d.nz), std::size_t(d.ny), std::size_t(d.nx)}, std::move(data));
  Tensor s({1, 1}, {double(static_cast<int>(sex))});
  return model.predict_years(x, s).front();
}

nn::Checkpoint to_checkpoint(const AgeModel& model) {
  nn::Checkpoint ckpt;
  ckpt.metadata["model"] = model.spec().to_string();
  ckpt.arrays = model.state();
  return ckpt;
}

AgeModel model_from_checkpoint(const nn::Checkpoint& ckpt) {
  auto it = ckpt.metadata.find("model");
  if (it == ckpt.metadata.end()) throw Error(Errc::BadCheckpoint, "checkpoint lacks a model spec");
  AgeModel model(ModelSpec::parse(it->second), 0);
  model.load_state(ckpt.arrays);
  return model;
}

}  // namespace wmage
