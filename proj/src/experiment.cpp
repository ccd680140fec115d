#include "wmage/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

#include <json.hpp>

#include "wmage/error.hpp"
#include "wmage/io.hpp"
#include "wmage/nifti.hpp"
#include "wmage/parallel.hpp"
#include "wmage/volume.hpp"

namespace wmage {

using nn::Tensor;
using json = nlohmann::json;

std::string cohort_name(Cohort c) {
  switch (c) {
    case Cohort::Normal: return "normal";
    case Cohort::Impaired: return "impaired";
    case Cohort::Mci: return "mci";
    case Cohort::Dementia: return "dementia";
  }
  return "normal";
}

Cohort parse_cohort(std::string_view text) {
  if (text == "normal") return Cohort::Normal;
  if (text == "impaired") return Cohort::Impaired;
  if (text == "mci") return Cohort::Mci;
  if (text == "dementia") return Cohort::Dementia;
  throw Error(Errc::BadManifest, "unknown cohort '" + std::string(text) + "'");
}

namespace {

std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

void require_csv_safe(const std::string& field) {
  if (field.find_first_of(",\n\r") != std::string::npos)
    throw Error(Errc::BadManifest, "field '" + field + "' contains a comma or newline");
}

}  // namespace

std::vector<Participant> parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  auto lines = nonblank_lines(text);
  if (lines.empty() || trim(lines[0]) != kManifestHeader)
    throw Error(Errc::BadManifest, "manifest must start with '" + std::string(kManifestHeader) + "'");
  std::vector<Participant> out;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    const std::string where = "manifest line " + std::to_string(i + 1);
    if (f.size() != 8) throw Error(Errc::BadManifest, where + ": expected 8 fields, got " + std::to_string(f.size()));
    Participant p;
    p.id = f[0];
    if (p.id.empty()) throw Error(Errc::BadManifest, where + ": empty participant_id");
    if (!seen.insert(p.id).second) throw Error(Errc::DuplicateId, where + ": duplicate participant_id '" + p.id + "'");
    p.site = f[1];
    try {
      p.age = parse_double(f[2], "age");
    } catch (const Error& e) {
      throw Error(Errc::BadManifest, where + ": " + e.what());
    }
    if (!(p.age > 0) || !std::isfinite(p.age)) throw Error(Errc::BadManifest, where + ": age must be positive");
    if (f[3] == "0") p.sex = Sex::Female;
    else if (f[3] == "1") p.sex = Sex::Male;
    else throw Error(Errc::BadManifest, where + ": sex must be 0 or 1, got '" + f[3] + "'");
    try {
      p.cohort = parse_cohort(f[4]);
    } catch (const Error& e) {
      throw Error(Errc::BadManifest, where + ": " + e.what());
    }
    p.fa_path = resolve(f[5], base_dir);
    p.md_path = resolve(f[6], base_dir);
    p.label_path = resolve(f[7], base_dir);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Participant> load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::BadManifest, "manifest not found: " + path.string());
  return parse_manifest(read_text_file(path), path.parent_path());
}

std::string manifest_csv(const std::vector<Participant>& participants) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& p : participants) {
    for (const auto* f : {&p.id, &p.site, &p.fa_path, &p.md_path, &p.label_path}) require_csv_safe(*f);
    out += p.id + ',' + p.site + ',' + format_double(p.age) + ',' + std::to_string(static_cast<int>(p.sex)) + ',' +
           cohort_name(p.cohort) + ',' + p.fa_path + ',' + p.md_path + ',' + p.label_path + '\n';
  }
  return out;
}

std::vector<std::string> FoldSplit::training_ids(std::size_t k) const {
  std::vector<std::string> ids;
  for (std::size_t j = 0; j < folds.size(); ++j)
    if (j != k) ids.insert(ids.end(), folds[j].begin(), folds[j].end());
  return ids;
}

FoldSplit make_splits(const std::vector<Participant>& manifest, int n_folds, double test_fraction_normal) {
  if (n_folds < 2) throw Error(Errc::InvalidSpec, "need at least 2 folds");
  if (!(test_fraction_normal >= 0 && test_fraction_normal < 1))
    throw Error(Errc::InvalidSpec, "test fraction must lie in [0, 1)");
  if (manifest.empty()) throw Error(Errc::TooFewParticipants, "manifest is empty");
  std::set<std::string> seen;
  for (const auto& p : manifest)
    if (!seen.insert(p.id).second) throw Error(Errc::DuplicateId, "duplicate participant_id '" + p.id + "'");

  FoldSplit split;
  std::vector<std::string> normals;
  for (const auto& p : manifest) {
    if (p.cohort == Cohort::Normal) normals.push_back(p.id);
    else split.test_impaired.push_back(p.id);
  }
  const auto n_test = std::size_t(std::floor(test_fraction_normal * double(normals.size()) + 1e-9));
  const std::size_t n_train = normals.size() - n_test;
  if (n_train < std::size_t(n_folds))
    throw Error(Errc::TooFewParticipants, std::to_string(n_train) + " normal participants cannot fill " +
                                              std::to_string(n_folds) + " folds");
  split.test_normal.assign(normals.begin() + std::ptrdiff_t(n_train), normals.end());
  const std::size_t base = n_train / std::size_t(n_folds), extra = n_train % std::size_t(n_folds);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < std::size_t(n_folds); ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    split.folds.emplace_back(normals.begin() + std::ptrdiff_t(pos), normals.begin() + std::ptrdiff_t(pos + len));
    pos += len;
  }
  return split;
}

std::string export_splits_csv(const FoldSplit& split) {
  std::string out = "participant_id,role\n";
  auto emit = [&](const std::vector<std::string>& ids, const std::string& role) {
    for (const auto& id : ids) {
      require_csv_safe(id);
      out += id + ',' + role + '\n';
    }
  };
  for (std::size_t k = 0; k < split.folds.size(); ++k) emit(split.folds[k], "fold" + std::to_string(k + 1));
  emit(split.test_normal, "test_normal");
  emit(split.test_impaired, "test_impaired");
  return out;
}

FoldSplit load_splits_csv(std::string_view text, int n_folds) {
  FoldSplit split;
  split.folds.resize(std::size_t(n_folds));
  std::set<std::string> seen;
  auto lines = nonblank_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (i == 0 && f.size() == 2 && f[0] == "participant_id" && f[1] == "role") continue;
    if (f.size() != 2 || f[0].empty())
      throw Error(Errc::BadManifest, "splits line " + std::to_string(i + 1) + ": expected participant_id,role");
    if (!seen.insert(f[0]).second) throw Error(Errc::DuplicateId, "participant '" + f[0] + "' listed twice");
    const auto& role = f[1];
    if (role == "test_normal") {
      split.test_normal.push_back(f[0]);
      continue;
    }
    if (role == "test_impaired") {
      split.test_impaired.push_back(f[0]);
      continue;
    }
    int k = 0;
    if (role.size() > 4 && role.compare(0, 4, "fold") == 0 && role[4] != '0' &&
        std::all_of(role.begin() + 4, role.end(), [](char c) { return c >= '0' && c <= '9'; }) && role.size() < 8)
      k = std::stoi(role.substr(4));
    if (k < 1 || k > n_folds) throw Error(Errc::UnknownRole, "unknown role '" + role + "'");
    split.folds[std::size_t(k - 1)].push_back(f[0]);
  }
  return split;
}

void Dataset::add(Sample sample) {
  if (sample.input.size() != nn::shape_numel(sample_shape_))
    throw Error(Errc::ShapeMismatch, "sample '" + sample.id + "' has " + std::to_string(sample.input.size()) +
                                         " values, expected " + std::to_string(nn::shape_numel(sample_shape_)));
  if (!index_.emplace(sample.id, samples_.size()).second)
    throw Error(Errc::DuplicateId, "sample '" + sample.id + "' added twice");
  samples_.push_back(std::move(sample));
}

const Sample& Dataset::get(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw Error(Errc::DataMissing, "no data for participant '" + id + "'");
  return samples_[it->second];
}

std::pair<Tensor, Tensor> Dataset::batch(const std::vector<std::string>& ids) const {
  if (ids.empty()) throw Error(Errc::EmptySet, "empty batch");
  nn::Shape shape{ids.size()};
  shape.insert(shape.end(), sample_shape_.begin(), sample_shape_.end());
  std::vector<double> x;
  x.reserve(nn::shape_numel(shape));
  std::vector<double> s;
  for (const auto& id : ids) {
    const auto& sample = get(id);
    x.insert(x.end(), sample.input.begin(), sample.input.end());
    s.push_back(double(static_cast<int>(sample.sex)));
  }
  return {Tensor(std::move(shape), std::move(x)), Tensor({ids.size(), 1}, std::move(s))};
}

Dataset load_dataset(const std::vector<Participant>& participants, const ModelSpec& spec, const RoiTable& rois,
                     double md_scale, unsigned threads) {
  nn::Shape sample_shape;
  if (spec.kind == ModelKind::RoiMlp) {
    const auto n = feature_length(rois.size());
    if (std::size_t(spec.mlp.layer_sizes.front()) != n)
      throw Error(Errc::InvalidSpec, "model input size " + std::to_string(spec.mlp.layer_sizes.front()) +
                                         " does not match the " + std::to_string(n) + "-value feature vector of a " +
                                         std::to_string(rois.size()) + "-ROI table");
    sample_shape = {n};
  } else {
    const auto s = std::size_t(spec.input_size);
    sample_shape = {2, s, s, s};
  }

  // Label volumes are often shared between participants; read each once.
  std::map<std::string, LabelVolume> label_cache;
  auto with_context = [](const Participant& p, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() == Errc::IoFailure) throw Error(Errc::DataMissing, "participant '" + p.id + "': " + e.what());
      throw Error(e.code(), "participant '" + p.id + "': " + e.what());
    }
  };
  for (const auto& p : participants)
    if (!label_cache.count(p.label_path))
      label_cache.emplace(p.label_path, with_context(p, [&] { return load_labels(p.label_path); }));

  std::vector<Sample> samples(participants.size());
  parallel_for(participants.size(), threads, [&](std::size_t i) {
    const auto& p = participants[i];
    with_context(p, [&] {
      const auto fa = load_volume(p.fa_path);
      const auto md = load_volume(p.md_path);
      const auto& labels = label_cache.at(p.label_path);
      Sample& s = samples[i];
      s.id = p.id;
      s.age = p.age;
      s.sex = p.sex;
      s.cohort = p.cohort;
      if (spec.kind == ModelKind::RoiMlp) {
        s.input = build_feature_vector(fa, md, labels, p.sex, rois).values;
      } else {
        auto mc = prepare_network_input(fa, md, labels, spec.input_size, md_scale);
        for (const auto& ch : mc.channels) s.input.insert(s.input.end(), ch.data.begin(), ch.data.end());
      }
      return 0;
    });
  });
  Dataset data(spec.kind, sample_shape);
  for (auto& s : samples) data.add(std::move(s));
  return data;
}

void TrainConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw Error(Errc::BadConfig, "lr must be positive");
  if (batch_size < 1) throw Error(Errc::BadConfig, "batch_size must be >= 1");
  if (max_epochs < 1) throw Error(Errc::BadConfig, "max_epochs must be >= 1");
  if (loss != "l1" && loss != "mse") throw Error(Errc::BadConfig, "loss must be l1 or mse, got '" + loss + "'");
  if (lr_schedule != "cosine" && lr_schedule != "constant")
    throw Error(Errc::BadConfig, "lr_schedule must be cosine or constant, got '" + lr_schedule + "'");
  if (!(md_scale > 0)) throw Error(Errc::BadConfig, "md_scale must be positive");
  if (!(weight_decay >= 0) || !std::isfinite(weight_decay)) throw Error(Errc::BadConfig, "weight_decay must be >= 0");
  if (input_scaling != "residual" && input_scaling != "snr" && input_scaling != "zscore")
    throw Error(Errc::BadConfig, "input_scaling must be snr, residual or zscore, got '" + input_scaling + "'");
  if (input_size < kResNetMinInput)
    throw Error(Errc::BadConfig, "input_size must be >= " + std::to_string(kResNetMinInput));
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  TrainConfig c;
  c.model = cfg.get_or("model", c.model);
  c.loss = cfg.get_or("loss", c.loss);
  c.lr = cfg.get_double("lr", c.lr);
  c.batch_size = int(cfg.get_int("batch_size", c.batch_size));
  c.max_epochs = int(cfg.get_int("max_epochs", c.max_epochs));
  const auto seed = cfg.get_int("seed", 0);
  if (seed < 0) throw Error(Errc::BadConfig, "seed must be non-negative");
  c.seed = std::uint64_t(seed);
  c.input_size = int(cfg.get_int("input_size", c.input_size));
  c.md_scale = cfg.get_double("md_scale", c.md_scale);
  c.lr_schedule = cfg.get_or("lr_schedule", c.lr_schedule);
  c.weight_decay = cfg.get_double("weight_decay", c.weight_decay);
  c.input_scaling = cfg.get_or("input_scaling", c.input_scaling);
  c.validate();
  return c;
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig cfg;
  cfg.set("model", model);
  cfg.set("loss", loss);
  cfg.set("lr", format_double(lr));
  cfg.set("batch_size", std::to_string(batch_size));
  cfg.set("max_epochs", std::to_string(max_epochs));
  cfg.set("seed", std::to_string(seed));
  cfg.set("input_size", std::to_string(input_size));
  cfg.set("md_scale", format_double(md_scale));
  cfg.set("lr_schedule", lr_schedule);
  cfg.set("weight_decay", format_double(weight_decay));
  cfg.set("input_scaling", input_scaling);
  return cfg;
}

ModelSpec TrainConfig::model_spec() const {
  auto spec = ModelSpec::parse(model);
  if (spec.kind == ModelKind::ResNet) spec.input_size = input_size;
  return spec;
}

namespace {

double scheduled_lr(const TrainConfig& c, int epoch) {
  if (c.lr_schedule == "constant") return c.lr;
  return c.lr * 0.5 * (1 + std::cos(std::numbers::pi * double(epoch - 1) / double(c.max_epochs)));
}

void fit_normalization(AgeModel& model, const std::vector<std::string>& ids, const Dataset& data,
                       const std::string& scaling) {
  const bool residual_scaling = scaling != "zscore";
  auto& norm = model.normalization();
  const double n = double(ids.size());
  double sum = 0;
  for (const auto& id : ids) sum += data.get(id).age;
  const double age_mean = sum / n;
  double ss = 0;
  for (const auto& id : ids) ss += std::pow(data.get(id).age - age_mean, 2);
  const double age_var = ss / n;
  norm.target_mean = age_mean;
  norm.target_std = std::sqrt(age_var);
  if (!(norm.target_std > 1e-12)) norm.target_std = 1.0;

  if (model.kind() != ModelKind::RoiMlp) return;
  const std::size_t F = norm.input_mean.size();
  if (data.sample_shape() != nn::Shape{F})
    throw Error(Errc::ShapeMismatch, "model expects " + std::to_string(F) + " features, data has " +
                                         nn::shape_str(data.sample_shape()));
  std::vector<double> m(F, 0.0), var(F, 0.0), cov(F, 0.0);
  for (const auto& id : ids) {
    const auto& x = data.get(id).input;
    for (std::size_t j = 0; j < F; ++j) m[j] += x[j];
  }
  for (auto& mj : m) mj /= n;
  for (const auto& id : ids) {
    const auto& s = data.get(id);
    for (std::size_t j = 0; j < F; ++j) {
      const double d = s.input[j] - m[j];
      var[j] += d * d;
      cov[j] += d * (s.age - age_mean);
    }
  }
  std::vector<double> scale(F);
  for (std::size_t j = 0; j < F; ++j) {
    const double total = std::sqrt(var[j] / n);
    double sd = total;
    if (residual_scaling && age_var > 0) {
      const double slope = cov[j] / n / age_var;
      const double left = std::max(0.0, var[j] / n - slope * slope * age_var);
      sd = std::max(std::sqrt(left), 1e-6 * total);
      if (scaling == "snr") sd = sd * sd / std::max(std::abs(slope) * std::sqrt(age_var), 1e-6 * sd);
    }
    scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  double common = 1.0;
  if (residual_scaling) {
    double ms = 0;
    for (std::size_t j = 0; j < F; ++j) ms += var[j] / n / (scale[j] * scale[j]);
    ms /= double(F);
    if (ms > 0) common = std::sqrt(ms);
  }
  for (std::size_t j = 0; j < F; ++j) {
    norm.input_mean[j] = m[j];
    norm.input_std[j] = scale[j] * common;
  }
}

std::vector<std::vector<std::string>> make_batches(const std::vector<std::string>& order, int batch_size,
                                                   bool needs_pairs) {
  std::vector<std::vector<std::string>> batches;
  for (std::size_t i = 0; i < order.size(); i += std::size_t(batch_size))
    batches.emplace_back(order.begin() + std::ptrdiff_t(i),
                         order.begin() + std::ptrdiff_t(std::min(order.size(), i + std::size_t(batch_size))));
  // Batch statistics are undefined for a single sample.
  if (needs_pairs && batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

TrainResult train_model(const TrainConfig& config, const std::vector<std::string>& train_ids,
                        const std::vector<std::string>& val_ids, const Dataset& data) {
  config.validate();
  if (train_ids.empty()) throw Error(Errc::EmptySet, "no training participants");
  if (val_ids.empty()) throw Error(Errc::EmptySet, "no validation participants");
  {
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    for (const auto& id : val_ids)
      if (train_set.count(id)) throw Error(Errc::InvalidSpec, "participant '" + id + "' is in both training and validation");
  }
  for (const auto* ids : {&train_ids, &val_ids})
    for (const auto& id : *ids) data.get(id);

  const auto spec = config.model_spec();
  if (spec.kind != data.kind()) throw Error(Errc::KindMismatch, "model kind does not match the dataset");
  TrainResult result{AgeModel(spec, config.seed), {}, 0, 0.0, TrainStatus::Completed};
  AgeModel& model = result.model;
  fit_normalization(model, train_ids, data, config.input_scaling);
  const auto& norm = model.normalization();

  const auto params = model.parameters();
  nn::OptimizerState opt(config.lr);
  opt.weight_decay = config.weight_decay;
  std::mt19937_64 shuffle_rng(config.seed + 0x9e3779b97f4a7c15ULL);
  std::vector<std::string> order = train_ids;
  std::optional<std::vector<nn::NamedArray>> best_state;
  double best_mae = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    opt.lr = scheduled_lr(config, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    bool diverged = false;
    for (const auto& ids : make_batches(order, config.batch_size, spec.kind == ModelKind::ResNet)) {
      auto [x, sex] = data.batch(ids);
      std::vector<double> z;
      for (const auto& id : ids) z.push_back((data.get(id).age - norm.target_mean) / norm.target_std);
      Tensor target({ids.size(), 1}, std::move(z));
      nn::zero_grads(params);
      Tensor pred = model.forward(x, sex, nn::Mode::Train);
      Tensor loss = config.loss == "l1" ? nn::l1_loss(pred, target) : nn::mse_loss(pred, target);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        diverged = true;
        break;
      }
      nn::backward(loss);
      nn::adam_step(params, opt);
      loss_sum += lv * double(ids.size());
    }
    double val_mae = diverged ? 0 : evaluate_mae(model, val_ids, data);
    if (diverged || !std::isfinite(val_mae)) {
      result.status = TrainStatus::Diverged;
      break;
    }
    result.history.push_back({epoch, opt.lr, loss_sum / double(order.size()), val_mae});
    if (!best_state || val_mae < best_mae) {
      best_mae = val_mae;
      best_state = model.state();
      result.best_epoch = epoch;
    }
  }
  if (!best_state) throw Error(Errc::DivergedLoss, "training loss became non-finite in the first epoch");
  model.load_state(*best_state);
  result.best_val_mae = best_mae;
  return result;
}

std::vector<double> predict_ids(AgeModel& model, const std::vector<std::string>& ids, const Dataset& data) {
  const std::size_t chunk = model.kind() == ModelKind::ResNet ? 4 : 256;
  std::vector<double> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); i += chunk) {
    std::vector<std::string> part(ids.begin() + std::ptrdiff_t(i),
                                  ids.begin() + std::ptrdiff_t(std::min(ids.size(), i + chunk)));
    auto [x, sex] = data.batch(part);
    auto years = model.predict_years(x, sex);
    out.insert(out.end(), years.begin(), years.end());
  }
  return out;
}

double evaluate_mae(AgeModel& model, const std::vector<std::string>& ids, const Dataset& data) {
  if (ids.empty()) throw Error(Errc::EmptySet, "cannot evaluate on an empty set");
  const auto pred = predict_ids(model, ids, data);
  double s = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) s += std::abs(pred[i] - data.get(ids[i]).age);
  return s / double(ids.size());
}

std::vector<double> brain_age_gap(AgeModel& model, const std::vector<std::string>& ids, const Dataset& data) {
  auto pred = predict_ids(model, ids, data);
  for (std::size_t i = 0; i < ids.size(); ++i) pred[i] -= data.get(ids[i]).age;
  return pred;
}

MeanStd mean_std(const std::vector<double>& values) { return {stats::mean(values), stats::sample_std(values)}; }

CrossValidationRun cross_validate(const TrainConfig& config, const FoldSplit& split, const Dataset& data,
                                  unsigned threads) {
  const std::size_t K = split.folds.size();
  if (K < 2) throw Error(Errc::InvalidSpec, "cross-validation needs at least 2 folds");
  std::vector<std::optional<TrainResult>> runs(K);
  parallel_for(K, threads, [&](std::size_t k) {
    runs[k].emplace(train_model(config, split.training_ids(k), split.folds[k], data));
  });

  CrossValidationRun out;
  MetricsReport& r = out.report;
  r.model = config.model;
  std::vector<double> normal, impaired;
  for (std::size_t k = 0; k < K; ++k) {
    TrainResult& run = *runs[k];
    FoldResult f;
    f.fold = int(k + 1);
    f.val_mae = evaluate_mae(run.model, split.folds[k], data);
    f.best_epoch = run.best_epoch;
    f.status = run.status;
    f.history = run.history;
    if (!split.test_normal.empty()) normal.push_back(*(f.test_normal_mae = evaluate_mae(run.model, split.test_normal, data)));
    if (!split.test_impaired.empty())
      impaired.push_back(*(f.test_impaired_mae = evaluate_mae(run.model, split.test_impaired, data)));
    r.per_fold_mae.push_back(f.val_mae);
    r.folds.push_back(std::move(f));
  }
  const auto cv = mean_std(r.per_fold_mae);
  r.mae_mean = cv.mean;
  r.mae_std = cv.std;
  if (!normal.empty()) r.test_normal_mae = mean_std(normal);
  if (!impaired.empty()) r.test_impaired_mae = mean_std(impaired);
  if (!normal.empty() && !impaired.empty()) {
    try {
      r.t_tests.push_back({"test_impaired_mae vs test_normal_mae", stats::paired_t_test(impaired, normal)});
    } catch (const Error& e) {
      if (e.code() != Errc::ZeroVariance) throw;
    }
  }

  AgeModel& last = runs.back()->model;
  for (const auto* ids : {&split.test_normal, &split.test_impaired}) {
    if (ids->empty()) continue;
    const auto pred = predict_ids(last, *ids, data);
    for (std::size_t i = 0; i < ids->size(); ++i) {
      const auto& s = data.get((*ids)[i]);
      r.gaps.push_back({s.id, s.cohort, s.age, pred[i]});
    }
  }
  for (auto& run : runs) out.models.push_back(std::move(run->model));
  return out;
}

std::vector<TTestEntry> compare_reports(const MetricsReport& a, const MetricsReport& b) {
  std::vector<TTestEntry> out;
  auto try_push = [&](const std::string& what, const std::vector<double>& x, const std::vector<double>& y) {
    try {
      out.push_back({a.model + " vs " + b.model + ": " + what, stats::paired_t_test(x, y)});
    } catch (const Error& e) {
      if (e.code() != Errc::ZeroVariance) throw;
    }
  };
  try_push("val_mae", a.per_fold_mae, b.per_fold_mae);
  auto column = [](const MetricsReport& r) {
    std::vector<double> v;
    for (const auto& f : r.folds)
      if (f.test_normal_mae) v.push_back(*f.test_normal_mae);
    return v;
  };
  const auto ca = column(a), cb = column(b);
  if (!ca.empty() && ca.size() == a.folds.size() && cb.size() == b.folds.size()) try_push("test_normal_mae", ca, cb);
  return out;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt_json(const std::optional<MeanStd>& v) {
  return v ? json{{"mean", v->mean}, {"std", v->std}} : json(nullptr);
}

std::string status_name(TrainStatus s) { return s == TrainStatus::Completed ? "completed" : "diverged"; }

}  // namespace

std::string MetricsReport::to_jsonl() const {
  std::string out;
  for (const auto& f : folds) {
    json j{{"record", "fold"},
           {"fold", f.fold},
           {"val_mae", f.val_mae},
           {"test_normal_mae", opt_json(f.test_normal_mae)},
           {"test_impaired_mae", opt_json(f.test_impaired_mae)},
           {"best_epoch", f.best_epoch},
           {"status", status_name(f.status)}};
    out += j.dump() + '\n';
  }
  json tests = json::array();
  for (const auto& t : t_tests) tests.push_back({{"pair", t.pair}, {"t", t.result.t}, {"p", t.result.p}, {"df", t.result.df}});
  json s{{"record", "summary"},
         {"model", model},
         {"per_fold_mae", per_fold_mae},
         {"mae_mean", mae_mean},
         {"mae_std", mae_std},
         {"std_convention", "sample (n-1)"},
         {"test_normal_mae", opt_json(test_normal_mae)},
         {"test_impaired_mae", opt_json(test_impaired_mae)},
         {"t_tests", tests}};
  out += s.dump() + '\n';
  return out;
}

MetricsReport MetricsReport::from_jsonl(std::string_view text) {
  MetricsReport r;
  bool have_summary = false;
  auto opt_double = [](const json& j) -> std::optional<double> {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
  };
  auto opt_ms = [](const json& j) -> std::optional<MeanStd> {
    if (j.is_null()) return std::nullopt;
    return MeanStd{j.at("mean").get<double>(), j.at("std").get<double>()};
  };
  try {
    for (const auto& line : nonblank_lines(text)) {
      const auto j = json::parse(line);
      const auto kind = j.at("record").get<std::string>();
      if (kind == "fold") {
        FoldResult f;
        f.fold = j.at("fold").get<int>();
        f.val_mae = j.at("val_mae").get<double>();
        f.test_normal_mae = opt_double(j.at("test_normal_mae"));
        f.test_impaired_mae = opt_double(j.at("test_impaired_mae"));
        f.best_epoch = j.at("best_epoch").get<int>();
        f.status = j.at("status").get<std::string>() == "diverged" ? TrainStatus::Diverged : TrainStatus::Completed;
        r.folds.push_back(std::move(f));
      } else if (kind == "summary") {
        have_summary = true;
        r.model = j.at("model").get<std::string>();
        r.per_fold_mae = j.at("per_fold_mae").get<std::vector<double>>();
        r.mae_mean = j.at("mae_mean").get<double>();
        r.mae_std = j.at("mae_std").get<double>();
        r.test_normal_mae = opt_ms(j.at("test_normal_mae"));
        r.test_impaired_mae = opt_ms(j.at("test_impaired_mae"));
        for (const auto& t : j.at("t_tests"))
          r.t_tests.push_back({t.at("pair").get<std::string>(),
                               {t.at("t").get<double>(), t.at("p").get<double>(), t.at("df").get<double>()}});
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::BadManifest, std::string("malformed metrics file: ") + e.what());
  }
  if (!have_summary) throw Error(Errc::BadManifest, "metrics file has no summary record");
  return r;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pm(const MeanStd& m) { return fmt("%.4f", m.mean) + " +/- " + fmt("%.4f", m.std); }

}  // namespace

std::string MetricsReport::to_table() const {
  std::string out = "model: " + model + "\n";
  out += "fold  val_mae   test_normal_mae  test_impaired_mae  best_epoch  status\n";
  for (const auto& f : folds) {
    char line[160];
    std::snprintf(line, sizeof line, "%-5d %-9.4f %-16s %-18s %-11d %s\n", f.fold, f.val_mae,
                  f.test_normal_mae ? fmt("%.4f", *f.test_normal_mae).c_str() : "-",
                  f.test_impaired_mae ? fmt("%.4f", *f.test_impaired_mae).c_str() : "-", f.best_epoch,
                  status_name(f.status).c_str());
    out += line;
  }
  out += "validation MAE (mean +/- sample std): " + pm({mae_mean, mae_std}) + "\n";
  if (test_normal_mae) out += "test normal MAE:   " + pm(*test_normal_mae) + "\n";
  if (test_impaired_mae) out += "test impaired MAE: " + pm(*test_impaired_mae) + "\n";
  for (const auto& t : t_tests)
    out += "paired t-test [" + t.pair + "]: t = " + fmt("%.4f", t.result.t) + ", p = " + fmt("%.4f", t.result.p) +
           ", df = " + fmt("%.0f", t.result.df) + "\n";
  return out;
}

std::string gaps_csv(const std::vector<GapRecord>& gaps) {
  std::string out = "participant_id,cohort,age,predicted,gap\n";
  for (const auto& g : gaps)
    out += g.id + ',' + cohort_name(g.cohort) + ',' + format_double(g.age) + ',' + format_double(g.predicted) + ',' +
           format_double(g.gap()) + '\n';
  return out;
}

std::vector<GapRecord> parse_gaps_csv(std::string_view text) {
  auto lines = nonblank_lines(text);
  if (lines.empty() || split_csv_line(lines[0]).at(0) != "participant_id")
    throw Error(Errc::BadManifest, "gaps file must start with a participant_id header");
  std::vector<GapRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 5) throw Error(Errc::BadManifest, "gaps line " + std::to_string(i + 1) + ": expected 5 fields");
    out.push_back({f[0], parse_cohort(f[1]), parse_double(f[2], "age"), parse_double(f[3], "predicted")});
  }
  return out;
}

std::map<Cohort, std::vector<stats::DensityPoint>> kde_by_cohort(const std::vector<GapRecord>& gaps, int grid_points) {
  std::map<Cohort, std::vector<double>> groups;
  for (const auto& g : gaps) groups[g.cohort].push_back(g.gap());
  std::map<Cohort, std::vector<stats::DensityPoint>> out;
  for (const auto& [c, v] : groups) out[c] = stats::kde(v, grid_points);
  return out;
}

std::string kde_csv(const std::vector<GapRecord>& gaps, int grid_points) {
  std::string out = "cohort,x,density\n";
  for (const auto& [c, curve] : kde_by_cohort(gaps, grid_points))
    for (const auto& p : curve) out += cohort_name(c) + ',' + format_double(p.x) + ',' + format_double(p.density) + '\n';
  return out;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,lr,train_loss,val_mae\n";
  for (const auto& e : history)
    out += std::to_string(e.epoch) + ',' + format_double(e.lr) + ',' + format_double(e.train_loss) + ',' +
           format_double(e.val_mae) + '\n';
  return out;
}

}  // namespace wmage
