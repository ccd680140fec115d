#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wmage/config.hpp"
#include "wmage/model_zoo.hpp"
#include "wmage/roi_features.hpp"
#include "wmage/stats.hpp"

namespace wmage {

enum class Cohort { Normal, Impaired, Mci, Dementia };

std::string cohort_name(Cohort c);
Cohort parse_cohort(std::string_view text);

struct Participant {
  std::string id;
  std::string site;
  double age = 0;
  Sex sex = Sex::Female;
  Cohort cohort = Cohort::Normal;
  std::string fa_path, md_path, label_path;

  friend bool operator==(const Participant&, const Participant&) = default;
};

inline constexpr std::string_view kManifestHeader = "participant_id,site,age,sex,cohort,fa_path,md_path,label_path";

/// Relative image paths are resolved against `base_dir`.
std::vector<Participant> parse_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
std::vector<Participant> load_manifest(const std::filesystem::path& path);
std::string manifest_csv(const std::vector<Participant>& participants);

inline constexpr int kDefaultFolds = 5;

struct FoldSplit {
  std::vector<std::vector<std::string>> folds;
  std::vector<std::string> test_normal;
  std::vector<std::string> test_impaired;

  /// Every fold except `k`, concatenated in fold order.
  std::vector<std::string> training_ids(std::size_t k) const;
  friend bool operator==(const FoldSplit&, const FoldSplit&) = default;
};

/// Non-normal participants go to test_impaired; the trailing
/// floor(test_fraction * n_normal) normals (manifest order) go to test_normal;
/// the rest are cut into contiguous folds, earlier folds taking the remainder.
FoldSplit make_splits(const std::vector<Participant>& manifest, int n_folds = kDefaultFolds,
                      double test_fraction_normal = 0.0);

/// `participant_id,role` with role in fold1..foldN, test_normal, test_impaired.
std::string export_splits_csv(const FoldSplit& split);
FoldSplit load_splits_csv(std::string_view text, int n_folds = kDefaultFolds);

/// One participant's network input: the feature vector (ROI models) or the
/// channel-major flattened volume (volumetric models).
struct Sample {
  std::string id;
  double age = 0;
  Sex sex = Sex::Female;
  Cohort cohort = Cohort::Normal;
  std::vector<double> input;
};

class Dataset {
 public:
  Dataset(ModelKind kind, nn::Shape sample_shape) : kind_(kind), sample_shape_(std::move(sample_shape)) {}

  void add(Sample sample);
  const Sample& get(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t size() const { return samples_.size(); }
  const std::vector<Sample>& samples() const { return samples_; }

  ModelKind kind() const { return kind_; }
  const nn::Shape& sample_shape() const { return sample_shape_; }

  /// Stacks inputs [B, ...] and the sex column [B,1] for `ids`, in order.
  std::pair<nn::Tensor, nn::Tensor> batch(const std::vector<std::string>& ids) const;

 private:
  ModelKind kind_;
  nn::Shape sample_shape_;
  std::vector<Sample> samples_;
  std::map<std::string, std::size_t> index_;
};

/// Reads every participant's images. ROI models get build_feature_vector
/// features over `rois`; volumetric models get prepare_network_input at
/// `input_size`^3.
Dataset load_dataset(const std::vector<Participant>& participants, const ModelSpec& spec, const RoiTable& rois,
                     double md_scale, unsigned threads = 1);

struct TrainConfig {
  std::string model = "roi_mlp:537-128-64-1";
  std::string loss = "l1";  // l1 | mse
  double lr = 1e-3;
  int batch_size = 16;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  int input_size = 128;
  double md_scale = kDefaultMdScale;
  std::string lr_schedule = "cosine";  // cosine | constant
  double weight_decay = 0;
  // ROI inputs. "residual": divide each feature by its spread left after a
  // linear fit on training ages. "snr": additionally weight by the feature's
  // age signal over that spread, so pure-noise features shrink toward 0.
  // Both then apply one common factor bringing the mean square to 1.
  // "zscore": plain standard deviation.
  std::string input_scaling = "snr";

  void validate() const;
  /// Keys mirror the field names; unknown keys are left for the caller.
  static TrainConfig from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
  ModelSpec model_spec() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_mae = 0;
};

enum class TrainStatus { Completed, Diverged };

struct TrainResult {
  AgeModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_mae = 0;
  TrainStatus status = TrainStatus::Completed;
};

/// Adam on standardized targets; keeps the epoch with the lowest validation
/// MAE (earliest on ties). A non-finite loss stops training and returns the
/// best finite checkpoint with status Diverged.
TrainResult train_model(const TrainConfig& config, const std::vector<std::string>& train_ids,
                        const std::vector<std::string>& val_ids, const Dataset& data);

std::vector<double> predict_ids(AgeModel& model, const std::vector<std::string>& ids, const Dataset& data);
double evaluate_mae(AgeModel& model, const std::vector<std::string>& ids, const Dataset& data);
/// predicted - chronological, in id order.
std::vector<double> brain_age_gap(AgeModel& model, const std::vector<std::string>& ids, const Dataset& data);

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation
};
MeanStd mean_std(const std::vector<double>& values);

struct FoldResult {
  int fold = 0;  // 1-based
  double val_mae = 0;
  std::optional<double> test_normal_mae, test_impaired_mae;
  int best_epoch = 0;
  TrainStatus status = TrainStatus::Completed;
  std::vector<EpochRecord> history;
};

struct GapRecord {
  std::string id;
  Cohort cohort;
  double age = 0;
  double predicted = 0;
  double gap() const { return predicted - age; }
};

struct TTestEntry {
  std::string pair;
  stats::TTestResult result;
};

struct MetricsReport {
  std::string model;
  std::vector<FoldResult> folds;
  std::vector<double> per_fold_mae;
  double mae_mean = 0, mae_std = 0;
  std::optional<MeanStd> test_normal_mae, test_impaired_mae;
  std::vector<TTestEntry> t_tests;
  std::vector<GapRecord> gaps;  // test participants under the last fold model

  /// One `fold` record per fold then one `summary` record.
  std::string to_jsonl() const;
  static MetricsReport from_jsonl(std::string_view text);
  std::string to_table() const;
};

struct CrossValidationRun {
  MetricsReport report;
  std::vector<AgeModel> models;  // one per fold
};

/// Fold k validates the model trained on every other fold. Folds run on up
/// to `threads` workers; the result does not depend on the thread count.
CrossValidationRun cross_validate(const TrainConfig& config, const FoldSplit& split, const Dataset& data,
                                  unsigned threads = 1);

/// Paired tests between two reports on per-fold validation MAE and, when
/// both have it, per-fold-model normal test MAE.
std::vector<TTestEntry> compare_reports(const MetricsReport& a, const MetricsReport& b);

std::string gaps_csv(const std::vector<GapRecord>& gaps);
std::vector<GapRecord> parse_gaps_csv(std::string_view text);

/// `cohort,x,density` for each cohort present in `gaps`, in cohort order.
std::string kde_csv(const std::vector<GapRecord>& gaps, int grid_points);
std::map<Cohort, std::vector<stats::DensityPoint>> kde_by_cohort(const std::vector<GapRecord>& gaps, int grid_points);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace wmage
