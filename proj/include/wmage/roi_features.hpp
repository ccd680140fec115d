#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmage/nifti.hpp"

namespace wmage {

inline constexpr int kDefaultRoiCount = 134;

/// Ordered ROI list. Ids are strictly ascending and positive.
class RoiTable {
 public:
  RoiTable() = default;
  RoiTable(std::vector<std::int32_t> ids, std::vector<std::string> names);

  /// ids 1..count named roi_001, roi_002, ...
  static RoiTable sequential(int count, const std::string& prefix = "roi_");

  /// Parses `id,name` lines; an optional `id,name` header row is skipped.
  static RoiTable parse(std::string_view text);
  static RoiTable load(const std::filesystem::path& path);
  std::string to_text() const;

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::int32_t>& ids() const { return ids_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::int32_t> ids_;
  std::vector<std::string> names_;
};

struct RoiStats {
  double mean = 0;
  double std = 0;  // population (divide by N)
  std::int64_t n_voxels = 0;
  bool empty_warning = false;
};

RoiStats roi_stats(const Volume3D& vol, const LabelVolume& labels, std::int32_t roi_id);

enum class Sex : int { Female = 0, Male = 1 };

/// Per ROI in table order: FA mean, FA std, MD mean, MD std; sex code last.
struct FeatureVector {
  std::vector<double> values;
  std::vector<std::int32_t> empty_rois;  // ROIs that contributed zeros

  std::size_t size() const { return values.size(); }
};

inline std::size_t feature_length(std::size_t roi_count) { return 4 * roi_count + 1; }

FeatureVector build_feature_vector(const Volume3D& fa, const Volume3D& md, const LabelVolume& labels, Sex sex,
                                   const RoiTable& table);

/// `participant_id,<roi>_FA_mean,<roi>_FA_std,<roi>_MD_mean,<roi>_MD_std,...,sex`
std::string feature_csv_header(const RoiTable& table);
std::string feature_csv_row(const std::string& participant_id, const FeatureVector& features);

}  // namespace wmage
