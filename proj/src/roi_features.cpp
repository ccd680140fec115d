#include "wmage/roi_features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "wmage/config.hpp"
#include "wmage/error.hpp"
#include "wmage/io.hpp"

namespace wmage {

RoiTable::RoiTable(std::vector<std::int32_t> ids, std::vector<std::string> names)
    : ids_(std::move(ids)), names_(std::move(names)) {
  if (ids_.size() != names_.size()) throw Error(Errc::InvalidRoiTable, "ids and names differ in length");
  if (ids_.empty()) throw Error(Errc::InvalidRoiTable, "ROI table is empty");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] <= 0) throw Error(Errc::InvalidRoiTable, "ROI id " + std::to_string(ids_[i]) + " is not positive");
    if (i > 0 && ids_[i] <= ids_[i - 1])
      throw Error(Errc::InvalidRoiTable, "ROI ids must be strictly ascending (at id " + std::to_string(ids_[i]) + ")");
  }
}

RoiTable RoiTable::sequential(int count, const std::string& prefix) {
  std::vector<std::int32_t> ids;
  std::vector<std::string> names;
  for (int i = 1; i <= count; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", i);
    ids.push_back(i);
    names.push_back(prefix + buf);
  }
  return RoiTable(std::move(ids), std::move(names));
}

RoiTable RoiTable::parse(std::string_view text) {
  std::vector<std::int32_t> ids;
  std::vector<std::string> names;
  for (const auto& line : nonblank_lines(text)) {
    auto fields = split_csv_line(line);
    if (fields.size() != 2) throw Error(Errc::InvalidRoiTable, "expected `id,name`: '" + line + "'");
    if (ids.empty() && names.empty() && fields[0] == "id") continue;
    long long id = 0;
    try {
      id = parse_int(fields[0], "ROI id");
    } catch (const Error&) {
      throw Error(Errc::InvalidRoiTable, "bad ROI id '" + fields[0] + "'");
    }
    ids.push_back(std::int32_t(id));
    names.push_back(fields[1]);
  }
  return RoiTable(std::move(ids), std::move(names));
}

RoiTable RoiTable::load(const std::filesystem::path& path) { return parse(read_text_file(path)); }

std::string RoiTable::to_text() const {
  std::string out = "id,name\n";
  for (std::size_t i = 0; i < ids_.size(); ++i) out += std::to_string(ids_[i]) + "," + names_[i] + "\n";
  return out;
}

namespace {

void require_grid(const Volume3D& vol, const LabelVolume& labels) {
  if (!(vol.dims == labels.dims) || vol.data.size() != labels.labels.size())
    throw Error(Errc::GridMismatch, "volume and label grids differ");
}

// Two-pass mean / population std for every table ROI in one sweep per pass.
void accumulate_all(const Volume3D& vol, const LabelVolume& labels, const std::vector<std::int32_t>& ids,
                    std::vector<RoiStats>& out) {
  const std::int32_t max_id = *std::max_element(ids.begin(), ids.end());
  std::vector<std::ptrdiff_t> slot(std::size_t(max_id) + 1, -1);
  for (std::size_t k = 0; k < ids.size(); ++k) slot[std::size_t(ids[k])] = std::ptrdiff_t(k);
  std::vector<double> sum(ids.size(), 0.0), sq(ids.size(), 0.0);
  std::vector<std::int64_t> count(ids.size(), 0);

  auto lookup = [&](std::int32_t label) -> std::ptrdiff_t {
    if (label <= 0 || label > max_id) return -1;
    return slot[std::size_t(label)];
  };

  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    auto k = lookup(labels.labels[i]);
    if (k < 0) continue;
    sum[std::size_t(k)] += vol.data[i];
    ++count[std::size_t(k)];
  }
  std::vector<double> mean(ids.size(), 0.0);
  for (std::size_t k = 0; k < ids.size(); ++k)
    if (count[k] > 0) mean[k] = sum[k] / double(count[k]);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    auto k = lookup(labels.labels[i]);
    if (k < 0) continue;
    const double d = vol.data[i] - mean[std::size_t(k)];
    sq[std::size_t(k)] += d * d;
  }
  out.assign(ids.size(), RoiStats{});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (count[k] == 0) {
      out[k].empty_warning = true;
      continue;
    }
    out[k].mean = mean[k];
    out[k].std = std::sqrt(sq[k] / double(count[k]));
    out[k].n_voxels = count[k];
  }
}

}  // namespace

RoiStats roi_stats(const Volume3D& vol, const LabelVolume& labels, std::int32_t roi_id) {
  require_grid(vol, labels);
  if (roi_id <= 0) throw Error(Errc::InvalidRoiTable, "roi_id must be positive");
  std::vector<RoiStats> out;
  accumulate_all(vol, labels, {roi_id}, out);
  return out.front();
}

FeatureVector build_feature_vector(const Volume3D& fa, const Volume3D& md, const LabelVolume& labels, Sex sex,
                                   const RoiTable& table) {
  require_grid(fa, labels);
  require_grid(md, labels);
  std::vector<RoiStats> fa_stats, md_stats;
  accumulate_all(fa, labels, table.ids(), fa_stats);
  accumulate_all(md, labels, table.ids(), md_stats);

  FeatureVector fv;
  fv.values.reserve(feature_length(table.size()));
  for (std::size_t k = 0; k < table.size(); ++k) {
    fv.values.insert(fv.values.end(), {fa_stats[k].mean, fa_stats[k].std, md_stats[k].mean, md_stats[k].std});
    if (fa_stats[k].empty_warning) fv.empty_rois.push_back(table.ids()[k]);
  }
  fv.values.push_back(double(static_cast<int>(sex)));
  return fv;
}

std::string feature_csv_header(const RoiTable& table) {
  std::string out = "participant_id";
  for (const auto& name : table.names())
    out += "," + name + "_FA_mean," + name + "_FA_std," + name + "_MD_mean," + name + "_MD_std";
  out += ",sex";
  return out;
}

std::string feature_csv_row(const std::string& participant_id, const FeatureVector& features) {
  std::string out = participant_id;
  for (double v : features.values) out += "," + format_double(v);
  return out;
}

}  // namespace wmage
