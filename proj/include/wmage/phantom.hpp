#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "wmage/config.hpp"
#include "wmage/experiment.hpp"
#include "wmage/nifti.hpp"
#include "wmage/roi_features.hpp"

namespace wmage {

/// Synthetic cohort whose per-ROI FA falls and MD rises linearly with age on
/// a fixed label geometry. Coefficients are relative to age 20.
struct PhantomSpec {
  int n_participants = 200;
  double age_lo = 20, age_hi = 80;
  int grid = 32;
  int n_rois = 8;
  double fa_base = 0.55;
  double fa_slope = -0.002;
  double md_base = 0.70e-3;
  double md_slope = 2.0e-6;
  double noise_sigma_fa = 0.01;
  double noise_sigma_md = 1.0e-5;
  std::uint64_t seed = 0;
  // Shifts the age range of the trailing `test_fraction` share of the
  // cohort by this many years (kept inside [age_lo, age_hi]).
  double age_shift_test = 0;
  double test_fraction = 0.2;

  void validate() const;
  static PhantomSpec from_config(const KeyValueConfig& cfg);
  KeyValueConfig to_config() const;
};

inline constexpr double kPhantomReferenceAge = 20.0;

/// 0.02 * (r mod 3 - 1) for FA; MD uses the same pattern scaled by 1e-3.
double phantom_fa_offset(std::int32_t roi);
double phantom_md_offset(std::int32_t roi);

/// Concentric shells around the grid center out to radius 0.45 * grid; shell
/// r spans distances [(r-1), r) * rmax / n_rois. Spacing 1 mm.
LabelVolume phantom_labels(const PhantomSpec& spec);

struct PhantomImages {
  Volume3D fa, md;
  LabelVolume labels;
};

PhantomImages generate_phantom_participant(const PhantomSpec& spec, double age, Sex sex, std::mt19937_64& rng);

struct PhantomSubject {
  Participant participant;
  Volume3D fa, md;
};

struct PhantomCohort {
  LabelVolume labels;
  RoiTable rois;
  std::vector<PhantomSubject> subjects;
};

/// Ages from a generator seeded with spec.seed, sexes alternating, cohort
/// normal; each participant's voxel noise comes from its own stream keyed by
/// (seed, index), so generation order does not matter.
PhantomCohort simulate_phantom_cohort(const PhantomSpec& spec, unsigned threads = 1);

/// Writes manifest.csv, labels.nii, rois.csv, phantom.cfg and
/// subjects/<id>_{fa,md}.nii under `out_dir`; returns the manifest rows.
std::vector<Participant> generate_phantom_cohort(const PhantomSpec& spec, const std::filesystem::path& out_dir,
                                                 unsigned threads = 1);

struct FeatureSignal {
  double slope;       // change per year
  double sigma_eff;  // noise std of the observed feature
};

/// Posterior age std (sum_f (slope_f / sigma_f)^2)^(-1/2) times sqrt(2/pi).
double bayes_floor_mae(const std::vector<FeatureSignal>& features);
/// Every ROI assumed to hold `n_voxels_per_roi` voxels.
double bayes_floor_mae(const PhantomSpec& spec, std::int64_t n_voxels_per_roi);
/// Per-ROI voxel counts, in ROI order.
double bayes_floor_mae(const PhantomSpec& spec, const std::vector<std::int64_t>& voxels_per_roi);

}  // namespace wmage
