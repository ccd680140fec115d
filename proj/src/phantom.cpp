#include "wmage/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "wmage/error.hpp"
#include "wmage/io.hpp"
#include "wmage/parallel.hpp"

namespace wmage {

void PhantomSpec::validate() const {
  auto bad = [](const std::string& m) { throw Error(Errc::InvalidPhantomSpec, m); };
  if (n_participants < 1) bad("n_participants must be >= 1");
  if (!(age_lo > 0 && age_lo < age_hi)) bad("age range must satisfy 0 < lo < hi");
  if (grid < 4) bad("grid must be >= 4");
  if (n_rois < 1) bad("n_rois must be >= 1");
  if (!(fa_slope < 0)) bad("fa_slope must be negative");
  if (!(md_slope > 0)) bad("md_slope must be positive");
  if (!(noise_sigma_fa >= 0 && noise_sigma_md >= 0)) bad("noise sigmas must be >= 0");
  if (!(std::abs(age_shift_test) < age_hi - age_lo)) bad("age_shift_test must be smaller than the age range");
  if (!(test_fraction >= 0 && test_fraction < 1)) bad("test_fraction must lie in [0, 1)");
  const double rmax = 0.45 * grid;
  if (n_rois > int(std::floor(rmax))) bad("too many ROIs for the grid: shells would be under one voxel thick");
}

PhantomSpec PhantomSpec::from_config(const KeyValueConfig& cfg) {
  PhantomSpec s;
  s.n_participants = int(cfg.get_int("n_participants", s.n_participants));
  s.age_lo = cfg.get_double("age_lo", s.age_lo);
  s.age_hi = cfg.get_double("age_hi", s.age_hi);
  s.grid = int(cfg.get_int("grid", s.grid));
  s.n_rois = int(cfg.get_int("n_rois", s.n_rois));
  s.fa_base = cfg.get_double("fa_base", s.fa_base);
  s.fa_slope = cfg.get_double("fa_slope", s.fa_slope);
  s.md_base = cfg.get_double("md_base", s.md_base);
  s.md_slope = cfg.get_double("md_slope", s.md_slope);
  s.noise_sigma_fa = cfg.get_double("noise_sigma_fa", s.noise_sigma_fa);
  s.noise_sigma_md = cfg.get_double("noise_sigma_md", s.noise_sigma_md);
  const auto seed = cfg.get_int("seed", 0);
  if (seed < 0) throw Error(Errc::BadConfig, "seed must be non-negative");
  s.seed = std::uint64_t(seed);
  s.age_shift_test = cfg.get_double("age_shift_test", s.age_shift_test);
  s.test_fraction = cfg.get_double("test_fraction", s.test_fraction);
  s.validate();
  return s;
}

KeyValueConfig PhantomSpec::to_config() const {
  KeyValueConfig c;
  c.set("n_participants", std::to_string(n_participants));
  c.set("age_lo", format_double(age_lo));
  c.set("age_hi", format_double(age_hi));
  c.set("grid", std::to_string(grid));
  c.set("n_rois", std::to_string(n_rois));
  c.set("fa_base", format_double(fa_base));
  c.set("fa_slope", format_double(fa_slope));
  c.set("md_base", format_double(md_base));
  c.set("md_slope", format_double(md_slope));
  c.set("noise_sigma_fa", format_double(noise_sigma_fa));
  c.set("noise_sigma_md", format_double(noise_sigma_md));
  c.set("seed", std::to_string(seed));
  c.set("age_shift_test", format_double(age_shift_test));
  c.set("test_fraction", format_double(test_fraction));
  return c;
}

double phantom_fa_offset(std::int32_t roi) { return 0.02 * double(roi % 3 - 1); }
double phantom_md_offset(std::int32_t roi) { return 0.02e-3 * double(roi % 3 - 1); }

LabelVolume phantom_labels(const PhantomSpec& spec) {
  const int n = spec.grid;
  LabelVolume lv;
  lv.dims = {n, n, n};
  lv.labels.assign(lv.dims.voxels(), 0);
  const double c = 0.5 * (n - 1), rmax = 0.45 * n;
  std::size_t i = 0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x, ++i) {
        const double d = std::sqrt((x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c));
        if (d < rmax) lv.labels[i] = std::int32_t(std::floor(spec.n_rois * d / rmax)) + 1;
      }
  return lv;
}

PhantomImages generate_phantom_participant(const PhantomSpec& spec, double age, Sex, std::mt19937_64& rng) {
  spec.validate();
  if (!(age >= spec.age_lo && age <= spec.age_hi))
    throw Error(Errc::AgeOutOfRange, "age " + format_double(age) + " outside [" + format_double(spec.age_lo) + ", " +
                                         format_double(spec.age_hi) + "]");
  PhantomImages out;
  out.labels = phantom_labels(spec);
  const Dims3 d = out.labels.dims;
  out.fa = Volume3D(d, {});
  out.md = Volume3D(d, {});
  const double years = age - kPhantomReferenceAge;
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < d.voxels(); ++i) {
    const auto r = out.labels.labels[i];
    if (r == 0) continue;
    const double fa = spec.fa_base + phantom_fa_offset(r) + spec.fa_slope * years + spec.noise_sigma_fa * unit(rng);
    const double md = spec.md_base + phantom_md_offset(r) + spec.md_slope * years + spec.noise_sigma_md * unit(rng);
    out.fa.data[i] = std::clamp(fa, 0.0, 1.0);
    out.md.data[i] = std::max(md, 0.0);
  }
  return out;
}

namespace {

std::string phantom_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "phantom-%04zu", i + 1);
  return buf;
}

std::vector<double> phantom_ages(const PhantomSpec& spec) {
  const auto n = std::size_t(spec.n_participants);
  const auto n_test = std::size_t(std::floor(spec.test_fraction * double(n) + 1e-9));
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> base(spec.age_lo, spec.age_hi);
  std::uniform_real_distribution<double> shifted(std::max(spec.age_lo, spec.age_lo + spec.age_shift_test),
                                                 std::min(spec.age_hi, spec.age_hi + spec.age_shift_test));
  std::vector<double> ages(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool in_test = spec.age_shift_test != 0 && i >= n - n_test;
    ages[i] = in_test ? shifted(rng) : base(rng);
  }
  return ages;
}

}  // namespace

PhantomCohort simulate_phantom_cohort(const PhantomSpec& spec, unsigned threads) {
  spec.validate();
  PhantomCohort cohort;
  cohort.labels = phantom_labels(spec);
  cohort.rois = RoiTable::sequential(spec.n_rois);
  const auto ages = phantom_ages(spec);
  cohort.subjects.resize(ages.size());
  parallel_for(ages.size(), threads, [&](std::size_t i) {
    std::seed_seq seq{std::uint64_t(spec.seed), std::uint64_t(i), std::uint64_t(0x7068616e746f6dULL)};
    std::mt19937_64 rng(seq);
    auto& s = cohort.subjects[i];
    s.participant.id = phantom_id(i);
    s.participant.site = "phantom";
    s.participant.age = ages[i];
    s.participant.sex = i % 2 == 0 ? Sex::Female : Sex::Male;
    s.participant.cohort = Cohort::Normal;
    auto img = generate_phantom_participant(spec, ages[i], s.participant.sex, rng);
    s.fa = std::move(img.fa);
    s.md = std::move(img.md);
  });
  return cohort;
}

std::vector<Participant> generate_phantom_cohort(const PhantomSpec& spec, const std::filesystem::path& out_dir,
                                                 unsigned threads) {
  auto cohort = simulate_phantom_cohort(spec, threads);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "subjects", ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + (out_dir / "subjects").string() + ": " + ec.message());
  std::vector<Participant> manifest;
  for (auto& s : cohort.subjects) {
    auto& p = s.participant;
    p.fa_path = "subjects/" + p.id + "_fa.nii";
    p.md_path = "subjects/" + p.id + "_md.nii";
    p.label_path = "labels.nii";
    manifest.push_back(p);
  }
  parallel_for(cohort.subjects.size(), threads, [&](std::size_t i) {
    const auto& s = cohort.subjects[i];
    atomic_write(out_dir / s.participant.fa_path, write_volume(s.fa));
    atomic_write(out_dir / s.participant.md_path, write_volume(s.md));
  });
  atomic_write(out_dir / "labels.nii", write_labels(cohort.labels));
  atomic_write(out_dir / "rois.csv", cohort.rois.to_text());
  atomic_write(out_dir / "phantom.cfg", spec.to_config().to_text());
  atomic_write(out_dir / "manifest.csv", manifest_csv(manifest));
  return manifest;
}

double bayes_floor_mae(const std::vector<FeatureSignal>& features) {
  double info = 0;
  for (const auto& f : features) {
    if (f.slope == 0) continue;
    if (!(f.sigma_eff > 0)) throw Error(Errc::InvalidPhantomSpec, "informative feature needs noise > 0");
    info += (f.slope / f.sigma_eff) * (f.slope / f.sigma_eff);
  }
  if (info == 0) throw Error(Errc::NoSignal, "no feature carries age signal");
  return std::sqrt(2 / std::numbers::pi) / std::sqrt(info);
}

double bayes_floor_mae(const PhantomSpec& spec, const std::vector<std::int64_t>& voxels_per_roi) {
  if (spec.fa_slope == 0 && spec.md_slope == 0) throw Error(Errc::NoSignal, "both slopes are zero");
  std::vector<FeatureSignal> f;
  for (auto n : voxels_per_roi) {
    if (n < 1) continue;
    const double root = std::sqrt(double(n));
    f.push_back({spec.fa_slope, spec.noise_sigma_fa / root});
    f.push_back({spec.md_slope, spec.noise_sigma_md / root});
  }
  return bayes_floor_mae(f);
}

double bayes_floor_mae(const PhantomSpec& spec, std::int64_t n_voxels_per_roi) {
  return bayes_floor_mae(spec, std::vector<std::int64_t>(std::size_t(std::max(spec.n_rois, 1)), n_voxels_per_roi));
}

}  // namespace wmage
