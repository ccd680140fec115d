#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "wmage/error.hpp"
#include "wmage/experiment.hpp"

using namespace wmage;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoFailure;
}

std::vector<Participant> manifest_of(const std::vector<Cohort>& cohorts) {
  std::vector<Participant> out;
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    Participant p;
    p.id = "p" + std::to_string(i);
    p.site = "s";
    p.age = 50 + double(i);
    p.cohort = cohorts[i];
    out.push_back(p);
  }
  return out;
}

// Single-ROI feature vectors (4 statistics + sex) carrying a noisy age signal.
Dataset roi_dataset(const std::vector<double>& ages, std::uint64_t seed, double noise = 0.01) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Dataset d(ModelKind::RoiMlp, {5});
  for (std::size_t i = 0; i < ages.size(); ++i) {
    const double a = ages[i];
    Sample s{"p" + std::to_string(i), a, i % 2 ? Sex::Male : Sex::Female, Cohort::Normal, {}};
    s.input = {0.6 - 0.002 * a + noise * n01(rng), 0.05 + 0.01 * n01(rng), 0.7e-3 + 2e-6 * a + 1e-5 * n01(rng),
               1e-4 * (1 + 0.1 * n01(rng)), double(i % 2)};
    d.add(std::move(s));
  }
  return d;
}

std::vector<std::string> ids_range(std::size_t lo, std::size_t hi) {
  std::vector<std::string> v;
  for (std::size_t i = lo; i < hi; ++i) v.push_back("p" + std::to_string(i));
  return v;
}

// Zero hidden weights, output bias in standardized units: predicts `years` for everyone.
void make_constant(AgeModel& m, double years) {
  for (auto& p : m.parameters())
    for (auto& v : p.tensor.data()) v = 0;
  auto& n = m.normalization();
  m.parameters().back().tensor.data()[0] = (years - n.target_mean) / n.target_std;
}

}  // namespace

TEST_CASE("manifest parsing") {
  const std::string text = std::string(kManifestHeader) +
                            "\nA,site1,61.5,1,normal,a_fa.nii,a_md.nii,/abs/l.nii\nB,site2,70,0,mci,b_fa.nii,b_md.nii,l.nii\n";
  auto m = parse_manifest(text, "/data");
  REQUIRE(m.size() == 2);
  CHECK(m[0].id == "A");
  CHECK(m[0].age == 61.5);
  CHECK(m[0].sex == Sex::Male);
  CHECK(m[0].fa_path == "/data/a_fa.nii");
  CHECK(m[0].label_path == "/abs/l.nii");
  CHECK(m[1].cohort == Cohort::Mci);
  CHECK(parse_manifest(manifest_csv(m)) == m);

  const std::string h = std::string(kManifestHeader) + "\n";
  CHECK(code_of([&] { parse_manifest(h + "A,s,60,0,normal,a,b,c\nA,s,61,0,normal,a,b,c\n"); }) == Errc::DuplicateId);
  CHECK(code_of([&] { parse_manifest(h + "A,s,-3,0,normal,a,b,c\n"); }) == Errc::BadManifest);
  CHECK(code_of([&] { parse_manifest(h + "A,s,0,0,normal,a,b,c\n"); }) == Errc::BadManifest);
  CHECK(code_of([&] { parse_manifest(h + "A,s,60,2,normal,a,b,c\n"); }) == Errc::BadManifest);
  CHECK(code_of([&] { parse_manifest(h + "A,s,60,0,elderly,a,b,c\n"); }) == Errc::BadManifest);
  CHECK(code_of([&] { parse_manifest(h + "A,s,60,0,normal,a,b\n"); }) == Errc::BadManifest);
  CHECK(code_of([&] { parse_manifest("id,age\nA,60\n"); }) == Errc::BadManifest);
}

TEST_CASE("split examples") {
  auto ten = make_splits(manifest_of(std::vector<Cohort>(10, Cohort::Normal)));
  REQUIRE(ten.folds.size() == 5);
  for (int k = 0; k < 5; ++k)
    CHECK(ten.folds[k] == std::vector<std::string>{"p" + std::to_string(2 * k), "p" + std::to_string(2 * k + 1)});
  CHECK(ten.test_normal.empty());
  CHECK(ten.training_ids(0) == ids_range(2, 10));

  auto eleven = make_splits(manifest_of(std::vector<Cohort>(11, Cohort::Normal)));
  std::vector<std::size_t> sizes;
  for (const auto& f : eleven.folds) sizes.push_back(f.size());
  CHECK(sizes == std::vector<std::size_t>{3, 2, 2, 2, 2});

  auto held = make_splits(manifest_of(std::vector<Cohort>(20, Cohort::Normal)), 5, 0.25);
  CHECK(held.test_normal == ids_range(15, 20));
  CHECK(held.folds.back() == ids_range(12, 15));

  auto mixed = make_splits(manifest_of({Cohort::Normal, Cohort::Dementia, Cohort::Normal, Cohort::Normal, Cohort::Mci,
                                        Cohort::Normal, Cohort::Impaired, Cohort::Normal}));
  CHECK(mixed.test_impaired == std::vector<std::string>{"p1", "p4", "p6"});

  CHECK(code_of([] { make_splits(manifest_of(std::vector<Cohort>(4, Cohort::Normal))); }) == Errc::TooFewParticipants);
  CHECK(code_of([] { make_splits({}); }) == Errc::TooFewParticipants);
  CHECK(code_of([] { make_splits(manifest_of(std::vector<Cohort>(10, Cohort::Normal)), 1); }) == Errc::InvalidSpec);
  auto dup = manifest_of(std::vector<Cohort>(10, Cohort::Normal));
  dup[3].id = "p0";
  CHECK(code_of([&] { make_splits(dup); }) == Errc::DuplicateId);
}

TEST_CASE("split invariants on random manifests") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> size(5, 60), cohort(0, 5);
  std::uniform_real_distribution<double> frac(0, 0.5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Cohort> cs(std::size_t(size(rng)));
    for (auto& c : cs) {
      const int r = cohort(rng);
      c = r < 3 ? Cohort::Normal : Cohort(r - 2);
    }
    auto m = manifest_of(cs);
    FoldSplit s;
    try {
      s = make_splits(m, 5, frac(rng));
    } catch (const Error& e) {
      CHECK(e.code() == Errc::TooFewParticipants);
      continue;
    }
    std::set<std::string> all;
    std::size_t total = 0, lo = SIZE_MAX, hi = 0;
    for (const auto& f : s.folds) {
      lo = std::min(lo, f.size());
      hi = std::max(hi, f.size());
      for (const auto& id : f) CHECK(m[std::stoul(id.substr(1))].cohort == Cohort::Normal);
    }
    CHECK(hi - lo <= 1);
    for (const auto* set : {&s.test_normal, &s.test_impaired}) s.folds.push_back(*set);
    for (const auto& f : s.folds) {
      total += f.size();
      all.insert(f.begin(), f.end());
    }
    CHECK(total == m.size());
    CHECK(all.size() == m.size());
  }
}

TEST_CASE("splits csv") {
  auto s = make_splits(manifest_of({Cohort::Normal, Cohort::Normal, Cohort::Mci, Cohort::Normal, Cohort::Normal,
                                    Cohort::Normal, Cohort::Normal, Cohort::Normal}),
                       5, 0.2);
  const auto csv = export_splits_csv(s);
  CHECK(csv.rfind("participant_id,role\n", 0) == 0);
  CHECK(load_splits_csv(csv) == s);
  CHECK(code_of([] { load_splits_csv("participant_id,role\na,fold1\na,fold2\n"); }) == Errc::DuplicateId);
  CHECK(code_of([] { load_splits_csv("participant_id,role\na,fold6\n"); }) == Errc::UnknownRole);
  CHECK(code_of([] { load_splits_csv("participant_id,role\na,fold0\n"); }) == Errc::UnknownRole);
  CHECK(code_of([] { load_splits_csv("participant_id,role\na,train\n"); }) == Errc::UnknownRole);
  CHECK(code_of([] { load_splits_csv("participant_id,role\na\n"); }) == Errc::BadManifest);
}

TEST_CASE("dataset") {
  Dataset d(ModelKind::RoiMlp, {5});
  d.add({"a", 60, Sex::Female, Cohort::Normal, {1, 2, 3, 4, 0}});
  CHECK(code_of([&] { d.add({"a", 61, Sex::Male, Cohort::Normal, {1, 2, 3, 4, 1}}); }) == Errc::DuplicateId);
  CHECK(code_of([&] { d.add({"b", 61, Sex::Male, Cohort::Normal, {1, 2}}); }) == Errc::ShapeMismatch);
  CHECK(code_of([&] { d.get("zz"); }) == Errc::DataMissing);
  CHECK(code_of([&] { d.batch({}); }) == Errc::EmptySet);
  auto [x, sex] = d.batch({"a", "a"});
  CHECK(x.shape() == nn::Shape{2, 5});
  CHECK(sex.shape() == nn::Shape{2, 1});
}

TEST_CASE("evaluation against hand arithmetic and loops") {
  Dataset d(ModelKind::RoiMlp, {5});
  d.add({"x", 68, Sex::Female, Cohort::Normal, {0, 0, 0, 0, 0}});
  d.add({"y", 70, Sex::Male, Cohort::Normal, {1, 0, 0, 0, 1}});
  auto m = build_model(ModelSpec::parse("roi_mlp:5-4-1"));
  // Sex feeds the output directly: 70 for female, 72 for male.
  make_constant(m, 70);
  m.normalization().input_mean.assign(5, 0.0);
  m.normalization().input_std.assign(5, 1.0);
  CHECK(evaluate_mae(m, {"x", "y"}, d) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(brain_age_gap(m, {"x", "y"}, d) == std::vector<double>{2, 0});

  // hidden unit 0 copies the sex input; the output adds twice that unit
  auto params = m.parameters();
  params[0].tensor.data()[4 * 4 + 0] = 1;  // weight [in=5, out=4]
  params[2].tensor.data()[0] = 2;
  const auto pred = predict_ids(m, {"x", "y"}, d);
  CHECK(pred[0] == doctest::Approx(70).epsilon(1e-12));
  CHECK(pred[1] == doctest::Approx(72).epsilon(1e-12));
  CHECK(evaluate_mae(m, {"x", "y"}, d) == doctest::Approx(2.0).epsilon(1e-12));

  Dataset two(ModelKind::RoiMlp, {5});
  two.add({"u", 60, Sex::Female, Cohort::Normal, {0, 0, 0, 0, 0}});
  two.add({"v", 80, Sex::Female, Cohort::Normal, {0, 0, 0, 0, 0}});
  make_constant(m, 70);
  CHECK(brain_age_gap(m, {"u", "v"}, two) == std::vector<double>{10, -10});

  auto ages = std::vector<double>{55, 61, 67, 73, 79, 58, 64, 70};
  auto data = roi_dataset(ages, 2);
  auto r = build_model(ModelSpec::parse("roi_mlp:5-6-1"), 3);
  auto ids = ids_range(0, ages.size());
  const auto gaps = brain_age_gap(r, ids, data);
  const auto p = predict_ids(r, ids, data);
  double loop = 0, abs_gap = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    loop += std::abs(p[i] - ages[i]);
    abs_gap += std::abs(gaps[i]);
  }
  CHECK(std::abs(evaluate_mae(r, ids, data) - loop / double(ids.size())) <= 1e-12);
  CHECK(std::abs(evaluate_mae(r, ids, data) - abs_gap / double(ids.size())) <= 1e-12);
  CHECK(code_of([&] { evaluate_mae(r, {}, data); }) == Errc::EmptySet);
  CHECK(code_of([&] { evaluate_mae(r, {"nobody"}, data); }) == Errc::DataMissing);
}

TEST_CASE("mean and sample std") {
  auto a = mean_std({5, 6, 7, 6, 6});
  CHECK(a.mean == doctest::Approx(6.0).epsilon(1e-14));
  CHECK(a.std == doctest::Approx(0.70710678118654752).epsilon(1e-12));
  auto b = mean_std({3.25, 3.25, 3.25, 3.25, 3.25});
  CHECK(b.mean == 3.25);
  CHECK(b.std == 0);
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.lr = 0;
  CHECK(code_of([&] { c.validate(); }) == Errc::BadConfig);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK(code_of([&] { c.validate(); }) == Errc::BadConfig);
  c = TrainConfig{};
  c.max_epochs = 0;
  CHECK(code_of([&] { c.validate(); }) == Errc::BadConfig);
  c = TrainConfig{};
  c.loss = "huber";
  CHECK(code_of([&] { c.validate(); }) == Errc::BadConfig);
  c = TrainConfig{};
  c.input_scaling = "minmax";
  CHECK(code_of([&] { c.validate(); }) == Errc::BadConfig);

  TrainConfig d;
  d.model = "roi_mlp:5-3-1";
  d.lr = 0.004;
  d.seed = 9;
  d.weight_decay = 0.5;
  auto back = TrainConfig::from_config(d.to_config());
  CHECK(back.model == d.model);
  CHECK(back.lr == d.lr);
  CHECK(back.seed == 9);
  CHECK(back.weight_decay == 0.5);
  CHECK(back.input_scaling == d.input_scaling);
}

TEST_CASE("training") {
  TrainConfig c;
  c.model = "roi_mlp:5-8-1";
  c.lr = 1e-2;
  c.batch_size = 8;
  c.max_epochs = 60;
  c.seed = 4;

  SUBCASE("constant target") {
    auto data = roi_dataset(std::vector<double>(40, 60.0), 1);
    auto r = train_model(c, ids_range(0, 32), ids_range(32, 40), data);
    CHECK(r.best_val_mae < 0.5);
    CHECK(r.status == TrainStatus::Completed);
    CHECK(int(r.history.size()) == c.max_epochs);
  }

  std::vector<double> ages;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(20, 80);
  for (int i = 0; i < 60; ++i) ages.push_back(u(rng));
  auto data = roi_dataset(ages, 5);
  const auto train = ids_range(0, 48), val = ids_range(48, 60);

  SUBCASE("identical runs give identical histories") {
    auto a = train_model(c, train, val, data), b = train_model(c, train, val, data);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_loss == b.history[i].train_loss);
      CHECK(a.history[i].val_mae == b.history[i].val_mae);
    }
    CHECK(a.best_epoch == b.best_epoch);
  }

  SUBCASE("best checkpoint is returned") {
    auto r = train_model(c, train, val, data);
    double best = 1e300;
    int at = 0;
    for (const auto& e : r.history)
      if (e.val_mae < best) best = e.val_mae, at = e.epoch;
    CHECK(r.best_epoch == at);
    CHECK(r.best_val_mae == best);
    CHECK(evaluate_mae(r.model, val, data) == doctest::Approx(best).epsilon(1e-12));
    // the epoch-1 learning rate is the configured one under the cosine schedule
    CHECK(r.history.front().lr == c.lr);
    CHECK(r.history.back().lr < c.lr);
  }

  SUBCASE("beats the training-mean baseline") {
    c.max_epochs = 150;
    auto r = train_model(c, train, val, data);
    double mean = 0;
    for (std::size_t i = 0; i < 48; ++i) mean += ages[i];
    mean /= 48;
    double base = 0;
    for (std::size_t i = 48; i < 60; ++i) base += std::abs(ages[i] - mean);
    base /= 12;
    CHECK(r.best_val_mae <= 0.6 * base);
  }

  SUBCASE("contract errors") {
    CHECK(code_of([&] { train_model(c, train, {"p0"}, data); }) == Errc::InvalidSpec);
    CHECK(code_of([&] { train_model(c, train, {}, data); }) == Errc::EmptySet);
    CHECK(code_of([&] { train_model(c, {"ghost"}, val, data); }) == Errc::DataMissing);
    TrainConfig bad = c;
    bad.model = "resnet:10,head_hidden=true,input=16";
    CHECK(code_of([&] { train_model(bad, train, val, data); }) == Errc::KindMismatch);
    bad = c;
    bad.lr = 1e200;
    bad.loss = "mse";
    auto r = [&]() -> std::optional<TrainResult> {
      try {
        return train_model(bad, train, val, data);
      } catch (const Error& e) {
        CHECK(e.code() == Errc::DivergedLoss);
        return std::nullopt;
      }
    }();
    if (r) {
      CHECK(r->status == TrainStatus::Diverged);
      CHECK(std::isfinite(r->best_val_mae));
    }
  }
}

TEST_CASE("cross validation and reports") {
  std::vector<double> ages;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(20, 80);
  for (int i = 0; i < 50; ++i) ages.push_back(u(rng));
  auto data = roi_dataset(ages, 6);
  auto manifest = manifest_of(std::vector<Cohort>(50, Cohort::Normal));
  auto split = make_splits(manifest, 5, 0.2);

  TrainConfig c;
  c.model = "roi_mlp:5-8-1";
  c.lr = 1e-2;
  c.batch_size = 8;
  c.max_epochs = 20;
  auto run = cross_validate(c, split, data);
  const auto& r = run.report;
  REQUIRE(r.per_fold_mae.size() == 5);
  REQUIRE(run.models.size() == 5);
  double s = 0;
  for (double m : r.per_fold_mae) {
    CHECK(m >= 0);
    s += m;
  }
  CHECK(std::abs(r.mae_mean - s / 5) <= 1e-12);
  CHECK(r.mae_std == doctest::Approx(mean_std(r.per_fold_mae).std).epsilon(1e-14));
  REQUIRE(r.test_normal_mae);
  CHECK_FALSE(r.test_impaired_mae);
  std::vector<double> per_model;
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(r.per_fold_mae[k] == evaluate_mae(run.models[k], split.folds[k], data));
    per_model.push_back(evaluate_mae(run.models[k], split.test_normal, data));
    CHECK(*r.folds[k].test_normal_mae == per_model.back());
  }
  CHECK(r.test_normal_mae->mean == doctest::Approx(mean_std(per_model).mean).epsilon(1e-14));
  CHECK(r.gaps.size() == split.test_normal.size());

  SUBCASE("thread count does not change the result") {
    auto par = cross_validate(c, split, data, 3);
    CHECK(par.report.per_fold_mae == r.per_fold_mae);
  }

  SUBCASE("jsonl round trip") {
    auto back = MetricsReport::from_jsonl(r.to_jsonl());
    CHECK(back.model == r.model);
    CHECK(back.per_fold_mae == r.per_fold_mae);
    CHECK(back.mae_mean == r.mae_mean);
    CHECK(back.mae_std == r.mae_std);
    CHECK(back.test_normal_mae->mean == r.test_normal_mae->mean);
    REQUIRE(back.folds.size() == 5);
    CHECK(back.folds[2].best_epoch == r.folds[2].best_epoch);
    CHECK(r.to_table().find("validation MAE") != std::string::npos);
    CHECK(code_of([] { MetricsReport::from_jsonl("{\"record\":\"fold\"}\n"); }) == Errc::BadManifest);
    CHECK(code_of([] { MetricsReport::from_jsonl("not json\n"); }) == Errc::BadManifest);
  }

  SUBCASE("comparing two configs on the same split") {
    TrainConfig c2 = c;
    c2.model = "roi_mlp:5-4-1";
    auto other = cross_validate(c2, split, data);
    auto tests = compare_reports(r, other.report);
    REQUIRE(tests.size() == 2);
    auto direct = stats::paired_t_test(r.per_fold_mae, other.report.per_fold_mae);
    CHECK(tests[0].result.t == direct.t);
    CHECK(tests[0].result.p == direct.p);
  }
}

TEST_CASE("impaired cohort gets a t-test and gap densities") {
  std::vector<Cohort> cs(30, Cohort::Normal);
  for (int i = 20; i < 30; ++i) cs[std::size_t(i)] = i % 2 ? Cohort::Mci : Cohort::Dementia;
  auto manifest = manifest_of(cs);
  std::vector<double> ages;
  for (const auto& p : manifest) ages.push_back(p.age);
  auto data = roi_dataset(ages, 8);
  auto split = make_splits(manifest, 5, 0.2);
  TrainConfig c;
  c.model = "roi_mlp:5-4-1";
  c.max_epochs = 5;
  auto r = cross_validate(c, split, data).report;
  REQUIRE(r.test_impaired_mae);
  REQUIRE(r.t_tests.size() == 1);
  CHECK(r.gaps.size() == 14);

  for (auto& g : r.gaps) g.cohort = manifest[std::stoul(g.id.substr(1))].cohort;
  const auto csv = gaps_csv(r.gaps);
  auto back = parse_gaps_csv(csv);
  REQUIRE(back.size() == r.gaps.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(std::abs(back[i].gap() - r.gaps[i].gap()) < 1e-9);

  auto curves = kde_by_cohort(r.gaps, 64);
  CHECK(curves.size() == 3);
  for (const auto& [cohort, curve] : curves) {
    CHECK(curve.size() == 64);
    CHECK(std::abs(stats::trapezoid(curve) - 1) <= 1e-3);
  }
  const auto kcsv = kde_csv(r.gaps, 16);
  CHECK(kcsv.rfind("cohort,x,density\n", 0) == 0);
  CHECK(std::count(kcsv.begin(), kcsv.end(), '\n') == 1 + 16 * std::ptrdiff_t(curves.size()));
}

TEST_CASE("history csv") {
  std::vector<EpochRecord> h{{1, 0.001, 2.5, 10}, {2, 0.25, 1.25, 8}};
  CHECK(history_csv(h) == "epoch,lr,train_loss,val_mae\n1,0.001,2.5,10\n2,0.25,1.25,8\n");
}
