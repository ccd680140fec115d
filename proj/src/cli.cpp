#include "wmage/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>

#include "wmage/config.hpp"
#include "wmage/error.hpp"
#include "wmage/experiment.hpp"
#include "wmage/io.hpp"
#include "wmage/nn/checkpoint.hpp"
#include "wmage/phantom.hpp"

namespace wmage {
namespace fs = std::filesystem;

namespace {

// Marker created with exclusive mode; a second run against the same output
// fails here instead of interleaving writes.
class OutputLock {
 public:
  explicit OutputLock(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw Error(Errc::IoFailure, "output is locked by another run (" + path_.string() +
                                       " exists; delete it if no run is active)");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

// Outputs are written under a staging directory and moved into the final
// directory only by commit(); an exception before then leaves nothing behind.
class StagedOutput {
 public:
  StagedOutput(fs::path final_dir, fs::path staging_dir) : final_(std::move(final_dir)), staging_(std::move(staging_dir)) {
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~StagedOutput() {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  const fs::path& root() const { return staging_; }

  void write(const std::string& rel, std::string_view text) {
    fs::create_directories((staging_ / rel).parent_path());
    atomic_write(staging_ / rel, text);
  }
  void write(const std::string& rel, std::span<const std::uint8_t> bytes) {
    fs::create_directories((staging_ / rel).parent_path());
    atomic_write(staging_ / rel, bytes);
  }

  /// Relative path -> fnv1a64 of every staged file, sorted by path.
  std::map<std::string, std::string> checksums() const {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(staging_))
      if (e.is_regular_file())
        out[fs::relative(e.path(), staging_).generic_string()] = hex64(fnv1a64(read_file(e.path())));
    return out;
  }

  void commit() {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(staging_))
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), staging_));
    std::sort(files.begin(), files.end());
    for (const auto& rel : files) {
      fs::create_directories((final_ / rel).parent_path());
      fs::rename(staging_ / rel, final_ / rel);
    }
  }

 private:
  fs::path final_, staging_;
};

std::string run_record(const std::string& command, std::uint64_t seed, const KeyValueConfig& cfg,
                       const std::map<std::string, std::string>& checksums) {
  KeyValueConfig rec;
  rec.set("command", command);
  rec.set("seed", std::to_string(seed));
  for (const auto& [k, v] : cfg.entries()) rec.set("config." + k, v);
  for (const auto& [k, v] : checksums) rec.set("artifact." + k, v);
  return rec.to_text();
}

// Directory outputs: lock and run record live inside the directory.
struct DirectoryRun {
  fs::path dir;
  OutputLock lock;
  StagedOutput staged;

  explicit DirectoryRun(const fs::path& d)
      : dir(d), lock(d / ".wmage.lock"), staged(d, fs::path(d.string() + ".staging")) {}

  void finish(const std::string& command, std::uint64_t seed, const KeyValueConfig& cfg) {
    auto sums = staged.checksums();
    staged.write("run.lock", run_record(command, seed, cfg, sums));
    staged.commit();
  }
};

// Single-file outputs: `<file>.lock` while running, `<file>.run.lock` after.
struct FileRun {
  fs::path file;
  OutputLock lock;
  StagedOutput staged;

  explicit FileRun(const fs::path& f)
      : file(f),
        lock(fs::path(f.string() + ".lock")),
        staged(f.has_parent_path() ? f.parent_path() : fs::path("."), fs::path(f.string() + ".staging")) {}

  void finish(std::string_view content, const std::string& command, std::uint64_t seed, const KeyValueConfig& cfg) {
    const auto name = file.filename().string();
    staged.write(name, content);
    auto sums = staged.checksums();
    staged.write(name + ".run.lock", run_record(command, seed, cfg, sums));
    staged.commit();
  }
};

RoiTable resolve_rois(const std::optional<std::string>& path, int n_rois) {
  if (path) return RoiTable::load(*path);
  if (n_rois < 1) throw Error(Errc::InvalidRoiTable, "n-rois must be >= 1");
  return RoiTable::sequential(n_rois);
}

template <class T>
void put(KeyValueConfig& cfg, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>) cfg.set(key, *v);
  else if constexpr (std::is_floating_point_v<T>) cfg.set(key, format_double(*v));
  else cfg.set(key, std::to_string(*v));
}

// ---- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::string out;
  std::optional<std::string> config;
  std::optional<int> n, grid, rois;
  std::optional<double> age_lo, age_hi, noise_fa, noise_md, age_shift, test_fraction;
  std::optional<std::uint64_t> seed;
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  KeyValueConfig cfg = a.config ? KeyValueConfig::load(*a.config) : KeyValueConfig{};
  put(cfg, "n_participants", a.n);
  put(cfg, "grid", a.grid);
  put(cfg, "n_rois", a.rois);
  put(cfg, "age_lo", a.age_lo);
  put(cfg, "age_hi", a.age_hi);
  put(cfg, "noise_sigma_fa", a.noise_fa);
  put(cfg, "noise_sigma_md", a.noise_md);
  put(cfg, "age_shift_test", a.age_shift);
  put(cfg, "test_fraction", a.test_fraction);
  put(cfg, "seed", a.seed);
  const auto spec = PhantomSpec::from_config(cfg);
  DirectoryRun run(a.out);
  const auto manifest = generate_phantom_cohort(spec, run.staged.root(), worker_threads());
  run.finish("phantom", spec.seed, spec.to_config());
  out << "wrote " << manifest.size() << " phantom participants to " << a.out << "\n";
  return kExitOk;
}

// ---- extract ---------------------------------------------------------------

struct ExtractArgs {
  std::string manifest, out;
  std::optional<std::string> rois;
  int n_rois = kDefaultRoiCount;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out, std::ostream& err) {
  const auto participants = load_manifest(a.manifest);
  const auto table = resolve_rois(a.rois, a.n_rois);
  std::map<std::string, LabelVolume> labels;
  std::string csv = feature_csv_header(table) + "\n";
  for (const auto& p : participants) {
    if (!labels.count(p.label_path)) labels.emplace(p.label_path, load_labels(p.label_path));
    const auto fv =
        build_feature_vector(load_volume(p.fa_path), load_volume(p.md_path), labels.at(p.label_path), p.sex, table);
    for (auto id : fv.empty_rois) err << "warning: participant " << p.id << ": ROI " << id << " has no voxels\n";
    csv += feature_csv_row(p.id, fv) + "\n";
  }
  FileRun run(a.out);
  KeyValueConfig cfg;
  cfg.set("manifest", a.manifest);
  cfg.set("n_rois", std::to_string(table.size()));
  if (a.rois) cfg.set("rois", *a.rois);
  run.finish(csv, "extract", 0, cfg);
  out << "wrote " << participants.size() << " feature rows of " << feature_length(table.size()) << " values to "
      << a.out << "\n";
  return kExitOk;
}

// ---- split -----------------------------------------------------------------

struct SplitArgs {
  std::string manifest, out;
  int folds = kDefaultFolds;
  double test_fraction = 0.0;
};

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const auto split = make_splits(load_manifest(a.manifest), a.folds, a.test_fraction);
  FileRun run(a.out);
  KeyValueConfig cfg;
  cfg.set("manifest", a.manifest);
  cfg.set("folds", std::to_string(a.folds));
  cfg.set("test_fraction", format_double(a.test_fraction));
  run.finish(export_splits_csv(split), "split", 0, cfg);
  out << "folds:";
  for (const auto& f : split.folds) out << " " << f.size();
  out << "; test_normal: " << split.test_normal.size() << "; test_impaired: " << split.test_impaired.size() << "\n";
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::optional<std::string> config, manifest, splits, out, rois, model, loss, lr_schedule, input_scaling;
  std::optional<int> n_rois, batch_size, epochs, input_size, folds;
  std::optional<double> lr, md_scale, weight_decay;
  std::optional<std::uint64_t> seed;
};

std::string require_key(const KeyValueConfig& cfg, const std::string& key) {
  auto v = cfg.get(key);
  if (!v || v->empty()) throw Error(Errc::BadConfig, "missing required setting '" + key + "' (flag --" + key + ")");
  return *v;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  KeyValueConfig cfg = a.config ? KeyValueConfig::load(*a.config) : KeyValueConfig{};
  put(cfg, "manifest", a.manifest);
  put(cfg, "splits", a.splits);
  put(cfg, "out", a.out);
  put(cfg, "rois", a.rois);
  put(cfg, "n_rois", a.n_rois);
  put(cfg, "folds", a.folds);
  put(cfg, "model", a.model);
  put(cfg, "loss", a.loss);
  put(cfg, "lr_schedule", a.lr_schedule);
  put(cfg, "batch_size", a.batch_size);
  put(cfg, "max_epochs", a.epochs);
  put(cfg, "input_size", a.input_size);
  put(cfg, "lr", a.lr);
  put(cfg, "md_scale", a.md_scale);
  put(cfg, "weight_decay", a.weight_decay);
  put(cfg, "input_scaling", a.input_scaling);
  put(cfg, "seed", a.seed);

  const auto tc = TrainConfig::from_config(cfg);
  const auto manifest_path = require_key(cfg, "manifest");
  const auto splits_path = require_key(cfg, "splits");
  const fs::path out_dir = require_key(cfg, "out");
  const int n_folds = int(cfg.get_int("folds", kDefaultFolds));
  const auto rois = resolve_rois(cfg.get("rois"), int(cfg.get_int("n_rois", kDefaultRoiCount)));
  const auto spec = tc.model_spec();

  const auto participants = load_manifest(manifest_path);
  const auto split = load_splits_csv(read_text_file(splits_path), n_folds);
  std::set<std::string> wanted;
  for (const auto& f : split.folds) wanted.insert(f.begin(), f.end());
  wanted.insert(split.test_normal.begin(), split.test_normal.end());
  wanted.insert(split.test_impaired.begin(), split.test_impaired.end());
  std::vector<Participant> used;
  for (const auto& p : participants)
    if (wanted.count(p.id)) used.push_back(p);
  if (used.size() != wanted.size()) {
    for (const auto& p : participants) wanted.erase(p.id);
    throw Error(Errc::DataMissing, "splits name participant '" + *wanted.begin() + "' absent from the manifest");
  }

  DirectoryRun run(out_dir);
  const auto data = load_dataset(used, spec, rois, tc.md_scale, worker_threads());
  auto cv = cross_validate(tc, split, data, worker_threads());
  for (std::size_t k = 0; k < cv.models.size(); ++k) {
    auto ckpt = to_checkpoint(cv.models[k]);
    ckpt.metadata["md_scale"] = format_double(tc.md_scale);
    ckpt.metadata["roi_count"] = std::to_string(rois.size());
    ckpt.metadata["fold"] = std::to_string(k + 1);
    run.staged.write("fold" + std::to_string(k + 1) + ".ckpt", encode_checkpoint(ckpt));
    run.staged.write("history_fold" + std::to_string(k + 1) + ".csv", history_csv(cv.report.folds[k].history));
  }
  run.staged.write("metrics.jsonl", cv.report.to_jsonl());
  const auto table = cv.report.to_table();
  run.staged.write("metrics.txt", table);
  run.staged.write("gaps.csv", gaps_csv(cv.report.gaps));
  run.finish("train", tc.seed, cfg);
  out << table;
  return kExitOk;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint, manifest;
  std::optional<std::string> splits, role, rois, out;
  int n_rois = kDefaultRoiCount;
  int folds = kDefaultFolds;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto ckpt = nn::decode_checkpoint(read_file(a.checkpoint));
  auto model = model_from_checkpoint(ckpt);
  double md_scale = kDefaultMdScale;
  if (auto it = ckpt.metadata.find("md_scale"); it != ckpt.metadata.end()) md_scale = parse_double(it->second, "md_scale");
  const auto participants = load_manifest(a.manifest);

  std::vector<std::string> ids;
  if (a.splits) {
    const auto split = load_splits_csv(read_text_file(*a.splits), a.folds);
    const std::string role = a.role.value_or("test_normal");
    if (role == "test_normal") ids = split.test_normal;
    else if (role == "test_impaired") ids = split.test_impaired;
    else {
      const auto one = load_splits_csv("x," + role + "\n", a.folds);  // validates the role name
      for (std::size_t k = 0; k < one.folds.size(); ++k)
        if (!one.folds[k].empty()) ids = split.folds[k];
    }
  } else {
    for (const auto& p : participants) ids.push_back(p.id);
  }
  std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<Participant> used;
  for (const auto& p : participants)
    if (wanted.count(p.id)) used.push_back(p);

  const auto data = load_dataset(used, model.spec(), resolve_rois(a.rois, a.n_rois), md_scale, worker_threads());
  const auto pred = predict_ids(model, ids, data);
  std::vector<GapRecord> gaps;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& s = data.get(ids[i]);
    gaps.push_back({s.id, s.cohort, s.age, pred[i]});
  }
  const double mae = evaluate_mae(model, ids, data);
  if (a.out) {
    FileRun run(*a.out);
    KeyValueConfig cfg;
    cfg.set("checkpoint", a.checkpoint);
    cfg.set("manifest", a.manifest);
    if (a.splits) cfg.set("splits", *a.splits);
    if (a.role) cfg.set("role", *a.role);
    run.finish(gaps_csv(gaps), "evaluate", 0, cfg);
  }
  char line[128];
  std::snprintf(line, sizeof line, "MAE %.4f years over %zu participants\n", mae, ids.size());
  out << line;
  return kExitOk;
}

// ---- report ----------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> metrics;
  std::optional<std::string> out;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<MetricsReport> reports;
  for (const auto& m : a.metrics) reports.push_back(MetricsReport::from_jsonl(read_text_file(m)));
  std::string text;
  for (std::size_t i = 0; i < reports.size(); ++i) text += (i ? "\n" : "") + reports[i].to_table();
  for (std::size_t i = 0; i < reports.size(); ++i)
    for (std::size_t j = i + 1; j < reports.size(); ++j)
      for (const auto& t : compare_reports(reports[i], reports[j])) {
        char line[64];
        std::snprintf(line, sizeof line, ": t = %.4f, p = %.4f\n", t.result.t, t.result.p);
        text += "paired t-test [" + t.pair + "]" + line;
      }
  if (a.out) {
    FileRun run(*a.out);
    KeyValueConfig cfg;
    for (std::size_t i = 0; i < a.metrics.size(); ++i) cfg.set("metrics." + std::to_string(i + 1), a.metrics[i]);
    run.finish(text, "report", 0, cfg);
  }
  out << text;
  return kExitOk;
}

// ---- plot ------------------------------------------------------------------

const char* cohort_colour(Cohort c) {
  switch (c) {
    case Cohort::Normal: return "#1f77b4";
    case Cohort::Impaired: return "#ff7f0e";
    case Cohort::Mci: return "#2ca02c";
    case Cohort::Dementia: return "#d62728";
  }
  return "#000000";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string kde_svg(const std::map<Cohort, std::vector<stats::DensityPoint>>& curves, const std::string& title) {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 60;
  double x0 = 0, x1 = 1, y1 = 0;
  bool first = true;
  for (const auto& [c, curve] : curves)
    for (const auto& p : curve) {
      x0 = first ? p.x : std::min(x0, p.x);
      x1 = first ? p.x : std::max(x1, p.x);
      y1 = std::max(y1, p.density);
      first = false;
    }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > 0)) y1 = 1;
  y1 *= 1.05;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return H - B - y / y1 * (H - T - B); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) +
                  "\" viewBox=\"0 0 " + num(W) + " " + num(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  s += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5, yv = y1 * i / 5;
    s += "<line x1=\"" + num(sx(xv)) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(sx(xv)) + "\" y2=\"" +
         num(H - B + 5) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(sx(xv)) + "\" y=\"" + num(H - B + 18) + "\" text-anchor=\"middle\">" + num(xv) + "</text>\n";
    s += "<line x1=\"" + num(L - 5) + "\" y1=\"" + num(sy(yv)) + "\" x2=\"" + num(L) + "\" y2=\"" + num(sy(yv)) +
         "\" stroke=\"black\"/>\n";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", yv);
    s += "<text x=\"" + num(L - 8) + "\" y=\"" + num(sy(yv) + 4) + "\" text-anchor=\"end\">" + buf + "</text>\n";
  }
  s += "<text x=\"" + num((L + W - R) / 2) + "\" y=\"" + num(H - 15) +
       "\" text-anchor=\"middle\">predicted - chronological age (years)</text>\n";
  s += "<text transform=\"translate(18 " + num((T + H - B) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">density</text>\n";
  int row = 0;
  for (const auto& [c, curve] : curves) {
    s += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(cohort_colour(c)) + "\" points=\"";
    for (std::size_t i = 0; i < curve.size(); ++i) s += (i ? " " : "") + num(sx(curve[i].x)) + "," + num(sy(curve[i].density));
    s += "\"/>\n";
    const double ly = T + 10 + 20 * row++;
    s += "<line x1=\"" + num(W - R + 15) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(W - R + 40) + "\" y2=\"" + num(ly) +
         "\" stroke-width=\"2\" stroke=\"" + cohort_colour(c) + "\"/>\n";
    s += "<text x=\"" + num(W - R + 46) + "\" y=\"" + num(ly + 4) + "\">" + cohort_name(c) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

struct PlotArgs {
  std::vector<std::string> gaps;
  std::string out;
  int grid_points = 512;
};

int cmd_plot(const PlotArgs& a, std::ostream& out) {
  if (a.grid_points < 2) throw Error(Errc::BadConfig, "grid-points must be >= 2");
  DirectoryRun run(a.out);
  KeyValueConfig cfg;
  cfg.set("grid_points", std::to_string(a.grid_points));
  std::set<std::string> stems;
  for (std::size_t i = 0; i < a.gaps.size(); ++i) {
    const auto gaps = parse_gaps_csv(read_text_file(a.gaps[i]));
    if (gaps.empty()) throw Error(Errc::EmptyInput, a.gaps[i] + " holds no participants");
    auto stem = fs::path(a.gaps[i]).stem().string();
    if (!stems.insert(stem).second) stem += "_" + std::to_string(i + 1);
    cfg.set("gaps." + std::to_string(i + 1), a.gaps[i]);
    run.staged.write(stem + "_kde.csv", kde_csv(gaps, a.grid_points));
    run.staged.write(stem + "_kde.svg", kde_svg(kde_by_cohort(gaps, a.grid_points), stem));
    out << "wrote " << stem << "_kde.csv and " << stem << "_kde.svg\n";
  }
  run.finish("plot", 0, cfg);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"White-matter brain-age pipeline: phantoms, features, splits, training, evaluation, plots."};
  app.name("wmage");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  PhantomArgs ph;
  auto* c_ph = app.add_subcommand("phantom", "Generate a synthetic cohort (NIfTI volumes + manifest)");
  c_ph->add_option("--out", ph.out, "Output directory")->required();
  c_ph->add_option("--config", ph.config, "Phantom spec as key = value lines");
  c_ph->add_option("--n", ph.n, "Number of participants");
  c_ph->add_option("--seed", ph.seed, "Random seed");
  c_ph->add_option("--grid", ph.grid, "Grid edge length in voxels");
  c_ph->add_option("--rois", ph.rois, "Number of concentric-shell ROIs");
  c_ph->add_option("--age-lo", ph.age_lo, "Lowest age (years)");
  c_ph->add_option("--age-hi", ph.age_hi, "Highest age (years)");
  c_ph->add_option("--noise-fa", ph.noise_fa, "Voxel noise std for FA");
  c_ph->add_option("--noise-md", ph.noise_md, "Voxel noise std for MD (mm^2/s)");
  c_ph->add_option("--age-shift-test", ph.age_shift, "Age shift (years) of the trailing test share");
  c_ph->add_option("--test-fraction", ph.test_fraction, "Trailing share affected by --age-shift-test");

  ExtractArgs ex;
  auto* c_ex = app.add_subcommand("extract", "Compute ROI feature vectors for every participant");
  c_ex->add_option("--manifest", ex.manifest, "Manifest CSV")->required();
  c_ex->add_option("--out", ex.out, "Feature CSV to write")->required();
  c_ex->add_option("--rois", ex.rois, "ROI table CSV (id,name)");
  c_ex->add_option("--n-rois", ex.n_rois, "Sequential ROI ids 1..N when no table is given")->capture_default_str();

  SplitArgs sp;
  auto* c_sp = app.add_subcommand("split", "Assign participants to folds and test sets");
  c_sp->add_option("--manifest", sp.manifest, "Manifest CSV")->required();
  c_sp->add_option("--out", sp.out, "Splits CSV to write")->required();
  c_sp->add_option("--folds", sp.folds, "Number of folds")->capture_default_str();
  c_sp->add_option("--test-fraction", sp.test_fraction, "Trailing share of normals held out")->capture_default_str();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Cross-validate a model over the folds of a split");
  c_tr->add_option("--config", tr.config, "Settings as key = value lines; flags override");
  c_tr->add_option("--manifest", tr.manifest, "Manifest CSV");
  c_tr->add_option("--splits", tr.splits, "Splits CSV");
  c_tr->add_option("--out", tr.out, "Output directory");
  c_tr->add_option("--rois", tr.rois, "ROI table CSV (id,name)");
  c_tr->add_option("--n-rois", tr.n_rois, "Sequential ROI ids 1..N when no table is given (default 134)");
  c_tr->add_option("--folds", tr.folds, "Number of folds in the splits file (default 5)");
  c_tr->add_option("--model", tr.model, "Model spec, e.g. roi_mlp:537-128-64-1 or resnet:18,head_hidden=true");
  c_tr->add_option("--loss", tr.loss, "l1 or mse");
  c_tr->add_option("--lr", tr.lr, "Adam learning rate");
  c_tr->add_option("--lr-schedule", tr.lr_schedule, "cosine or constant");
  c_tr->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  c_tr->add_option("--epochs", tr.epochs, "Maximum epochs");
  c_tr->add_option("--input-size", tr.input_size, "Volumetric input edge length");
  c_tr->add_option("--md-scale", tr.md_scale, "Multiplier applied to MD before stacking");
  c_tr->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay per step (scaled by lr)");
  c_tr->add_option("--input-scaling", tr.input_scaling, "ROI feature scaling: snr, residual or zscore");
  c_tr->add_option("--seed", tr.seed, "Random seed");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Score a checkpoint on a set of participants");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  c_ev->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  c_ev->add_option("--splits", ev.splits, "Splits CSV; without it every manifest participant is scored");
  c_ev->add_option("--role", ev.role, "Role within the splits (default test_normal)");
  c_ev->add_option("--folds", ev.folds, "Number of folds in the splits file")->capture_default_str();
  c_ev->add_option("--rois", ev.rois, "ROI table CSV (id,name)");
  c_ev->add_option("--n-rois", ev.n_rois, "Sequential ROI ids 1..N when no table is given")->capture_default_str();
  c_ev->add_option("--out", ev.out, "Brain-age-gap CSV to write");

  ReportArgs rp;
  auto* c_rp = app.add_subcommand("report", "Tabulate metrics files and compare them with paired t-tests");
  c_rp->add_option("--metrics", rp.metrics, "metrics.jsonl files (repeatable)")->required();
  c_rp->add_option("--out", rp.out, "Text file to write");

  PlotArgs pl;
  auto* c_pl = app.add_subcommand("plot", "Kernel density curves of brain-age gaps as CSV and SVG");
  c_pl->add_option("--gaps", pl.gaps, "Brain-age-gap CSV files (repeatable)")->required();
  c_pl->add_option("--out", pl.out, "Output directory")->required();
  c_pl->add_option("--grid-points", pl.grid_points, "Samples per curve")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_ph->parsed()) return cmd_phantom(ph, out);
    if (c_ex->parsed()) return cmd_extract(ex, out, err);
    if (c_sp->parsed()) return cmd_split(sp, out);
    if (c_tr->parsed()) return cmd_train(tr, out);
    if (c_ev->parsed()) return cmd_evaluate(ev, out);
    if (c_rp->parsed()) return cmd_report(rp, out);
    if (c_pl->parsed()) return cmd_plot(pl, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace wmage
