// deepcov command-line driver.

#include <CLI11.hpp>
#include <json.hpp>

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deepcov/baselines.hpp"
#include "deepcov/dataset.hpp"
#include "deepcov/error.hpp"
#include "deepcov/evaluation.hpp"
#include "deepcov/fingerprint.hpp"
#include "deepcov/geostat.hpp"
#include "deepcov/kvconfig.hpp"
#include "deepcov/mapgen.hpp"
#include "deepcov/network.hpp"
#include "deepcov/raster.hpp"
#include "deepcov/render.hpp"
#include "deepcov/synth.hpp"
#include "deepcov/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace deepcov;

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr int kManifestVersion = 1;
constexpr int kDatasetVersion = 1;

struct Globals {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  bool force = false;
  std::string config_path;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw Error(ErrorKind::InvalidArgument, what + " path is empty");
  if (!fs::is_regular_file(p)) throw Error(ErrorKind::Io, what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw Error(ErrorKind::Io, what + " directory not found: " + p.string());
}

/// Output staged in a sibling directory and renamed into place on commit, so a
/// failed command leaves nothing behind.
class StagedOutput {
 public:
  StagedOutput(fs::path final_path, bool force, bool is_file) : final_(std::move(final_path)), is_file_(is_file) {
    if (final_.empty()) throw Error(ErrorKind::InvalidArgument, "output path is empty");
    if (fs::exists(final_)) {
      const bool occupied = is_file_ || !fs::is_directory(final_) || !fs::is_empty(final_);
      if (occupied && !force)
        throw Error(ErrorKind::Rejected, "output '" + final_.string() + "' already exists (use --force to replace)");
    }
    fs::path parent = final_.parent_path();
    if (parent.empty()) parent = ".";
    if (!fs::is_directory(parent)) throw Error(ErrorKind::Io, "output parent directory missing: " + parent.string());
    stage_ = parent / ("." + final_.filename().string() + ".partial-" + std::to_string(::getpid()));
    fs::remove_all(stage_);
    if (!is_file_) fs::create_directories(stage_);
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;
  ~StagedOutput() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(stage_, ec);
    }
  }

  /// Staging directory, or the staging file for single-file outputs.
  const fs::path& path() const { return stage_; }
  fs::path operator/(const std::string& name) const { return stage_ / name; }

  void commit() {
    if (fs::exists(final_)) fs::remove_all(final_);
    fs::rename(stage_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path stage_;
  bool is_file_;
  bool committed_ = false;
};

/// Builder for the per-output manifest.
class RunManifest {
 public:
  RunManifest(std::string command, const Globals& g) {
    j_["manifest_version"] = kManifestVersion;
    j_["command"] = std::move(command);
    j_["tool_version"] = kToolVersion;
    j_["seed"] = g.seed;
    j_["threads"] = g.threads;
    j_["config"] = json::object();
    j_["inputs"] = json::array();
    j_["started_at"] = utc_now();
  }
  void config(const std::string& key, const json& value) { j_["config"][key] = value; }
  void input(const std::string& role, const fs::path& p) {
    j_["inputs"].push_back({{"role", role}, {"path", p.string()}, {"sha256", sha256_file(p)}});
  }
  json& extra() { return j_; }
  void write(const fs::path& path) {
    j_["finished_at"] = utc_now();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write manifest " + path.string());
    out << j_.dump(2) << '\n';
  }

 private:
  json j_;
};

/// Fills options not given on the command line from the flat config file.
/// Keys match long option names with '-' or '_'.
void apply_config(CLI::App& app, const KvConfig& kv) {
  for (CLI::Option* opt : app.get_options()) {
    if (opt->count() > 0) continue;
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    std::string alt = name;
    for (char& c : alt)
      if (c == '-') c = '_';
    std::optional<std::string> v = kv.get(name);
    if (!v) v = kv.get(alt);
    if (!v) continue;
    if (opt->get_type_size() == 0) {
      const bool on = (*v == "1" || *v == "true" || *v == "yes" || *v == "on");
      if (on) {
        opt->add_result(std::string("true"));
        opt->run_callback();
      }
    } else {
      opt->add_result(*v);
      opt->run_callback();
    }
  }
}

/// Resolved option values, for the manifest.
json resolved_options(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    if (opt->count() > 0) {
      const auto r = opt->reduced_results();
      if (opt->get_type_size() == 0)
        j[name] = true;
      else
        j[name] = r.size() == 1 ? json(r[0]) : json(r);
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, p.string() + ": " + e.what());
  }
}

/// What later commands need to know about a training run.
struct RunInfo {
  fs::path dir;
  json manifest;
  double national_sd = 1.0;
  data::FoldAssignment folds;
  data::TargetTransform transform = data::TargetTransform::Identity;
  bool substitute_half_lod = true;
  std::size_t window = 32;
};

RunInfo load_run(const fs::path& dir) {
  require_dir(dir, "run");
  require_file(dir / "manifest.json", "run manifest");
  require_file(dir / "model.params", "run model");
  RunInfo info;
  info.dir = dir;
  info.manifest = read_json(dir / "manifest.json");
  try {
    const json& r = info.manifest.at("run");
    info.national_sd = r.at("national_sd").get<double>();
    info.folds.k_folds = r.at("k_folds").get<std::size_t>();
    info.folds.test_fold = r.at("test_fold").get<std::size_t>();
    info.folds.seed = r.at("fold_seed").get<std::uint64_t>();
    if (r.contains("val_fold") && !r.at("val_fold").is_null()) info.folds.val_fold = r.at("val_fold").get<std::size_t>();
    info.transform = data::parse_transform(r.at("transform").get<std::string>());
    info.substitute_half_lod = r.at("substitute_half_lod").get<bool>();
    info.window = r.at("window").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, "run manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  info.folds.validate();
  return info;
}

void print_line(const std::string& s) { std::cout << s << '\n'; }

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string dem, out;
  std::size_t aggregate = 1;
};

void run_ingest(const IngestArgs& a, const Globals& g, const CLI::App& sub) {
  require_file(a.dem, "DEM");
  if (a.aggregate < 1) throw Error(ErrorKind::InvalidArgument, "--aggregate must be >= 1");
  const raster::Grid src = raster::read_ascii_grid(fs::path(a.dem));
  const raster::Grid out = a.aggregate == 1 ? src : raster::block_aggregate(src, a.aggregate);

  const fs::path out_path(a.out);
  const fs::path manifest_path = out_path.string() + ".manifest.json";
  if (fs::exists(manifest_path) && !g.force)
    throw Error(ErrorKind::Rejected, "output '" + manifest_path.string() + "' already exists (use --force to replace)");
  StagedOutput stage(out_path, g.force, true);
  raster::write_ascii_grid(out, stage.path());

  RunManifest m("ingest", g);
  m.extra()["config"] = resolved_options(sub);
  m.input("dem", a.dem);
  m.extra()["output"] = {{"rows", out.n_rows()}, {"cols", out.n_cols()}, {"cell_size", out.cell_size()}};
  stage.commit();
  m.write(manifest_path);
  print_line("wrote " + out_path.string() + " (" + std::to_string(out.n_rows()) + "x" +
             std::to_string(out.n_cols()) + ", cell " + raster::format_double(out.cell_size()) + ")");
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::size_t size = 512;
  double hurst = 0.7;
  std::string rule = "tri_nonlinear";
  std::size_t sites = 5000;
  double noise = 0.3;
  double contrast = 0.0;
  double relief = 100.0;
  double cell_size = 500.0;
  std::size_t window = 32;
  bool demo = false;
  std::string out;
};

void run_synth(const SynthArgs& a, const Globals& g, const CLI::App& sub) {
  synth::SynthRecipe r;
  if (a.demo) r = synth::SynthRecipe::demo();
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  if (!a.demo || given("--size")) r.size = a.size;
  if (!a.demo || given("--hurst")) r.hurst = a.hurst;
  if (!a.demo || given("--rule")) r.rule = synth::parse_rule(a.rule);
  if (!a.demo || given("--sites")) r.n_sites = a.sites;
  if (!a.demo || given("--noise")) r.noise_sd = a.noise;
  if (!a.demo || given("--contrast")) r.roughness_contrast = a.contrast;
  r.relief = a.relief;
  r.cell_size = a.cell_size;
  r.window = a.window;
  r.seed = g.seed;
  r.validate();

  StagedOutput stage(a.out, g.force, false);
  const synth::World w = synth::synthesize_world(r);
  raster::write_ascii_grid(w.terrain, stage / "dem.asc");
  data::write_sites_csv(w.sites, stage / "sites.csv");
  {
    std::ofstream t(stage / "truth.csv", std::ios::binary);
    t << "site_id,easting,northing,truth,target\n";
    for (std::size_t i = 0; i < w.sites.size(); ++i)
      t << w.sites[i].id << ',' << raster::format_double(w.sites[i].easting) << ','
        << raster::format_double(w.sites[i].northing) << ',' << raster::format_double(w.truth[i]) << ','
        << raster::format_double(*w.sites[i].raw_value) << '\n';
  }
  json report = {{"size", r.size},
                 {"hurst", r.hurst},
                 {"rule", synth::to_string(r.rule)},
                 {"n_sites", r.n_sites},
                 {"noise_sd", r.noise_sd},
                 {"roughness_contrast", r.roughness_contrast},
                 {"relief", r.relief},
                 {"cell_size", r.cell_size},
                 {"seed", r.seed},
                 {"r2_ceiling", w.r2_ceiling},
                 {"empirical_r2", w.empirical_r2}};
  {
    std::ofstream out(stage / "synth.json", std::ios::binary);
    out << report.dump(2) << '\n';
  }
  RunManifest m("synth", g);
  m.extra()["config"] = resolved_options(sub);
  m.extra()["recipe"] = report;
  m.write(stage / "manifest.json");
  stage.commit();
  print_line("r2_ceiling=" + raster::format_double(w.r2_ceiling));
  print_line("empirical_r2=" + raster::format_double(w.empirical_r2));
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string dem, sites, arch, transform = "identity", out;
  std::size_t folds = 10, test_fold = 9;
  std::optional<std::size_t> val_fold;
  std::size_t batch_size = 4096, epochs = 300;
  double lr = 1e-3;
  std::string patience = "50";
  bool no_half_lod = false;
  bool quiet = false;
};

void run_train(const TrainArgs& a, const Globals& g, const CLI::App& sub) {
  data::FoldAssignment folds;
  folds.k_folds = a.folds;
  folds.test_fold = a.test_fold;
  folds.val_fold = a.val_fold;
  folds.seed = g.seed;
  folds.validate();
  const data::TargetTransform transform = data::parse_transform(a.transform);

  KvConfig tkv;
  tkv.set("batch_size", std::to_string(a.batch_size));
  tkv.set("max_epochs", std::to_string(a.epochs));
  tkv.set("learning_rate", raster::format_double(a.lr));
  tkv.set("patience", a.patience);
  tkv.set("seed", std::to_string(g.seed));
  const train::TrainConfig tc = train::TrainConfig::from_kv(tkv, train::TrainConfig{});

  require_file(a.dem, "DEM");
  require_file(a.sites, "sites");
  nn::ArchConfig arch = nn::ArchConfig::standard();
  if (!a.arch.empty()) {
    require_file(a.arch, "architecture");
    arch = nn::ArchConfig::from_kv(KvConfig::load(a.arch));
  }
  arch.seed = g.seed;
  nn::shape_trace(arch);

  const raster::Grid dem = raster::read_ascii_grid(fs::path(a.dem));
  const raster::GridStats stats = raster::grid_stats(dem);
  if (!(stats.sd > 0.0)) throw Error(ErrorKind::Numerical, "DEM has zero elevation variance");
  const std::vector<data::Site> sites = data::read_sites_csv(fs::path(a.sites));

  data::DatasetConfig dc;
  dc.window = arch.input_size;
  dc.transform = transform;
  dc.rules.substitute_half_lod = !a.no_half_lod;
  data::AssembledDataset assembled = data::assemble_dataset(dem, stats.sd, sites, dc);
  data::Dataset& ds = assembled.dataset;
  data::assign_folds(ds, folds);

  StagedOutput stage(a.out, g.force, false);
  train::TrainHooks hooks;
  if (!a.quiet)
    hooks.on_epoch = [](const train::EpochRecord& e) {
      std::cerr << "epoch " << e.epoch << " train_mse=" << raster::format_double(e.train_mse)
                << " holdout_mse=" << raster::format_double(e.holdout_mse) << '\n';
    };
  const nn::ModelParameters init = nn::build_network(arch, g.seed);
  train::TrainResult result;
  try {
    result = train::train(init, ds, folds, arch, tc, hooks);
  } catch (const train::TrainingDiverged& e) {
    e.history().write_csv(fs::path(a.out).string() + ".diverged-history.csv");
    throw;
  }

  nn::save_model(result.model, stage / "model.params");
  result.history.write_csv(stage / "history.csv");
  data::save_dataset(ds, stage / "dataset");
  {
    std::ofstream ex(stage / "exclusions.json", std::ios::binary);
    ex << assembled.report.to_json() << '\n';
  }
  {
    std::ofstream ac(stage / "arch.cfg", std::ios::binary);
    ac << arch.to_kv().to_string();
  }

  RunManifest m("train", g);
  m.extra()["config"] = resolved_options(sub);
  m.input("dem", a.dem);
  m.input("sites", a.sites);
  if (!a.arch.empty()) m.input("arch", a.arch);
  m.extra()["run"] = {{"national_sd", stats.sd},
                      {"dem", fs::absolute(a.dem).string()},
                      {"window", arch.input_size},
                      {"transform", data::to_string(transform)},
                      {"substitute_half_lod", !a.no_half_lod},
                      {"k_folds", folds.k_folds},
                      {"test_fold", folds.test_fold},
                      {"val_fold", folds.val_fold ? json(*folds.val_fold) : json(nullptr)},
                      {"monitor_fold", folds.monitor_fold()},
                      {"test_fold_monitors_early_stopping", !folds.val_fold.has_value()},
                      {"fold_seed", folds.seed},
                      {"arch_fingerprint", arch.fingerprint()},
                      {"parameter_count", parameter_count(result.model.params)},
                      {"dataset_version", kDatasetVersion}};
  m.extra()["training"] = {{"config", tc.to_kv().to_string()},
                           {"initial_train_mse", result.history.initial_train_mse},
                           {"epochs_run", result.history.epochs.size()},
                           {"best_epoch", result.history.best_epoch},
                           {"best_holdout_mse", result.history.best_holdout_mse},
                           {"stop_reason", result.history.stop_reason}};
  m.extra()["exclusions"] = json::parse(assembled.report.to_json());
  m.write(stage / "manifest.json");
  stage.commit();
  print_line("accepted_sites=" + std::to_string(ds.size()) + " excluded=" +
             std::to_string(assembled.report.excluded()));
  if (!folds.val_fold)
    print_line("note: the test fold also selected the early-stopping epoch; pass --val-fold for an untouched test fold");
  print_line("best_epoch=" + std::to_string(result.history.best_epoch) +
             " best_holdout_mse=" + raster::format_double(result.history.best_holdout_mse) +
             " stop=" + result.history.stop_reason);
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string run, out;
};

void run_eval(const EvalArgs& a, const Globals& g, const CLI::App& sub) {
  const RunInfo run = load_run(a.run);
  require_dir(run.dir / "dataset", "run dataset");
  StagedOutput stage(a.out, g.force, false);
  const nn::Model model = nn::load_model(run.dir / "model.params");
  const data::Dataset ds = data::load_dataset(run.dir / "dataset");
  const eval::FoldEvaluation fe = eval::evaluate_fold(model, ds, run.folds);

  {
    std::ofstream t(stage / "metrics.txt", std::ios::binary);
    t << fe.metrics.to_text();
  }
  {
    std::ofstream k(stage / "metrics.kv", std::ios::binary);
    k << fe.metrics.to_kv();
  }
  eval::export_scatter(fe.predicted, fe.observed, stage / "scatter.csv");
  RunManifest m("eval", g);
  m.extra()["config"] = resolved_options(sub);
  m.input("run_manifest", run.dir / "manifest.json");
  m.input("model", run.dir / "model.params");
  m.extra()["test_fold"] = run.folds.test_fold;
  m.write(stage / "manifest.json");
  stage.commit();
  std::cout << fe.metrics.to_text();
}

// ---------------------------------------------------------------- map

struct MapArgs {
  std::string run, dem, out;
  std::size_t stride = 1, batch_size = 256;
  bool png = false;
};

void run_map(const MapArgs& a, const Globals& g, const CLI::App& sub) {
  const RunInfo run = load_run(a.run);
  require_file(a.dem, "DEM");
  if (a.stride < 1) throw Error(ErrorKind::InvalidArgument, "--stride must be >= 1");
  if (a.batch_size < 1) throw Error(ErrorKind::InvalidArgument, "--batch-size must be >= 1");
  StagedOutput stage(a.out, g.force, false);
  const nn::Model model = nn::load_model(run.dir / "model.params");
  const raster::Grid dem = raster::read_ascii_grid(fs::path(a.dem));

  mapgen::PredictOptions opt;
  opt.stride = a.stride;
  opt.batch_size = a.batch_size;
  opt.threads = g.threads;
  const mapgen::CovariateGrid cov = mapgen::predict_grid(model, dem, run.national_sd, opt);
  if (!cov.warning.empty()) std::cerr << "warning: " << cov.warning << '\n';
  raster::write_ascii_grid(cov.grid, stage / "covariate.asc");
  cov.write_manifest(stage / "covariate.json");
  if (a.png) raster::render_png(cov.grid, raster::ColorRamp::viridis(), stage / "covariate.png");

  RunManifest m("map", g);
  m.extra()["config"] = resolved_options(sub);
  m.input("run_manifest", run.dir / "manifest.json");
  m.input("model", run.dir / "model.params");
  m.input("dem", a.dem);
  m.extra()["national_sd"] = run.national_sd;
  m.write(stage / "manifest.json");
  stage.commit();
  print_line("wrote covariate grid " + std::to_string(cov.grid.n_rows()) + "x" + std::to_string(cov.grid.n_cols()));
}

// ---------------------------------------------------------------- baseline

struct BaselineArgs {
  std::string dem, sites, run, transform = "identity", out;
  std::string derivatives = "slope,tri,roughness,curvature";
  bool no_half_lod = false;
  bool write_grids = false;
};

void run_baseline(const BaselineArgs& a, const Globals& g, const CLI::App& sub) {
  require_file(a.dem, "DEM");
  std::optional<RunInfo> run;
  if (!a.run.empty()) {
    run = load_run(a.run);
    require_dir(run->dir / "dataset", "run dataset");
  } else {
    require_file(a.sites, "sites");
  }
  std::vector<std::string> names;
  for (const std::string& n : split(a.derivatives, ',')) {
    const std::string t = trim(n);
    if (t.empty()) continue;
    const auto& known = baseline::derivative_names();
    if (std::find(known.begin(), known.end(), t) == known.end())
      throw Error(ErrorKind::InvalidArgument, "unknown derivative '" + t + "'");
    if (std::find(names.begin(), names.end(), t) != names.end())
      throw Error(ErrorKind::InvalidArgument, "derivative '" + t + "' listed twice");
    names.push_back(t);
  }
  const data::TargetTransform transform = data::parse_transform(a.transform);

  StagedOutput stage(a.out, g.force, false);
  const raster::Grid dem = raster::read_ascii_grid(fs::path(a.dem));
  std::vector<baseline::NamedGrid> grids;
  for (const std::string& n : names) grids.push_back({n, baseline::derivative(n, dem)});
  if (a.write_grids)
    for (const auto& ng : grids) raster::write_ascii_grid(ng.grid, stage / (ng.name + ".asc"));

  RunManifest m("baseline", g);
  m.extra()["config"] = resolved_options(sub);
  m.input("dem", a.dem);
  std::ostringstream report;
  if (run) {
    const data::Dataset ds = data::load_dataset(run->dir / "dataset");
    const baseline::HoldoutOls h = baseline::ols_holdout(ds, run->folds, grids);
    {
      std::ofstream c(stage / "coefficients.csv", std::ios::binary);
      c << baseline::coefficients_csv(h.fit);
    }
    eval::export_scatter(h.predicted, h.observed, stage / "scatter.csv");
    report << "train_r_squared=" << raster::format_double(h.fit.r_squared) << '\n'
           << "test_r_squared=" << raster::format_double(h.test_r_squared) << '\n'
           << "test_mse=" << raster::format_double(h.test_mse) << '\n'
           << "test_n=" << h.observed.size() << '\n'
           << "excluded=" << h.excluded << '\n'
           << "target_transform=" << data::to_string(ds.target_transform) << '\n';
    m.input("run_manifest", run->dir / "manifest.json");
  } else {
    const std::vector<data::Site> sites = data::read_sites_csv(fs::path(a.sites));
    std::vector<data::Site> usable;
    std::vector<double> z;
    std::size_t na = 0;
    for (const data::Site& s : sites) {
      if (!s.raw_value) {
        ++na;
        continue;
      }
      const double v = a.no_half_lod ? *s.raw_value : data::apply_detection_limit(s);
      z.push_back(data::transform_target(v, transform, s.id));
      usable.push_back(s);
    }
    const baseline::DesignMatrix dm = baseline::build_design_matrix(usable, grids);
    Eigen::VectorXd zz(static_cast<Eigen::Index>(dm.site_rows.size()));
    for (std::size_t i = 0; i < dm.site_rows.size(); ++i) zz[static_cast<Eigen::Index>(i)] = z[dm.site_rows[i]];
    const baseline::OlsFit fit = baseline::ols_fit(dm.x, zz, dm.columns);
    {
      std::ofstream c(stage / "coefficients.csv", std::ios::binary);
      c << baseline::coefficients_csv(fit);
    }
    report << "r_squared=" << raster::format_double(fit.r_squared) << '\n'
           << "n=" << dm.site_rows.size() << '\n'
           << "excluded_na=" << na << '\n'
           << "excluded_nodata=" << dm.excluded << '\n'
           << "target_transform=" << data::to_string(transform) << '\n';
    m.input("sites", a.sites);
  }
  {
    std::ofstream r(stage / "report.txt", std::ios::binary);
    r << report.str();
  }
  m.write(stage / "manifest.json");
  stage.commit();
  std::cout << report.str();
}

// ---------------------------------------------------------------- krige

struct KrigeArgs {
  std::string run, sites, like, dem, out;
  std::size_t stride = 1;
  std::size_t bins = 15;
  double max_lag = 0.0;
};

/// A grid file, or a command's output directory holding `default_name`.
fs::path grid_in(const std::string& arg, const char* default_name) {
  fs::path p(arg);
  if (fs::is_directory(p)) p /= default_name;
  require_file(p, default_name);
  return p;
}

void run_krige(const KrigeArgs& a, const Globals& g, const CLI::App& sub) {
  const RunInfo run = load_run(a.run);
  require_file(a.sites, "sites");
  std::string dem_path = a.dem;
  if (dem_path.empty()) dem_path = run.manifest.at("run").at("dem").get<std::string>();
  require_file(dem_path, "DEM");
  const fs::path like = a.like.empty() ? fs::path() : grid_in(a.like, "covariate.asc");
  if (a.bins < 3) throw Error(ErrorKind::InvalidArgument, "--bins must be >= 3");
  if (a.stride < 1) throw Error(ErrorKind::InvalidArgument, "--stride must be >= 1");
  if (a.max_lag < 0) throw Error(ErrorKind::InvalidArgument, "--max-lag must be >= 0");

  StagedOutput stage(a.out, g.force, false);
  const nn::Model model = nn::load_model(run.dir / "model.params");
  const raster::Grid dem = raster::read_ascii_grid(fs::path(dem_path));
  const std::vector<data::Site> sites = data::read_sites_csv(fs::path(a.sites));
  data::DatasetConfig dc;
  dc.window = run.window;
  dc.transform = run.transform;
  dc.rules.substitute_half_lod = run.substitute_half_lod;
  const data::AssembledDataset assembled = data::assemble_dataset(dem, run.national_sd, sites, dc);
  const data::Dataset& ds = assembled.dataset;

  std::vector<const data::Patch*> patches;
  for (const auto& p : ds.patches) patches.push_back(&p);
  const std::vector<double> d = nn::predict(model, patches);
  const std::vector<double> r = geostat::residuals(ds.targets, d);
  std::vector<geostat::Point> pts;
  for (const data::Site& s : ds.sites) pts.push_back({s.easting, s.northing});

  double max_lag = a.max_lag;
  if (max_lag == 0.0) {
    double e0 = pts[0].easting, e1 = e0, n0 = pts[0].northing, n1 = n0;
    for (const auto& p : pts) {
      e0 = std::min(e0, p.easting), e1 = std::max(e1, p.easting);
      n0 = std::min(n0, p.northing), n1 = std::max(n1, p.northing);
    }
    max_lag = 0.5 * std::hypot(e1 - e0, n1 - n0);
  }
  const geostat::EmpiricalVariogram ev =
      geostat::empirical_variogram(pts, r, max_lag / static_cast<double>(a.bins), max_lag);
  const geostat::VariogramModel vm = geostat::fit_exponential(ev);
  const geostat::OrdinaryKriging ok(pts, r, vm);

  raster::Grid geometry = a.like.empty() ? mapgen::strided_geometry(dem, a.stride, 0.0)
                                         : raster::read_ascii_grid(like).with_same_geometry(0.0);
  const raster::Grid field = geostat::krige_residual_grid(ok, geometry, g.threads);
  raster::write_ascii_grid(field, stage / "residual.asc");
  {
    std::ofstream v(stage / "variogram.csv", std::ios::binary);
    ev.write_csv(v);
  }
  {
    std::ofstream rc(stage / "residuals.csv", std::ios::binary);
    rc << "site_id,easting,northing,target,covariate,residual\n";
    for (std::size_t i = 0; i < ds.size(); ++i)
      rc << ds.sites[i].id << ',' << raster::format_double(pts[i].easting) << ','
         << raster::format_double(pts[i].northing) << ',' << raster::format_double(ds.targets[i]) << ','
         << raster::format_double(d[i]) << ',' << raster::format_double(r[i]) << '\n';
  }
  double mean_r = 0.0;
  for (double x : r) mean_r += x;
  mean_r /= static_cast<double>(r.size());
  const json model_json = {{"family", "exponential"},
                           {"nugget", vm.nugget},
                           {"partial_sill", vm.partial_sill},
                           {"range", vm.range},
                           {"residual_mean", mean_r},
                           {"n_sites", ds.size()},
                           {"max_lag", max_lag},
                           {"bin_width", ev.bin_width}};
  {
    std::ofstream vj(stage / "variogram.json", std::ios::binary);
    vj << model_json.dump(2) << '\n';
  }
  RunManifest m("krige", g);
  m.extra()["config"] = resolved_options(sub);
  m.input("run_manifest", run.dir / "manifest.json");
  m.input("model", run.dir / "model.params");
  m.input("sites", a.sites);
  m.input("dem", dem_path);
  if (!a.like.empty()) m.input("template", like.string());
  m.extra()["variogram"] = model_json;
  m.extra()["exclusions"] = json::parse(assembled.report.to_json());
  m.write(stage / "manifest.json");
  stage.commit();
  print_line("nugget=" + raster::format_double(vm.nugget) + " partial_sill=" +
             raster::format_double(vm.partial_sill) + " range=" + raster::format_double(vm.range));
}

// ---------------------------------------------------------------- compose

struct ComposeArgs {
  std::string cov, resid, out;
  bool png = false;
};

void run_compose(const ComposeArgs& a, const Globals& g, const CLI::App& sub) {
  const fs::path cov_path = grid_in(a.cov, "covariate.asc");
  const fs::path resid_path = grid_in(a.resid, "residual.asc");
  const raster::Grid cov = raster::read_ascii_grid(cov_path);
  const raster::Grid resid = raster::read_ascii_grid(resid_path);
  if (!cov.same_geometry(resid))
    throw Error(ErrorKind::Shape, "covariate and residual grids have different georeferencing");
  StagedOutput stage(a.out, g.force, false);
  const raster::Grid z = mapgen::compose_prediction(cov, resid);
  raster::write_ascii_grid(z, stage / "prediction.asc");
  if (a.png) raster::render_png(z, raster::ColorRamp::viridis(), stage / "prediction.png");
  RunManifest m("compose", g);
  m.extra()["config"] = resolved_options(sub);
  m.input("covariate", cov_path);
  m.input("residual", resid_path);
  m.write(stage / "manifest.json");
  stage.commit();
  print_line("wrote prediction grid " + std::to_string(z.n_rows()) + "x" + std::to_string(z.n_cols()));
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::string version_text() {
  std::ostringstream o;
  o << "deepcov " << kToolVersion << " (params format " << nn::kParamFormatVersion << ", dataset format "
    << kDatasetVersion << ", manifest format " << kManifestVersion << ")";
  return o.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned terrain-texture covariates, baselines and residual kriging"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  Globals g;
  app.add_option("--seed", g.seed, "root seed for every random stream");
  app.add_option("--threads", g.threads, "worker threads for map and krige")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "replace an existing output");
  app.add_option("--config", g.config_path, "flat key=value file; command-line flags win");
  app.set_version_flag("--version", version_text());

  IngestArgs ingest;
  CLI::App* c_ingest = app.add_subcommand("ingest", "read, optionally block-aggregate, and rewrite a DEM");
  c_ingest->add_option("--dem", ingest.dem, "input ESRI ASCII grid")->required();
  c_ingest->add_option("--aggregate", ingest.aggregate, "block-mean factor");
  c_ingest->add_option("--out", ingest.out, "output grid path")->required();

  SynthArgs syn;
  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic terrain and site set");
  c_synth->add_option("--size", syn.size, "cells per side (power of two)");
  c_synth->add_option("--hurst", syn.hurst, "Hurst exponent in (0, 1)");
  c_synth->add_option("--rule", syn.rule, "tri_nonlinear | slope_linear | mixture");
  c_synth->add_option("--sites", syn.sites, "number of sites");
  c_synth->add_option("--noise", syn.noise, "target noise SD");
  c_synth->add_option("--contrast", syn.contrast, "SD of the log roughness-amplitude field");
  c_synth->add_option("--relief", syn.relief, "elevation SD in metres before modulation");
  c_synth->add_option("--cell-size", syn.cell_size, "cell size in metres");
  c_synth->add_option("--window", syn.window, "patch window the sites must admit");
  c_synth->add_flag("--demo", syn.demo, "start from the demo recipe (explicit flags still override)");
  c_synth->add_option("--out", syn.out, "output directory")->required();

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train", "assemble patches and train the covariate network");
  c_train->add_option("--dem", tr.dem, "DEM grid")->required();
  c_train->add_option("--sites", tr.sites, "sites CSV")->required();
  c_train->add_option("--transform", tr.transform, "identity | log");
  c_train->add_option("--arch", tr.arch, "architecture file (default: standard network)");
  c_train->add_option("--folds", tr.folds, "number of folds");
  c_train->add_option("--test-fold", tr.test_fold, "held-out fold");
  c_train->add_option("--val-fold", tr.val_fold, "separate early-stopping fold (default: the test fold)");
  c_train->add_option("--batch-size", tr.batch_size, "mini-batch size");
  c_train->add_option("--epochs", tr.epochs, "maximum epochs");
  c_train->add_option("--lr", tr.lr, "ADAM learning rate");
  c_train->add_option("--patience", tr.patience, "early-stopping patience in epochs, or inf");
  c_train->add_flag("--no-half-lod", tr.no_half_lod, "keep censored values instead of substituting half the limit");
  c_train->add_flag("--quiet", tr.quiet, "no per-epoch progress");
  c_train->add_option("--out", tr.out, "run directory")->required();

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "score a run on its test fold");
  c_eval->add_option("--run", ev.run, "run directory")->required();
  c_eval->add_option("--out", ev.out, "output directory")->required();

  MapArgs mp;
  CLI::App* c_map = app.add_subcommand("map", "predict the covariate over a grid");
  c_map->add_option("--run", mp.run, "run directory")->required();
  c_map->add_option("--dem", mp.dem, "DEM grid")->required();
  c_map->add_option("--stride", mp.stride, "predict every stride-th cell");
  c_map->add_option("--batch-size", mp.batch_size, "patches per forward pass");
  c_map->add_flag("--png", mp.png, "also render a PNG");
  c_map->add_option("--out", mp.out, "output directory")->required();

  BaselineArgs bl;
  CLI::App* c_base = app.add_subcommand("baseline", "OLS on standard terrain derivatives");
  c_base->add_option("--dem", bl.dem, "DEM grid")->required();
  c_base->add_option("--sites", bl.sites, "sites CSV (in-sample fit)");
  c_base->add_option("--run", bl.run, "run directory: fit on its training folds, score its test fold");
  c_base->add_option("--transform", bl.transform, "identity | log (sites mode)");
  c_base->add_option("--derivatives", bl.derivatives, "comma-separated subset of slope,tri,roughness,curvature");
  c_base->add_flag("--no-half-lod", bl.no_half_lod, "keep censored values instead of substituting half the limit");
  c_base->add_flag("--write-grids", bl.write_grids, "also write each derivative grid");
  c_base->add_option("--out", bl.out, "output directory")->required();

  KrigeArgs kg;
  CLI::App* c_krige = app.add_subcommand("krige", "variogram and ordinary kriging of covariate residuals");
  c_krige->add_option("--run", kg.run, "run directory")->required();
  c_krige->add_option("--sites", kg.sites, "sites CSV")->required();
  c_krige->add_option("--dem", kg.dem, "DEM grid (default: the run's DEM)");
  c_krige->add_option("--like", kg.like, "grid whose geometry the kriged field copies");
  c_krige->add_option("--stride", kg.stride, "node stride when --like is absent");
  c_krige->add_option("--bins", kg.bins, "variogram bins");
  c_krige->add_option("--max-lag", kg.max_lag, "variogram max lag in metres (0: half the site extent)");
  c_krige->add_option("--out", kg.out, "output directory")->required();

  ComposeArgs cp;
  CLI::App* c_compose = app.add_subcommand("compose", "covariate map plus kriged residual field");
  c_compose->add_option("--cov", cp.cov, "covariate grid or map output directory")->required();
  c_compose->add_option("--resid", cp.resid, "residual grid or krige output directory")->required();
  c_compose->add_flag("--png", cp.png, "also render a PNG");
  c_compose->add_option("--out", cp.out, "output directory")->required();

  try {
    // Required options may come from the config file, so requirement checks
    // run after it has been merged.
    std::map<CLI::App*, std::vector<CLI::Option*>> required;
    for (CLI::App* sub : app.get_subcommands({}))
      for (CLI::Option* opt : sub->get_options())
        if (opt->get_required()) {
          required[sub].push_back(opt);
          opt->required(false);
        }
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    if (!g.config_path.empty()) {
      require_file(g.config_path, "config");
      const KvConfig kv = KvConfig::load(g.config_path);
      apply_config(app, kv);
      apply_config(*sub, kv);
    }
    for (CLI::Option* opt : required[sub])
      if (opt->count() == 0)
        throw CLI::RequiredError(opt->get_name());

    const std::string name = sub->get_name();
    if (name == "ingest") run_ingest(ingest, g, *sub);
    else if (name == "synth") run_synth(syn, g, *sub);
    else if (name == "train") run_train(tr, g, *sub);
    else if (name == "eval") run_eval(ev, g, *sub);
    else if (name == "map") run_map(mp, g, *sub);
    else if (name == "baseline") run_baseline(bl, g, *sub);
    else if (name == "krige") run_krige(kg, g, *sub);
    else if (name == "compose") run_compose(cp, g, *sub);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: io: " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << '\n';
    return 1;
  }
}
