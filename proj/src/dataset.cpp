#include "deepcov/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "deepcov/error.hpp"
#include "deepcov/kvconfig.hpp"
#include "deepcov/rng.hpp"

namespace deepcov::data {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

using raster::format_double;

std::string to_string(TargetTransform t) { return t == TargetTransform::Log ? "log" : "identity"; }

TargetTransform parse_transform(const std::string& text) {
  if (text == "log") return TargetTransform::Log;
  if (text == "identity" || text == "none") return TargetTransform::Identity;
  throw Error(ErrorKind::InvalidArgument, "unknown target transform '" + text + "'");
}

namespace {

bool parse_flag(const std::string& text, std::size_t line) {
  if (text == "1" || text == "true" || text == "TRUE" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "FALSE" || text == "no" || text.empty()) return false;
  throw Error(ErrorKind::Parse, "sites line " + std::to_string(line) + ": bad below_lod flag '" + text + "'");
}

}  // namespace

std::vector<Site> read_sites_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw Error(ErrorKind::Parse, "sites csv is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (split(line, ',') != std::vector<std::string>{"easting", "northing", "value", "below_lod", "lod"})
    throw Error(ErrorKind::Parse, "sites line 1: expected header easting,northing,value,below_lod,lod");

  std::vector<Site> sites;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5)
      throw Error(ErrorKind::Parse, "sites line " + std::to_string(line_no) + ": expected 5 fields");
    const std::string where = "sites line " + std::to_string(line_no);
    Site s;
    s.id = "site#" + std::to_string(sites.size());
    s.easting = parse_double(f[0], where + " easting");
    s.northing = parse_double(f[1], where + " northing");
    if (!std::isfinite(s.easting) || !std::isfinite(s.northing))
      throw Error(ErrorKind::Parse, where + ": coordinates must be finite");
    if (!(f[2].empty() || f[2] == "NA" || f[2] == "na" || f[2] == "NaN"))
      s.raw_value = parse_double(f[2], where + " value");
    s.below_detection = parse_flag(f[3], line_no);
    s.lower_detection_limit = f[4].empty() || f[4] == "NA" ? 0.0 : parse_double(f[4], where + " lod");
    if (s.below_detection && !(s.lower_detection_limit > 0.0))
      throw Error(ErrorKind::Parse, where + ": below_lod set but lod is not positive");
    sites.push_back(std::move(s));
  }
  return sites;
}

std::vector<Site> read_sites_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open sites '" + path.string() + "'");
  return read_sites_csv(in);
}

void write_sites_csv(std::span<const Site> sites, std::ostream& out) {
  out << "easting,northing,value,below_lod,lod\n";
  for (const Site& s : sites) {
    out << format_double(s.easting) << ',' << format_double(s.northing) << ','
        << (s.raw_value ? format_double(*s.raw_value) : std::string("NA")) << ','
        << (s.below_detection ? 1 : 0) << ',' << format_double(s.lower_detection_limit) << '\n';
  }
}

void write_sites_csv(std::span<const Site> sites, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write sites '" + path.string() + "'");
  write_sites_csv(sites, out);
}

double apply_detection_limit(const Site& site) {
  if (site.below_detection) return site.lower_detection_limit / 2.0;
  if (!site.raw_value)
    throw Error(ErrorKind::InvalidArgument, "site " + site.id + " has no value");
  return *site.raw_value;
}

double transform_target(double value, TargetTransform transform, const std::string& site_id) {
  if (transform == TargetTransform::Identity) return value;
  if (!(value > 0.0))
    throw Error(ErrorKind::Rejected, "non-positive value " + format_double(value) +
                                         " under log transform at " +
                                         (site_id.empty() ? std::string("<unnamed site>") : site_id));
  return std::log(value);
}

RawPatch extract_patch_at(const raster::Grid& grid, long row, long col, std::size_t k) {
  RawPatch out;
  const long first = window_first_offset(k);
  const long r0 = row + first, c0 = col + first;
  const long sk = static_cast<long>(k);
  if (r0 < 0 || c0 < 0 || r0 + sk > static_cast<long>(grid.n_rows()) ||
      c0 + sk > static_cast<long>(grid.n_cols())) {
    out.status = PatchStatus::OffGrid;
    return out;
  }
  out.values.resize(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double v = grid.at(static_cast<std::size_t>(r0) + i, static_cast<std::size_t>(c0) + j);
      if (grid.is_nodata_value(v)) {
        out.status = PatchStatus::Nodata;
        out.values.clear();
        return out;
      }
      out.values[i * k + j] = v;
    }
  }
  return out;
}

RawPatch extract_patch(const raster::Grid& grid, double easting, double northing, std::size_t k) {
  if (!std::isfinite(easting) || !std::isfinite(northing)) return RawPatch{PatchStatus::OffGrid, {}};
  long row = 0, col = 0;
  grid.locate_unchecked(easting, northing, row, col);
  return extract_patch_at(grid, row, col, k);
}

Patch normalize_patch(std::span<const double> raw, std::size_t k, double national_sd,
                      double center_easting, double center_northing) {
  if (!(national_sd > 0.0) || !std::isfinite(national_sd))
    throw Error(ErrorKind::InvalidArgument, "national sd must be positive");
  if (k == 0 || raw.size() != k * k) throw Error(ErrorKind::Shape, "raw patch is not k x k");
  const std::size_t c = window_center_index(k);
  const double center = raw[c * k + c];
  Patch p{k, std::vector<double>(raw.size()), center_easting, center_northing};
  for (std::size_t i = 0; i < raw.size(); ++i) p.values[i] = (raw[i] - center) / national_sd;
  return p;
}

std::string ExclusionReport::to_json() const {
  nlohmann::ordered_json j;
  j["total"] = total;
  j["accepted"] = accepted;
  j["excluded"] = {{"na_target", na_target},
                   {"off_grid", off_grid},
                   {"nodata_window", nodata_window},
                   {"non_positive_log", non_positive_log}};
  j["non_positive_ids"] = non_positive_ids;
  return j.dump(2) + "\n";
}

void Dataset::validate() const {
  const std::size_t n = targets.size();
  if (patches.size() != n || sites.size() != n)
    throw Error(ErrorKind::Shape, "dataset lists have unequal lengths");
  for (double t : targets)
    if (!std::isfinite(t)) throw Error(ErrorKind::InvalidArgument, "dataset target is not finite");
  for (const Patch& p : patches)
    if (p.k != window || p.values.size() != window * window)
      throw Error(ErrorKind::Shape, "dataset patch has wrong window size");
  if (!fold_labels.empty()) {
    if (fold_labels.size() != n) throw Error(ErrorKind::Shape, "fold labels length mismatch");
    for (int f : fold_labels)
      if (f < 0 || static_cast<std::size_t>(f) >= k_folds)
        throw Error(ErrorKind::InvalidArgument, "fold label out of range");
  }
}

AssembledDataset assemble_dataset(const raster::Grid& grid, double national_sd,
                                  std::span<const Site> sites, const DatasetConfig& config) {
  if (config.window == 0) throw Error(ErrorKind::InvalidArgument, "window size must be positive");
  AssembledDataset out;
  Dataset& ds = out.dataset;
  ExclusionReport& rep = out.report;
  ds.window = config.window;
  ds.target_transform = config.transform;
  ds.national_sd = national_sd;
  rep.total = sites.size();

  for (const Site& site : sites) {
    double value = 0.0;
    if (site.below_detection && config.rules.substitute_half_lod) {
      value = apply_detection_limit(site);
    } else if (site.raw_value) {
      value = *site.raw_value;
    } else {
      ++rep.na_target;
      continue;
    }
    if (config.transform == TargetTransform::Log && !(value > 0.0)) {
      ++rep.non_positive_log;
      rep.non_positive_ids.push_back(site.id);
      continue;
    }
    RawPatch raw = extract_patch(grid, site.easting, site.northing, config.window);
    if (raw.status == PatchStatus::OffGrid) {
      ++rep.off_grid;
      continue;
    }
    if (raw.status == PatchStatus::Nodata) {
      ++rep.nodata_window;
      continue;
    }
    long row = 0, col = 0;
    grid.locate_unchecked(site.easting, site.northing, row, col);
    ds.patches.push_back(normalize_patch(raw.values, config.window, national_sd,
                                         grid.cell_center_easting(static_cast<std::size_t>(col)),
                                         grid.cell_center_northing(static_cast<std::size_t>(row))));
    ds.targets.push_back(transform_target(value, config.transform, site.id));
    ds.sites.push_back(site);
  }
  rep.accepted = ds.size();
  if (rep.accepted == 0)
    throw Error(ErrorKind::Rejected, "no sites accepted (total " + std::to_string(rep.total) + ")");
  return out;
}

std::vector<int> split_folds(std::size_t n, std::size_t k_folds, std::uint64_t seed) {
  if (k_folds < 2) throw Error(ErrorKind::InvalidArgument, "need at least 2 folds");
  if (n < k_folds)
    throw Error(ErrorKind::InvalidArgument, "cannot split " + std::to_string(n) + " rows into " +
                                                std::to_string(k_folds) + " folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, {streams::kFolds});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[perm[i]] = static_cast<int>(i % k_folds);
  return labels;
}

void FoldAssignment::validate() const {
  if (k_folds < 2) throw Error(ErrorKind::InvalidArgument, "need at least 2 folds");
  if (test_fold >= k_folds)
    throw Error(ErrorKind::InvalidArgument, "test fold " + std::to_string(test_fold) +
                                                " out of range for " + std::to_string(k_folds) + " folds");
  if (val_fold) {
    if (*val_fold >= k_folds)
      throw Error(ErrorKind::InvalidArgument, "validation fold out of range");
    if (*val_fold == test_fold)
      throw Error(ErrorKind::InvalidArgument, "validation fold must differ from the test fold");
    if (k_folds < 3) throw Error(ErrorKind::InvalidArgument, "a validation fold needs at least 3 folds");
  }
}

void assign_folds(Dataset& dataset, const FoldAssignment& folds) {
  folds.validate();
  dataset.k_folds = folds.k_folds;
  dataset.fold_labels = split_folds(dataset.size(), folds.k_folds, folds.seed);
}

std::vector<std::size_t> rows_in_fold(const Dataset& dataset, std::size_t fold) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dataset.fold_labels.size(); ++i)
    if (static_cast<std::size_t>(dataset.fold_labels[i]) == fold) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> training_rows(const Dataset& dataset, const FoldAssignment& folds) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dataset.fold_labels.size(); ++i)
    if (folds.is_training_fold(dataset.fold_labels[i])) rows.push_back(i);
  return rows;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  std::filesystem::create_directories(dir);

  {
    std::ofstream bin(dir / "patches.bin", std::ios::binary);
    if (!bin) throw Error(ErrorKind::Io, "cannot write patches.bin");
    for (const Patch& p : dataset.patches)
      bin.write(reinterpret_cast<const char*>(p.values.data()),
                static_cast<std::streamsize>(p.values.size() * sizeof(double)));
    if (!bin) throw Error(ErrorKind::Io, "failed writing patches.bin");
  }
  {
    std::ofstream csv(dir / "targets.csv", std::ios::binary);
    csv << "site_id,easting,northing,raw_value,below_lod,lod,center_easting,center_northing,target\n";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const Site& s = dataset.sites[i];
      const Patch& p = dataset.patches[i];
      csv << s.id << ',' << format_double(s.easting) << ',' << format_double(s.northing) << ','
          << (s.raw_value ? format_double(*s.raw_value) : std::string("NA")) << ','
          << (s.below_detection ? 1 : 0) << ',' << format_double(s.lower_detection_limit) << ','
          << format_double(p.center_easting) << ',' << format_double(p.center_northing) << ','
          << format_double(dataset.targets[i]) << '\n';
    }
  }
  {
    std::ofstream csv(dir / "folds.csv", std::ios::binary);
    csv << "row,fold\n";
    for (std::size_t i = 0; i < dataset.fold_labels.size(); ++i)
      csv << i << ',' << dataset.fold_labels[i] << '\n';
  }
  nlohmann::ordered_json m;
  m["format"] = "deepcov-dataset";
  m["version"] = kDatasetFormatVersion;
  m["rows"] = dataset.size();
  m["window"] = dataset.window;
  m["target_transform"] = to_string(dataset.target_transform);
  m["national_sd"] = dataset.national_sd;
  m["k_folds"] = dataset.k_folds;
  m["patches"] = {{"file", "patches.bin"}, {"dtype", "f64le"}, {"shape", {dataset.size(), dataset.window, dataset.window}}};
  std::ofstream(dir / "manifest.json", std::ios::binary) << m.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw Error(ErrorKind::Io, "missing dataset manifest in '" + dir.string() + "'");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(mf);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::Format, std::string("dataset manifest: ") + e.what());
  }
  if (m.value("format", "") != "deepcov-dataset" || m.value("version", -1) != kDatasetFormatVersion)
    throw Error(ErrorKind::Format, "unsupported dataset manifest format/version");

  Dataset ds;
  const std::size_t n = m.at("rows").get<std::size_t>();
  ds.window = m.at("window").get<std::size_t>();
  ds.target_transform = parse_transform(m.at("target_transform").get<std::string>());
  ds.national_sd = m.at("national_sd").get<double>();
  ds.k_folds = m.at("k_folds").get<std::size_t>();

  const std::size_t kk = ds.window * ds.window;
  std::ifstream bin(dir / "patches.bin", std::ios::binary);
  if (!bin) throw Error(ErrorKind::Io, "missing patches.bin");
  ds.patches.resize(n);
  for (Patch& p : ds.patches) {
    p.k = ds.window;
    p.values.resize(kk);
    bin.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(kk * sizeof(double)));
    if (!bin) throw Error(ErrorKind::Format, "patches.bin is truncated");
  }

  std::ifstream tc(dir / "targets.csv");
  std::string line;
  std::getline(tc, line);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(tc, line)) throw Error(ErrorKind::Format, "targets.csv is truncated");
    const auto f = split(line, ',');
    if (f.size() != 9) throw Error(ErrorKind::Format, "targets.csv row " + std::to_string(i) + " malformed");
    Site s;
    s.id = f[0];
    s.easting = parse_double(f[1], "targets.csv easting");
    s.northing = parse_double(f[2], "targets.csv northing");
    if (f[3] != "NA") s.raw_value = parse_double(f[3], "targets.csv raw_value");
    s.below_detection = f[4] == "1";
    s.lower_detection_limit = parse_double(f[5], "targets.csv lod");
    ds.patches[i].center_easting = parse_double(f[6], "targets.csv center_easting");
    ds.patches[i].center_northing = parse_double(f[7], "targets.csv center_northing");
    ds.targets.push_back(parse_double(f[8], "targets.csv target"));
    ds.sites.push_back(std::move(s));
  }

  std::ifstream fc(dir / "folds.csv");
  std::getline(fc, line);
  while (std::getline(fc, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 2) throw Error(ErrorKind::Format, "folds.csv malformed");
    ds.fold_labels.push_back(static_cast<int>(parse_int(f[1], "folds.csv fold")));
  }
  ds.validate();
  return ds;
}

}  // namespace deepcov::data
