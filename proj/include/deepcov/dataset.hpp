#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepcov/raster.hpp"

namespace deepcov::data {

/// One point sample. `raw_value` is empty for NA records.
struct Site {
  std::string id;
  double easting = 0.0;
  double northing = 0.0;
  std::optional<double> raw_value;
  bool below_detection = false;
  double lower_detection_limit = 0.0;
};

enum class TargetTransform { Identity, Log };

std::string to_string(TargetTransform t);
TargetTransform parse_transform(const std::string& text);

/// Reads `easting,northing,value,below_lod,lod` CSV. `NA` or an empty value
/// marks a missing target. Site ids are `site#<row>` with rows counted from 0.
std::vector<Site> read_sites_csv(std::istream& in);
std::vector<Site> read_sites_csv(const std::filesystem::path& path);
void write_sites_csv(std::span<const Site> sites, std::ostream& out);
void write_sites_csv(std::span<const Site> sites, const std::filesystem::path& path);

/// Censored values become half the lower detection limit.
double apply_detection_limit(const Site& site);

/// Natural log or identity. Non-positive input under Log throws, naming the site.
double transform_target(double value, TargetTransform transform, const std::string& site_id = "");

/// Window convention shared by training and map generation: for window size k
/// the cell offsets run from -floor(k/2) to -floor(k/2) + k - 1 around the
/// centre cell, which sits at index (floor(k/2), floor(k/2)).
constexpr long window_first_offset(std::size_t k) { return -static_cast<long>(k / 2); }
constexpr std::size_t window_center_index(std::size_t k) { return k / 2; }

enum class PatchStatus { Ok, OffGrid, Nodata };

struct RawPatch {
  PatchStatus status = PatchStatus::Ok;
  std::vector<double> values;  // k*k row-major, north row first; empty unless Ok
};

/// Raw k x k elevations around the cell at (row, col).
RawPatch extract_patch_at(const raster::Grid& grid, long row, long col, std::size_t k);
/// Raw k x k elevations around the cell containing (easting, northing).
RawPatch extract_patch(const raster::Grid& grid, double easting, double northing, std::size_t k);

struct Patch {
  std::size_t k = 0;
  std::vector<double> values;
  double center_easting = 0.0;
  double center_northing = 0.0;

  double at(std::size_t i, std::size_t j) const { return values[i * k + j]; }
};

/// (raw - raw[centre]) / national_sd.
Patch normalize_patch(std::span<const double> raw, std::size_t k, double national_sd,
                      double center_easting = 0.0, double center_northing = 0.0);

struct ElementRules {
  bool substitute_half_lod = true;
};

struct DatasetConfig {
  std::size_t window = 32;
  TargetTransform transform = TargetTransform::Identity;
  ElementRules rules{};
};

struct ExclusionReport {
  std::size_t total = 0;
  std::size_t accepted = 0;
  std::size_t na_target = 0;
  std::size_t off_grid = 0;
  std::size_t nodata_window = 0;
  std::size_t non_positive_log = 0;
  std::vector<std::string> non_positive_ids;

  std::size_t excluded() const { return na_target + off_grid + nodata_window + non_positive_log; }
  std::string to_json() const;
};

struct Dataset {
  std::size_t window = 0;
  std::vector<Patch> patches;
  std::vector<double> targets;  // transformed scale
  std::vector<Site> sites;
  TargetTransform target_transform = TargetTransform::Identity;
  double national_sd = 1.0;
  std::size_t k_folds = 0;
  std::vector<int> fold_labels;

  std::size_t size() const { return targets.size(); }
  /// Checks equal list lengths, finite targets and fold label range.
  void validate() const;
};

struct AssembledDataset {
  Dataset dataset;
  ExclusionReport report;
};

/// One record per accepted site, input order preserved. Throws when nothing
/// is accepted.
AssembledDataset assemble_dataset(const raster::Grid& grid, double national_sd,
                                  std::span<const Site> sites, const DatasetConfig& config);

/// Fold labels from a seeded permutation; fold sizes differ by at most one.
std::vector<int> split_folds(std::size_t n, std::size_t k_folds, std::uint64_t seed);

struct FoldAssignment {
  std::size_t k_folds = 10;
  std::size_t test_fold = 9;
  std::uint64_t seed = 1;
  /// Optional separate early-stopping fold carved out of the training folds.
  std::optional<std::size_t> val_fold;

  void validate() const;
  std::size_t monitor_fold() const { return val_fold.value_or(test_fold); }
  bool is_training_fold(int fold) const {
    return static_cast<std::size_t>(fold) != test_fold &&
           (!val_fold || static_cast<std::size_t>(fold) != *val_fold);
  }
};

void assign_folds(Dataset& dataset, const FoldAssignment& folds);

std::vector<std::size_t> rows_in_fold(const Dataset& dataset, std::size_t fold);
std::vector<std::size_t> training_rows(const Dataset& dataset, const FoldAssignment& folds);

/// Directory layout: manifest.json, patches.bin (little-endian f64), targets.csv, folds.csv.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

inline constexpr int kDatasetFormatVersion = 1;

}  // namespace deepcov::data
