#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepcov/raster.hpp"

namespace deepcov::geostat {

struct Point {
  double easting = 0.0;
  double northing = 0.0;
};

double distance(const Point& a, const Point& b);

/// r = z - d, element-wise. The mean is not removed.
std::vector<double> residuals(std::span<const double> targets, std::span<const double> covariate);

struct EmpiricalVariogram {
  std::vector<double> bin_centers;
  std::vector<double> semivariance;  // 0 for empty bins
  std::vector<std::size_t> pair_counts;
  double bin_width = 0.0;
  double max_lag = 0.0;

  std::size_t non_empty_bins() const;
  /// `lag,gamma,pairs`
  void write_csv(std::ostream& out) const;
};

/// Matheron estimator: gamma(h) = sum (r_i - r_j)^2 / (2 N(h)) over the
/// unordered pairs whose separation falls in each bin [b*w, (b+1)*w).
/// Pairs beyond max_lag are ignored; a pair exactly at max_lag goes in the last bin.
EmpiricalVariogram empirical_variogram(std::span<const Point> sites, std::span<const double> values,
                                       double bin_width, double max_lag);

/// gamma(h) = nugget + partial_sill * (1 - exp(-h / range)) between distinct
/// observations, gamma = 0 for an observation with itself.
struct VariogramModel {
  double nugget = 0.0;
  double partial_sill = 0.0;
  double range = 1.0;

  double gamma(double h) const;
  double sill() const { return nugget + partial_sill; }
};

struct FitOptions {
  /// Extra range candidate for the profile search (e.g. a prior guess).
  std::optional<double> initial_range;
  /// Range reported for a degenerate (all-zero) variogram; defaults to max_lag / 3.
  std::optional<double> default_range;
};

/// Weighted (pair-count) least-squares fit with non-negative nugget and sill.
/// For a fixed range the model is linear in (nugget, sill), so those are
/// solved exactly; the range is profiled by a log-spaced scan followed by
/// golden-section refinement.
VariogramModel fit_exponential(const EmpiricalVariogram& ev, const FitOptions& options = {});

struct KrigingEstimate {
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> weights;
  double lagrange = 0.0;
  bool variance_clamped = false;
};

/// Global-neighbourhood ordinary kriging. The (n+1) x (n+1) system is
/// assembled and factorised once and reused for every query.
class OrdinaryKriging {
 public:
  OrdinaryKriging(std::vector<Point> sites, std::vector<double> values, VariogramModel model);

  /// Weights, Lagrange multiplier, mean and kriging variance at one query.
  KrigingEstimate estimate(const Point& query) const;
  /// Mean only, via the dual form (O(n) per query).
  double mean(const Point& query) const;

  std::size_t size() const { return sites_.size(); }
  const VariogramModel& model() const { return model_; }

 private:
  Eigen::VectorXd rhs(const Point& query) const;

  std::vector<Point> sites_;
  std::vector<double> values_;
  VariogramModel model_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  Eigen::VectorXd dual_;
};

std::vector<KrigingEstimate> ordinary_krige(std::span<const Point> sites, std::span<const double> values,
                                            const VariogramModel& model, std::span<const Point> queries);

/// Kriged mean at every cell centre of `geometry`.
raster::Grid krige_residual_grid(const OrdinaryKriging& kriging, const raster::Grid& geometry,
                                 std::size_t threads = 1);

}  // namespace deepcov::geostat
