#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepcov/dataset.hpp"
#include "deepcov/raster.hpp"

namespace deepcov::baseline {

// 3x3 terrain derivatives. Neighbours are labelled
//
//   a b c      (row above = north)
//   d e f
//   g h i
//
// with L the cell size. Any missing neighbour (off-grid or nodata) gives nodata.

/// Horn: dz/dx = ((c + 2f + i) - (a + 2d + g)) / 8L, dz/dy = ((a + 2b + c) - (g + 2h + i)) / 8L,
/// slope = sqrt(dz/dx^2 + dz/dy^2) as rise/run.
raster::Grid slope(const raster::Grid& dem);

/// Riley terrain ruggedness: sqrt(sum over the 8 neighbours of (z_n - e)^2).
raster::Grid tri(const raster::Grid& dem);

/// max - min over the 3x3 window.
raster::Grid roughness(const raster::Grid& dem);

/// Zevenbergen-Thorne: D = ((d + f)/2 - e) / L^2, E = ((b + h)/2 - e) / L^2,
/// curvature = 2(D + E), the Laplacian of the fitted quadratic (positive in hollows).
raster::Grid curvature(const raster::Grid& dem);

/// Dispatch by name: slope, tri, roughness, curvature.
raster::Grid derivative(const std::string& name, const raster::Grid& dem);
const std::vector<std::string>& derivative_names();

struct NamedGrid {
  std::string name;
  raster::Grid grid;
};

struct DesignMatrix {
  std::vector<std::string> columns;  // "intercept" first
  Eigen::MatrixXd x;
  std::vector<std::size_t> site_rows;  // input index of each row
  std::size_t excluded = 0;
  std::vector<std::string> excluded_ids;
};

/// Samples each grid at the cell containing each site, prepending an
/// intercept column. Sites hitting nodata or falling off-grid are dropped.
DesignMatrix build_design_matrix(std::span<const data::Site> sites, std::span<const NamedGrid> grids);

struct OlsFit {
  std::vector<std::string> columns;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd residuals;
  double r_squared = 0.0;
};

/// Least squares via column-pivoted Householder QR. Requires n > p and full
/// column rank; a deficient design throws naming the dependent columns.
OlsFit ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& z, const std::vector<std::string>& columns = {});
Eigen::VectorXd ols_predict(const Eigen::MatrixXd& x, const Eigen::VectorXd& coefficients);

std::string coefficients_csv(const OlsFit& fit);

/// OLS fitted on the training folds of a dataset and scored on its test fold,
/// so the result is comparable with a network evaluated on the same split.
struct HoldoutOls {
  OlsFit fit;                          // in-sample statistics refer to the training rows
  std::vector<std::size_t> test_rows;  // dataset rows
  std::vector<double> predicted;
  std::vector<double> observed;
  double test_r_squared = 0.0;
  double test_mse = 0.0;
  std::size_t excluded = 0;  // rows dropped for nodata derivatives
};

HoldoutOls ols_holdout(const data::Dataset& dataset, const data::FoldAssignment& folds,
                       std::span<const NamedGrid> grids);

}  // namespace deepcov::baseline
