#include "deepcov/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "deepcov/error.hpp"
#include "deepcov/evaluation.hpp"

namespace deepcov::baseline {

namespace {

// Applies fn to every 3x3 window with nine valid cells. w is row-major a..i.
template <typename Fn>
raster::Grid filter3x3(const raster::Grid& dem, Fn fn) {
  raster::Grid out = dem.with_same_geometry(dem.nodata_value());
  if (dem.n_rows() < 3 || dem.n_cols() < 3) return out;
  std::array<double, 9> w{};
  for (std::size_t r = 1; r + 1 < dem.n_rows(); ++r) {
    for (std::size_t c = 1; c + 1 < dem.n_cols(); ++c) {
      bool ok = true;
      for (std::size_t i = 0; i < 3 && ok; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          const double v = dem.at(r + i - 1, c + j - 1);
          if (dem.is_nodata_value(v)) {
            ok = false;
            break;
          }
          w[i * 3 + j] = v;
        }
      if (ok) out.set(r, c, fn(w, dem.cell_size()));
    }
  }
  return out;
}

}  // namespace

raster::Grid slope(const raster::Grid& dem) {
  return filter3x3(dem, [](const std::array<double, 9>& w, double L) {
    const double dzdx = ((w[2] + 2 * w[5] + w[8]) - (w[0] + 2 * w[3] + w[6])) / (8 * L);
    const double dzdy = ((w[0] + 2 * w[1] + w[2]) - (w[6] + 2 * w[7] + w[8])) / (8 * L);
    return std::sqrt(dzdx * dzdx + dzdy * dzdy);
  });
}

raster::Grid tri(const raster::Grid& dem) {
  return filter3x3(dem, [](const std::array<double, 9>& w, double) {
    double ss = 0.0;
    for (std::size_t k = 0; k < 9; ++k) {
      if (k == 4) continue;
      ss += (w[k] - w[4]) * (w[k] - w[4]);
    }
    return std::sqrt(ss);
  });
}

raster::Grid roughness(const raster::Grid& dem) {
  return filter3x3(dem, [](const std::array<double, 9>& w, double) {
    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    return *hi - *lo;
  });
}

raster::Grid curvature(const raster::Grid& dem) {
  return filter3x3(dem, [](const std::array<double, 9>& w, double L) {
    const double d = ((w[3] + w[5]) / 2 - w[4]) / (L * L);
    const double e = ((w[1] + w[7]) / 2 - w[4]) / (L * L);
    return 2 * (d + e);
  });
}

const std::vector<std::string>& derivative_names() {
  static const std::vector<std::string> names = {"slope", "tri", "roughness", "curvature"};
  return names;
}

raster::Grid derivative(const std::string& name, const raster::Grid& dem) {
  if (name == "slope") return slope(dem);
  if (name == "tri") return tri(dem);
  if (name == "roughness") return roughness(dem);
  if (name == "curvature") return curvature(dem);
  throw Error(ErrorKind::InvalidArgument, "unknown derivative '" + name + "'");
}

DesignMatrix build_design_matrix(std::span<const data::Site> sites, std::span<const NamedGrid> grids) {
  DesignMatrix dm;
  dm.columns.push_back("intercept");
  for (const NamedGrid& g : grids) {
    if (std::find(dm.columns.begin(), dm.columns.end(), g.name) != dm.columns.end())
      throw Error(ErrorKind::InvalidArgument, "duplicate design column '" + g.name + "'");
    dm.columns.push_back(g.name);
  }
  std::vector<std::vector<double>> rows;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    std::vector<double> row{1.0};
    bool ok = true;
    for (const NamedGrid& g : grids) {
      long r = 0, c = 0;
      if (!g.grid.locate(sites[s].easting, sites[s].northing, r, c) ||
          g.grid.is_nodata(static_cast<std::size_t>(r), static_cast<std::size_t>(c))) {
        ok = false;
        break;
      }
      row.push_back(g.grid.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
    }
    if (!ok) {
      ++dm.excluded;
      dm.excluded_ids.push_back(sites[s].id);
      continue;
    }
    rows.push_back(std::move(row));
    dm.site_rows.push_back(s);
  }
  dm.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dm.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      dm.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return dm;
}

OlsFit ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& z, const std::vector<std::string>& columns) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (z.size() != n) throw Error(ErrorKind::Shape, "ols_fit: design rows and targets differ");
  if (p == 0 || n <= p)
    throw Error(ErrorKind::InvalidArgument, "ols_fit: need more rows (" + std::to_string(n) + ") than columns (" +
                                                std::to_string(p) + ")");
  auto name = [&](Eigen::Index j) {
    return static_cast<std::size_t>(j) < columns.size() ? columns[static_cast<std::size_t>(j)]
                                                        : "column " + std::to_string(j);
  };
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < p) {
    std::string dependent;
    for (Eigen::Index k = qr.rank(); k < p; ++k) {
      if (!dependent.empty()) dependent += ", ";
      dependent += name(qr.colsPermutation().indices()(k));
    }
    throw Error(ErrorKind::Numerical, "ols_fit: design is rank deficient (rank " + std::to_string(qr.rank()) +
                                          " of " + std::to_string(p) + "); collinear: " + dependent);
  }
  OlsFit fit;
  fit.columns = columns;
  fit.coefficients = qr.solve(z);
  fit.residuals = z - x * fit.coefficients;
  const double mean = z.mean();
  const double ss_tot = (z.array() - mean).square().sum();
  fit.r_squared = ss_tot > 0.0 ? 1.0 - fit.residuals.squaredNorm() / ss_tot : std::nan("");
  return fit;
}

Eigen::VectorXd ols_predict(const Eigen::MatrixXd& x, const Eigen::VectorXd& coefficients) {
  if (x.cols() != coefficients.size()) throw Error(ErrorKind::Shape, "ols_predict: column count mismatch");
  return x * coefficients;
}

std::string coefficients_csv(const OlsFit& fit) {
  std::ostringstream s;
  s << "column,coefficient\n";
  for (Eigen::Index j = 0; j < fit.coefficients.size(); ++j) {
    const auto idx = static_cast<std::size_t>(j);
    s << (idx < fit.columns.size() ? fit.columns[idx] : "column" + std::to_string(j)) << ','
      << raster::format_double(fit.coefficients(j)) << '\n';
  }
  return s.str();
}

HoldoutOls ols_holdout(const data::Dataset& dataset, const data::FoldAssignment& folds,
                       std::span<const NamedGrid> grids) {
  folds.validate();
  if (dataset.fold_labels.size() != dataset.size())
    throw Error(ErrorKind::InvalidArgument, "dataset has no fold labels");
  const DesignMatrix dm = build_design_matrix(dataset.sites, grids);

  std::vector<Eigen::Index> train_idx, test_idx;
  for (std::size_t i = 0; i < dm.site_rows.size(); ++i) {
    const int fold = dataset.fold_labels[dm.site_rows[i]];
    if (static_cast<std::size_t>(fold) == folds.test_fold)
      test_idx.push_back(static_cast<Eigen::Index>(i));
    else if (folds.is_training_fold(fold))
      train_idx.push_back(static_cast<Eigen::Index>(i));
  }
  if (test_idx.size() < 2) throw Error(ErrorKind::InvalidArgument, "test fold has fewer than 2 usable rows");

  auto rows_of = [&](const std::vector<Eigen::Index>& idx, Eigen::MatrixXd& x, Eigen::VectorXd& z) {
    x.resize(static_cast<Eigen::Index>(idx.size()), dm.x.cols());
    z.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = dm.x.row(idx[i]);
      z[static_cast<Eigen::Index>(i)] = dataset.targets[dm.site_rows[static_cast<std::size_t>(idx[i])]];
    }
  };
  Eigen::MatrixXd x_train, x_test;
  Eigen::VectorXd z_train, z_test;
  rows_of(train_idx, x_train, z_train);
  rows_of(test_idx, x_test, z_test);

  HoldoutOls out;
  out.fit = ols_fit(x_train, z_train, dm.columns);
  const Eigen::VectorXd pred = ols_predict(x_test, out.fit.coefficients);
  out.predicted.assign(pred.data(), pred.data() + pred.size());
  out.observed.assign(z_test.data(), z_test.data() + z_test.size());
  for (Eigen::Index i : test_idx) out.test_rows.push_back(dm.site_rows[static_cast<std::size_t>(i)]);
  out.test_r_squared = eval::r_squared(out.predicted, out.observed);
  out.test_mse = eval::mse(out.predicted, out.observed);
  out.excluded = dm.excluded;
  return out;
}

}  // namespace deepcov::baseline
