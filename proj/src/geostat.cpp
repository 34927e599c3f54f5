#include "deepcov/geostat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>
#include <tuple>

#include "deepcov/error.hpp"

namespace deepcov::geostat {

using raster::format_double;

double distance(const Point& a, const Point& b) { return std::hypot(a.easting - b.easting, a.northing - b.northing); }

std::vector<double> residuals(std::span<const double> targets, std::span<const double> covariate) {
  if (targets.size() != covariate.size()) throw Error(ErrorKind::Shape, "residuals: length mismatch");
  std::vector<double> r(targets.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = targets[i] - covariate[i];
  return r;
}

std::size_t EmpiricalVariogram::non_empty_bins() const {
  return static_cast<std::size_t>(std::count_if(pair_counts.begin(), pair_counts.end(), [](std::size_t c) { return c > 0; }));
}

void EmpiricalVariogram::write_csv(std::ostream& out) const {
  out << "lag,gamma,pairs\n";
  for (std::size_t b = 0; b < bin_centers.size(); ++b)
    out << format_double(bin_centers[b]) << ',' << format_double(semivariance[b]) << ',' << pair_counts[b] << '\n';
}

EmpiricalVariogram empirical_variogram(std::span<const Point> sites, std::span<const double> values,
                                       double bin_width, double max_lag) {
  if (!(bin_width > 0.0)) throw Error(ErrorKind::InvalidArgument, "variogram bin width must be positive");
  if (!(max_lag > 0.0)) throw Error(ErrorKind::InvalidArgument, "variogram max lag must be positive");
  if (sites.size() != values.size()) throw Error(ErrorKind::Shape, "variogram: sites and values differ in length");
  if (sites.size() < 2) throw Error(ErrorKind::InvalidArgument, "variogram needs at least 2 sites");

  const auto n_bins = static_cast<std::size_t>(std::ceil(max_lag / bin_width));
  EmpiricalVariogram ev;
  ev.bin_width = bin_width;
  ev.max_lag = max_lag;
  ev.bin_centers.resize(n_bins);
  ev.pair_counts.assign(n_bins, 0);
  std::vector<double> sums(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) ev.bin_centers[b] = (static_cast<double>(b) + 0.5) * bin_width;

  for (std::size_t i = 0; i < sites.size(); ++i) {
    for (std::size_t j = i + 1; j < sites.size(); ++j) {
      const double h = distance(sites[i], sites[j]);
      if (h > max_lag) continue;
      const std::size_t b = std::min(static_cast<std::size_t>(h / bin_width), n_bins - 1);
      const double d = values[i] - values[j];
      sums[b] += d * d;
      ++ev.pair_counts[b];
    }
  }
  ev.semivariance.resize(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b)
    ev.semivariance[b] = ev.pair_counts[b] ? sums[b] / (2.0 * static_cast<double>(ev.pair_counts[b])) : 0.0;
  return ev;
}

double VariogramModel::gamma(double h) const { return nugget + partial_sill * (1.0 - std::exp(-h / range)); }

namespace {

struct LinearFit {
  double nugget = 0.0, sill = 0.0, loss = INFINITY;
};

// Weighted NNLS for gamma = c0 + c1 * f over (c0, c1) >= 0, by enumerating
// the active sets of the two-variable problem.
LinearFit fit_linear_part(const std::vector<double>& h, const std::vector<double>& g, const std::vector<double>& w,
                          double range) {
  double sw = 0, sf = 0, sff = 0, sg = 0, sfg = 0;
  std::vector<double> f(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    f[k] = 1.0 - std::exp(-h[k] / range);
    sw += w[k];
    sf += w[k] * f[k];
    sff += w[k] * f[k] * f[k];
    sg += w[k] * g[k];
    sfg += w[k] * f[k] * g[k];
  }
  auto loss = [&](double c0, double c1) {
    double l = 0;
    for (std::size_t k = 0; k < h.size(); ++k) {
      const double e = g[k] - c0 - c1 * f[k];
      l += w[k] * e * e;
    }
    return l;
  };
  LinearFit best;
  auto consider = [&](double c0, double c1) {
    if (c0 < 0 || c1 < 0 || !std::isfinite(c0) || !std::isfinite(c1)) return;
    const double l = loss(c0, c1);
    if (l < best.loss) best = {c0, c1, l};
  };
  const double det = sw * sff - sf * sf;
  if (det > 1e-300 * std::max(1.0, sw * sff)) consider((sff * sg - sf * sfg) / det, (sw * sfg - sf * sg) / det);
  if (sff > 0) consider(0.0, std::max(0.0, sfg / sff));
  consider(std::max(0.0, sg / sw), 0.0);
  consider(0.0, 0.0);
  return best;
}

}  // namespace

VariogramModel fit_exponential(const EmpiricalVariogram& ev, const FitOptions& options) {
  std::vector<double> h, g, w;
  for (std::size_t b = 0; b < ev.bin_centers.size(); ++b) {
    if (!ev.pair_counts[b]) continue;
    h.push_back(ev.bin_centers[b]);
    g.push_back(ev.semivariance[b]);
    w.push_back(static_cast<double>(ev.pair_counts[b]));
  }
  if (h.size() < 3) throw Error(ErrorKind::InvalidArgument, "variogram fit needs at least 3 non-empty bins");
  const double default_range = options.default_range.value_or(ev.max_lag / 3.0);
  if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) return {0.0, 0.0, default_range};

  const double lo = std::log(ev.max_lag * 1e-3), hi = std::log(ev.max_lag * 10.0);
  auto profile = [&](double log_a) { return fit_linear_part(h, g, w, std::exp(log_a)).loss; };

  constexpr int kScan = 240;
  std::vector<double> grid;
  for (int i = 0; i <= kScan; ++i) grid.push_back(lo + (hi - lo) * i / kScan);
  if (options.initial_range && *options.initial_range > 0) grid.push_back(std::log(*options.initial_range));
  std::sort(grid.begin(), grid.end());
  std::size_t best = 0;
  double best_loss = INFINITY;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double l = profile(grid[i]);
    if (l < best_loss) {
      best_loss = l;
      best = i;
    }
  }

  double a = grid[best > 0 ? best - 1 : 0];
  double b = grid[std::min(best + 1, grid.size() - 1)];
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = profile(x1), f2 = profile(x2);
  for (int it = 0; it < 200 && (b - a) > 1e-13 * std::max(1.0, std::abs(a)); ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = profile(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = profile(x2);
    }
  }
  double log_range = f1 <= f2 ? x1 : x2;
  if (profile(grid[best]) < std::min(f1, f2)) log_range = grid[best];
  const double range = std::exp(log_range);
  const LinearFit lin = fit_linear_part(h, g, w, range);
  if (lin.sill == 0.0) return {lin.nugget, 0.0, default_range};
  return {lin.nugget, lin.sill, range};
}

OrdinaryKriging::OrdinaryKriging(std::vector<Point> sites, std::vector<double> values, VariogramModel model)
    : sites_(std::move(sites)), values_(std::move(values)), model_(model) {
  if (sites_.empty()) throw Error(ErrorKind::InvalidArgument, "kriging needs at least one site");
  if (sites_.size() != values_.size()) throw Error(ErrorKind::Shape, "kriging: sites and values differ in length");
  if (!(model_.range > 0) || model_.nugget < 0 || model_.partial_sill < 0)
    throw Error(ErrorKind::InvalidArgument, "kriging: invalid variogram model");

  const std::size_t n = sites_.size();
  if (model_.nugget == 0.0 && n > 1) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(sites_[a].easting, sites_[a].northing) < std::tie(sites_[b].easting, sites_[b].northing);
    });
    for (std::size_t k = 1; k < n; ++k) {
      const Point& p = sites_[order[k - 1]];
      const Point& q = sites_[order[k]];
      if (p.easting == q.easting && p.northing == q.northing) {
        const auto [i, j] = std::minmax(order[k - 1], order[k]);
        throw Error(ErrorKind::Numerical, "kriging system is singular: sites " + std::to_string(i) + " and " +
                                              std::to_string(j) + " coincide and the nugget is zero");
      }
    }
  }

  const auto N = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd a(N + 1, N + 1);
  for (Eigen::Index i = 0; i < N; ++i) {
    a(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < N; ++j) {
      const double g = model_.gamma(distance(sites_[static_cast<std::size_t>(i)], sites_[static_cast<std::size_t>(j)]));
      a(i, j) = g;
      a(j, i) = g;
    }
    a(i, N) = 1.0;
    a(N, i) = 1.0;
  }
  a(N, N) = 0.0;
  lu_.compute(a);
  if (!(lu_.rcond() > 1e-13))
    throw Error(ErrorKind::Numerical, "kriging system is singular (rcond " + format_double(lu_.rcond()) + ")");

  Eigen::VectorXd b(N + 1);
  for (Eigen::Index i = 0; i < N; ++i) b(i) = values_[static_cast<std::size_t>(i)];
  b(N) = 0.0;
  dual_ = lu_.solve(b);
}

Eigen::VectorXd OrdinaryKriging::rhs(const Point& query) const {
  const auto N = static_cast<Eigen::Index>(sites_.size());
  Eigen::VectorXd b(N + 1);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double h = distance(query, sites_[static_cast<std::size_t>(i)]);
    b(i) = model_.gamma(h);
  }
  b(N) = 1.0;
  return b;
}

KrigingEstimate OrdinaryKriging::estimate(const Point& query) const {
  const Eigen::VectorXd b = rhs(query);
  const Eigen::VectorXd sol = lu_.solve(b);
  const auto N = static_cast<Eigen::Index>(sites_.size());
  KrigingEstimate e;
  e.weights.resize(sites_.size());
  double mean = 0.0, var = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    e.weights[static_cast<std::size_t>(i)] = sol(i);
    mean += sol(i) * values_[static_cast<std::size_t>(i)];
    var += sol(i) * b(i);
  }
  e.lagrange = sol(N);
  var += e.lagrange;
  e.mean = mean;
  if (var < 0.0) {
    e.variance_clamped = true;
    var = 0.0;
  }
  e.variance = var;
  return e;
}

double OrdinaryKriging::mean(const Point& query) const {
  const auto N = static_cast<Eigen::Index>(sites_.size());
  double m = dual_(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double h = distance(query, sites_[static_cast<std::size_t>(i)]);
    m += dual_(i) * model_.gamma(h);
  }
  return m;
}

std::vector<KrigingEstimate> ordinary_krige(std::span<const Point> sites, std::span<const double> values,
                                            const VariogramModel& model, std::span<const Point> queries) {
  OrdinaryKriging ok(std::vector<Point>(sites.begin(), sites.end()), std::vector<double>(values.begin(), values.end()),
                     model);
  std::vector<KrigingEstimate> out;
  out.reserve(queries.size());
  for (const Point& q : queries) out.push_back(ok.estimate(q));
  return out;
}

raster::Grid krige_residual_grid(const OrdinaryKriging& kriging, const raster::Grid& geometry, std::size_t threads) {
  raster::Grid out = geometry.with_same_geometry(0.0);
  auto cells = out.cells();
  const std::size_t rows = out.n_rows(), cols = out.n_cols();
  threads = std::max<std::size_t>(1, threads);
  auto work = [&](std::size_t worker) {
    for (std::size_t r = worker; r < rows; r += threads)
      for (std::size_t c = 0; c < cols; ++c)
        cells[r * cols + c] = kriging.mean({out.cell_center_easting(c), out.cell_center_northing(r)});
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (std::thread& t : pool) t.join();
  }
  return out;
}

}  // namespace deepcov::geostat
