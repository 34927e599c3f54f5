#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "deepcov/error.hpp"
#include "deepcov/geostat.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace deepcov;
using namespace deepcov::geostat;

namespace {

std::vector<Point> random_points(std::size_t n, double extent, std::uint64_t seed) {
  const auto v = testing::uniform_values(2 * n, 0.0, extent, seed);
  std::vector<Point> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = {v[2 * i], v[2 * i + 1]};
  return p;
}

// Ordinary kriging system assembled from scratch and solved by elimination.
std::vector<double> oracle_weights(const std::vector<Point>& s, const VariogramModel& m, const Point& q) {
  const std::size_t n = s.size();
  auto gam = [&](const Point& a, const Point& b, bool same) {
    if (same) return 0.0;
    const double dx = a.easting - b.easting, dy = a.northing - b.northing;
    return m.nugget + m.partial_sill * (1.0 - std::exp(-std::sqrt(dx * dx + dy * dy) / m.range));
  };
  std::vector<std::vector<double>> a(n + 1, std::vector<double>(n + 1, 1.0));
  std::vector<double> b(n + 1, 1.0);
  a[n][n] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a[i][j] = gam(s[i], s[j], i == j);
    b[i] = gam(q, s[i], false);
  }
  return oracle::solve(a, b);
}

}  // namespace

TEST_CASE("residuals") {
  const std::vector<double> z = {1, 2, 3};
  CHECK(residuals(z, z) == std::vector<double>{0, 0, 0});
  CHECK(residuals(z, std::vector<double>{0, 0, 0}) == z);
  CHECK(residuals(z, std::vector<double>{1, 1, 1}) == std::vector<double>{0, 1, 2});
  CHECK_THROWS_AS(residuals(z, std::vector<double>{1}), Error);
}

TEST_CASE("empirical variogram") {
  SUBCASE("two points by hand") {
    const Point p[] = {{0, 0}, {1, 0}};
    const double v[] = {0, 2};
    const EmpiricalVariogram ev = empirical_variogram(p, v, 0.5, 2.0);
    CHECK(ev.pair_counts == std::vector<std::size_t>{0, 0, 1, 0});
    CHECK(ev.semivariance[2] == 2.0);
    CHECK(ev.non_empty_bins() == 1);
    CHECK(ev.bin_centers == std::vector<double>{0.25, 0.75, 1.25, 1.75});
  }
  SUBCASE("pair exactly at max lag lands in the last bin") {
    const Point p[] = {{0, 0}, {3, 4}};
    const double v[] = {1, 4};
    const EmpiricalVariogram ev = empirical_variogram(p, v, 1.0, 5.0);
    CHECK(ev.pair_counts.back() == 1);
    CHECK(ev.semivariance.back() == 4.5);
  }
  SUBCASE("constant values give zero semivariance") {
    const auto pts = random_points(30, 100, 1);
    const std::vector<double> v(30, 3.5);
    for (double g : empirical_variogram(pts, v, 10, 80).semivariance) CHECK(g == 0.0);
  }
  SUBCASE("matches pair enumeration exactly") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const auto pts = random_points(50, 1000, seed);
      const auto v = testing::uniform_values(50, -2, 2, seed + 100);
      std::vector<std::pair<double, double>> xy;
      for (const Point& p : pts) xy.emplace_back(p.easting, p.northing);
      const EmpiricalVariogram ev = empirical_variogram(pts, v, 75.0, 700.0);
      const oracle::Variogram ref = oracle::variogram(xy, v, 75.0, 700.0);
      REQUIRE(ev.pair_counts.size() == ref.count.size());
      for (std::size_t b = 0; b < ref.count.size(); ++b) {
        CHECK(ev.pair_counts[b] == ref.count[b]);
        CHECK(ev.semivariance[b] == (ref.count[b] ? ref.sum_sq[b] / (2.0 * ref.count[b]) : 0.0));
        CHECK(ev.semivariance[b] >= 0.0);
      }
    }
  }
  SUBCASE("errors") {
    const Point p[] = {{0, 0}, {1, 0}};
    const double v[] = {0, 2};
    CHECK_THROWS_AS(empirical_variogram(p, v, 0.0, 2.0), Error);
    CHECK_THROWS_AS(empirical_variogram(p, v, -1.0, 2.0), Error);
    CHECK_THROWS_AS(empirical_variogram(std::span(p, 1), std::span(v, 1), 1.0, 2.0), Error);
  }
  SUBCASE("csv") {
    const Point p[] = {{0, 0}, {1, 0}};
    const double v[] = {0, 2};
    std::ostringstream out;
    empirical_variogram(p, v, 1.0, 2.0).write_csv(out);
    CHECK(out.str() == "lag,gamma,pairs\n0.5,0,0\n1.5,2,1\n");
  }
}

TEST_CASE("exponential fit") {
  const VariogramModel truth{0.1, 1.0, 500.0};
  EmpiricalVariogram ev;
  ev.bin_width = 100;
  ev.max_lag = 1000;
  for (int b = 0; b < 10; ++b) {
    ev.bin_centers.push_back(50.0 + 100.0 * b);
    ev.semivariance.push_back(truth.gamma(ev.bin_centers.back()));
    ev.pair_counts.push_back(static_cast<std::size_t>(20 + 7 * b));
  }
  const VariogramModel fit = fit_exponential(ev);
  CHECK(std::fabs(fit.nugget - 0.1) < 1e-4);
  CHECK(std::fabs(fit.partial_sill - 1.0) < 1e-4);
  CHECK(std::fabs(fit.range - 500.0) / 500.0 < 1e-4);

  EmpiricalVariogram doubled = ev;
  for (double& g : doubled.semivariance) g *= 2;
  const VariogramModel fit2 = fit_exponential(doubled);
  CHECK(fit2.nugget == doctest::Approx(2 * fit.nugget).epsilon(1e-6));
  CHECK(fit2.partial_sill == doctest::Approx(2 * fit.partial_sill).epsilon(1e-6));
  CHECK(fit2.range == doctest::Approx(fit.range).epsilon(1e-6));

  EmpiricalVariogram zero = ev;
  std::fill(zero.semivariance.begin(), zero.semivariance.end(), 0.0);
  const VariogramModel z = fit_exponential(zero);
  CHECK(z.nugget == 0.0);
  CHECK(z.partial_sill == 0.0);
  CHECK(z.range > 0.0);

  EmpiricalVariogram flat = ev;
  std::fill(flat.semivariance.begin(), flat.semivariance.end(), 0.7);
  const VariogramModel f = fit_exponential(flat);
  CHECK(f.nugget >= 0.0);
  CHECK(f.partial_sill >= 0.0);
  for (double h : {100.0, 500.0, 900.0}) CHECK(f.gamma(h) == doctest::Approx(0.7).epsilon(1e-6));

  EmpiricalVariogram sparse = ev;
  std::fill(sparse.pair_counts.begin() + 2, sparse.pair_counts.end(), 0);
  CHECK_THROWS_AS(fit_exponential(sparse), Error);
}

TEST_CASE("model shape") {
  const VariogramModel m{0.2, 1.3, 250};
  CHECK(m.gamma(0.0) == 0.2);
  double prev = 0.0;
  for (double h = 0; h < 5000; h += 37) {
    CHECK(m.gamma(h) >= prev);
    prev = m.gamma(h);
  }
  CHECK(m.gamma(1e7) == doctest::Approx(m.sill()));
}

TEST_CASE("ordinary kriging hand cases") {
  const VariogramModel m{0.0, 1.0, 100.0};
  SUBCASE("single site") {
    const Point s[] = {{10, 10}};
    const double v[] = {4.2};
    for (const Point& q : {Point{10, 10}, Point{500, -30}}) {
      const KrigingEstimate e = ordinary_krige(s, v, {0.3, 1.0, 100.0}, std::span(&q, 1))[0];
      CHECK(e.weights[0] == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(e.mean == doctest::Approx(4.2).epsilon(1e-14));
    }
  }
  SUBCASE("symmetric pair") {
    const Point s[] = {{0, 0}, {100, 0}};
    const double v[] = {1.0, 3.0};
    const Point q{50, 20};
    const KrigingEstimate e = ordinary_krige(s, v, m, std::span(&q, 1))[0];
    CHECK(e.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(e.weights[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(e.mean == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("zero nugget interpolates exactly") {
    const auto pts = random_points(12, 500, 5);
    const auto v = testing::uniform_values(12, -1, 1, 6);
    const OrdinaryKriging ok(pts, v, m);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const KrigingEstimate e = ok.estimate(pts[i]);
      CHECK(std::fabs(e.mean - v[i]) < 1e-10);
      CHECK(e.variance < 1e-10);
      CHECK(std::fabs(ok.mean(pts[i]) - v[i]) < 1e-10);
    }
  }
  SUBCASE("duplicate sites without nugget are rejected") {
    const std::vector<Point> s = {{0, 0}, {5, 5}, {0, 0}};
    try {
      OrdinaryKriging(s, {1, 2, 3}, m);
      FAIL("expected singular system");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("sites 0 and 2") != std::string::npos);
    }
    CHECK_NOTHROW(OrdinaryKriging(s, {1, 2, 3}, VariogramModel{0.1, 1.0, 100.0}));
  }
  SUBCASE("invalid inputs") {
    CHECK_THROWS_AS(OrdinaryKriging({}, {}, m), Error);
    CHECK_THROWS_AS(OrdinaryKriging({{0, 0}}, {1, 2}, m), Error);
    CHECK_THROWS_AS(OrdinaryKriging({{0, 0}}, {1}, VariogramModel{0, 1, 0}), Error);
  }
}

TEST_CASE("ordinary kriging against an independent solve") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t n = 5 + 3 * seed;
    const auto pts = random_points(n, 1000, seed);
    const auto v = testing::uniform_values(n, -3, 3, seed + 50);
    const VariogramModel m{0.05 * static_cast<double>(seed % 3), 1.0 + 0.1 * static_cast<double>(seed), 150.0 + 20.0 * static_cast<double>(seed)};
    const OrdinaryKriging ok(pts, v, m);
    for (const Point& q : random_points(4, 1000, seed + 200)) {
      const KrigingEstimate e = ok.estimate(q);
      const std::vector<double> ref = oracle_weights(pts, m, q);
      double wsum = 0.0, mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::fabs(e.weights[i] - ref[i]) < 1e-10);
        wsum += e.weights[i];
        mean += ref[i] * v[i];
      }
      CHECK(std::fabs(wsum - 1.0) < 1e-10);
      CHECK(std::fabs(e.lagrange - ref[n]) < 1e-10);
      CHECK(std::fabs(e.mean - mean) < 1e-10);
      CHECK(std::fabs(ok.mean(q) - e.mean) < 1e-10);
      CHECK(e.variance >= 0.0);

      std::vector<double> shifted = v;
      for (double& x : shifted) x += 10.0;
      const OrdinaryKriging ok2(pts, shifted, m);
      CHECK(std::fabs(ok2.estimate(q).mean - (e.mean + 10.0)) < 1e-9);
    }
  }
}

TEST_CASE("far from the data the variance approaches the sill") {
  const VariogramModel m{0.2, 0.8, 50.0};
  std::vector<Point> pts;
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 10; ++j) pts.push_back({250.0 * i, 250.0 * j});
  const std::vector<double> v = testing::uniform_values(pts.size(), -1, 1, 3);
  const OrdinaryKriging ok(pts, v, m);
  const Point far{-500.0, 1000.0};  // 10 ranges from the nearest site
  const KrigingEstimate e = ok.estimate(far);
  CHECK(std::fabs(e.variance - m.sill()) / m.sill() < 0.01);
  const double avg = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  CHECK(std::fabs(e.mean - avg) < 0.05);
}

TEST_CASE("residual grid") {
  const raster::Grid geometry(9, 11, 40.0, 0.0, 0.0);
  const auto pts = random_points(20, 400, 8);
  const auto v = testing::uniform_values(20, -1, 1, 9);
  const OrdinaryKriging ok(pts, v, {0.1, 1.0, 120.0});
  const raster::Grid g1 = krige_residual_grid(ok, geometry);
  const raster::Grid g3 = krige_residual_grid(ok, geometry, 3);
  CHECK(g1 == g3);
  CHECK(g1.same_geometry(geometry));
  for (std::size_t r = 0; r < 9; ++r)
    for (std::size_t c = 0; c < 11; ++c)
      CHECK(std::fabs(g1.at(r, c) - ok.estimate({geometry.cell_center_easting(c), geometry.cell_center_northing(r)}).mean) < 1e-10);

  const OrdinaryKriging flat(pts, std::vector<double>(20, 2.5), {0.1, 1.0, 120.0});
  const raster::Grid flat_grid = krige_residual_grid(flat, geometry);
  for (double x : flat_grid.cells()) CHECK(std::fabs(x - 2.5) < 1e-10);
}
