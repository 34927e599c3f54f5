#include <doctest.h>

#include <cmath>

#include "deepcov/error.hpp"
#include "deepcov/mapgen.hpp"
#include "fixtures.hpp"

using namespace deepcov;
using namespace deepcov::mapgen;

namespace {

nn::Model random_model(std::size_t k = 8, std::uint64_t seed = 3) {
  const nn::ArchConfig arch = testing::tiny_arch(k, 4);
  nn::Model m{arch, nn::build_network(arch, seed), 1.5, 2.0};
  // Nonzero biases so that a flat patch does not map to the target mean.
  for (auto& [name, v] : m.params.tensors)
    if (name.find("bias") != std::string::npos) v.mutable_value().fill(0.1);
  return m;
}

}  // namespace

TEST_CASE("constant terrain gives a constant interior") {
  const nn::Model m = random_model();
  const raster::Grid flat(20, 24, 10.0, 0.0, 0.0, -9999.0, std::vector<double>(20 * 24, 42.0));
  const CovariateGrid cov = predict_grid(m, flat, 5.0);
  double first = NAN;
  std::size_t valid = 0;
  for (double v : cov.grid.cells()) {
    if (cov.grid.is_nodata_value(v)) continue;
    if (std::isnan(first)) first = v;
    CHECK(v == first);
    ++valid;
  }
  CHECK(valid == (20 - 7) * (24 - 7));
}

TEST_CASE("border band of nodata matches the window convention") {
  for (std::size_t k : {7, 8}) {
    const nn::Model m = random_model(k);
    const raster::Grid g = testing::dyadic_grid(19, 23, 10.0, 4);
    const CovariateGrid cov = predict_grid(m, g, 30.0);
    const std::size_t lead = k / 2, trail = k - 1 - k / 2;
    for (std::size_t r = 0; r < g.n_rows(); ++r)
      for (std::size_t c = 0; c < g.n_cols(); ++c) {
        const bool inside = r >= lead && c >= lead && r + trail < g.n_rows() && c + trail < g.n_cols();
        CHECK(cov.grid.is_nodata(r, c) == !inside);
      }
  }
}

TEST_CASE("stride s samples the stride-1 map") {
  const nn::Model m = random_model();
  const raster::Grid g = testing::dyadic_grid(30, 27, 25.0, 5);
  const CovariateGrid full = predict_grid(m, g, 30.0);
  for (std::size_t s : {2, 3, 5}) {
    const CovariateGrid sub = predict_grid(m, g, 30.0, {s, 7, 1});
    CHECK(sub.stride == s);
    CHECK(sub.grid.cell_size() == 25.0 * s);
    for (std::size_t i = 0; i < sub.grid.n_rows(); ++i)
      for (std::size_t j = 0; j < sub.grid.n_cols(); ++j) {
        CHECK(sub.grid.at(i, j) == full.grid.at(i * s, j * s));
        // Node centres coincide with the sampled source cell centres.
        CHECK(std::fabs(sub.grid.cell_center_easting(j) - g.cell_center_easting(j * s)) < 1e-9);
        CHECK(std::fabs(sub.grid.cell_center_northing(i) - g.cell_center_northing(i * s)) < 1e-9);
      }
  }
  CHECK_THROWS_AS(predict_grid(m, g, 30.0, {0, 7, 1}), Error);
}

TEST_CASE("adding a constant to the terrain leaves the map unchanged") {
  const nn::Model m = random_model();
  const raster::Grid g = testing::dyadic_grid(18, 18, 10.0, 6);
  raster::Grid shifted = g;
  for (double& v : shifted.cells()) v += 1234.5;
  const CovariateGrid a = predict_grid(m, g, 30.0);
  const CovariateGrid b = predict_grid(m, shifted, 30.0);
  CHECK(a.grid.cells().size() == b.grid.cells().size());
  for (std::size_t i = 0; i < a.grid.size(); ++i) CHECK(a.grid.cells()[i] == b.grid.cells()[i]);
  CHECK(a.model_fingerprint == b.model_fingerprint);
  CHECK(a.source_fingerprint != b.source_fingerprint);
}

TEST_CASE("map values at sites equal evaluation-time predictions") {
  const nn::Model m = random_model();
  const raster::Grid g = testing::dyadic_grid(24, 24, 10.0, 7);
  std::vector<data::Site> sites;
  for (std::size_t r : {4, 9, 15, 19})
    for (std::size_t c : {5, 11, 18})
      sites.push_back({"s", g.cell_center_easting(c) + 1.0, g.cell_center_northing(r) - 2.0, 1.0, false, 0.0});
  data::DatasetConfig dc;
  dc.window = 8;
  const data::Dataset ds = data::assemble_dataset(g, 30.0, sites, dc).dataset;
  REQUIRE(ds.size() == sites.size());
  std::vector<const data::Patch*> ptrs;
  for (const auto& p : ds.patches) ptrs.push_back(&p);
  const std::vector<double> pred = nn::predict(m, ptrs, 5);
  const CovariateGrid cov = predict_grid(m, g, 30.0);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    long r, c;
    REQUIRE(g.locate(sites[i].easting, sites[i].northing, r, c));
    CHECK(cov.grid.at(r, c) == pred[i]);
  }
}

TEST_CASE("thread and batch counts do not change the map") {
  const nn::Model m = random_model();
  const raster::Grid g = testing::dyadic_grid(26, 21, 10.0, 8);
  const CovariateGrid a = predict_grid(m, g, 30.0, {1, 256, 1});
  const CovariateGrid b = predict_grid(m, g, 30.0, {1, 13, 3});
  CHECK(a.grid == b.grid);
}

TEST_CASE("nodata in the source spreads to every window that touches it") {
  const nn::Model m = random_model();
  raster::Grid g = testing::dyadic_grid(20, 20, 10.0, 9);
  g.set(10, 10, g.nodata_value());
  const CovariateGrid cov = predict_grid(m, g, 30.0);
  for (std::size_t r = 4; r <= 16; ++r)
    for (std::size_t c = 4; c <= 16; ++c) {
      const bool touches = r >= 7 && r <= 14 && c >= 7 && c <= 14;
      CHECK(cov.grid.is_nodata(r, c) == touches);
    }
}

TEST_CASE("grids smaller than the window produce an all-nodata map with a warning") {
  const nn::Model m = random_model();
  const raster::Grid g = testing::dyadic_grid(5, 30, 10.0, 10);
  const CovariateGrid cov = predict_grid(m, g, 30.0);
  CHECK_FALSE(cov.warning.empty());
  for (double v : cov.grid.cells()) CHECK(cov.grid.is_nodata_value(v));
}

TEST_CASE("compose_prediction") {
  raster::Grid a = testing::dyadic_grid(6, 7, 10.0, 11);
  raster::Grid b = testing::dyadic_grid(6, 7, 10.0, 12);
  a.set(0, 0, a.nodata_value());
  b.set(5, 6, b.nodata_value());
  const raster::Grid sum = compose_prediction(a, b);
  CHECK(sum.same_geometry(a));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 7; ++c) {
      if ((r == 0 && c == 0) || (r == 5 && c == 6))
        CHECK(sum.is_nodata(r, c));
      else
        CHECK(sum.at(r, c) == a.at(r, c) + b.at(r, c));
    }
  const raster::Grid zero = a.with_same_geometry(0.0);
  const raster::Grid same = compose_prediction(a, zero);
  CHECK(same == a);
  const raster::Grid other(6, 7, 10.0, 5.0, 2000.0);
  CHECK_THROWS_AS(compose_prediction(a, other), Error);
}

TEST_CASE("fingerprints track model and grid content") {
  nn::Model m = random_model();
  const std::string f0 = model_fingerprint(m);
  CHECK(f0 == model_fingerprint(random_model()));
  m.params.tensors[0].second.mutable_value()[0] += 1e-12;
  CHECK(model_fingerprint(m) != f0);
  raster::Grid g = testing::dyadic_grid(5, 5, 10.0, 1);
  const std::string g0 = grid_fingerprint(g);
  g.set(2, 2, g.at(2, 2) + 1.0);
  CHECK(grid_fingerprint(g) != g0);
}
