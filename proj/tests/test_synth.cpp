#include <doctest.h>

#include <cmath>

#include "deepcov/baselines.hpp"
#include "deepcov/error.hpp"
#include "deepcov/synth.hpp"

using namespace deepcov;
using namespace deepcov::synth;

namespace {

double mean_abs_step(const raster::Grid& g) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < g.n_rows(); ++r)
    for (std::size_t c = 0; c + 1 < g.n_cols(); ++c, ++n) s += std::fabs(g.at(r, c + 1) - g.at(r, c));
  return s / static_cast<double>(n);
}

SynthRecipe small(TargetRule rule, double noise, std::size_t sites = 400) {
  SynthRecipe r;
  r.size = 128;
  r.rule = rule;
  r.noise_sd = noise;
  r.n_sites = sites;
  r.seed = 11;
  return r;
}

}  // namespace

TEST_CASE("fractal terrain") {
  const raster::Grid a = fractal_terrain(64, 0.7, 3);
  CHECK(a.n_rows() == 64);
  CHECK(a.n_cols() == 64);
  CHECK(a.origin_easting() == 0.0);
  CHECK(a.cell_size() == 500.0);
  double mean = 0.0, ss = 0.0;
  for (double v : a.cells()) mean += v;
  mean /= static_cast<double>(a.size());
  for (double v : a.cells()) ss += (v - mean) * (v - mean);
  CHECK(std::fabs(mean) < 1e-10);
  CHECK(std::sqrt(ss / static_cast<double>(a.size())) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(a == fractal_terrain(64, 0.7, 3));
  CHECK_FALSE(a == fractal_terrain(64, 0.7, 4));
  CHECK(mean_abs_step(fractal_terrain(128, 0.9, 5)) < mean_abs_step(fractal_terrain(128, 0.1, 5)));
  CHECK_THROWS_AS(fractal_terrain(100, 0.7, 1), Error);
  CHECK_THROWS_AS(fractal_terrain(64, 1.0, 1), Error);
  CHECK_THROWS_AS(fractal_terrain(64, 0.0, 1), Error);
}

TEST_CASE("recipe validation and rule names") {
  SynthRecipe r;
  CHECK_NOTHROW(r.validate());
  r.size = 96;
  CHECK_THROWS_AS(r.validate(), Error);
  r = SynthRecipe{};
  r.n_sites = 9;
  CHECK_THROWS_AS(r.validate(), Error);
  r = SynthRecipe{};
  r.size = 32;
  r.window = 32;
  CHECK_THROWS_AS(r.validate(), Error);
  for (TargetRule t : {TargetRule::TriNonlinear, TargetRule::SlopeLinear, TargetRule::Mixture})
    CHECK(parse_rule(to_string(t)) == t);
  CHECK_THROWS_AS(parse_rule("quadratic"), Error);
  const SynthRecipe d = SynthRecipe::demo();
  CHECK(d.size == 512);
  CHECK(d.hurst == 0.7);
  CHECK(d.n_sites == 5000);
  CHECK(d.rule == TargetRule::TriNonlinear);
}

TEST_CASE("terrain is quantised") {
  const raster::Grid t = synthesize_terrain(small(TargetRule::TriNonlinear, 0.1));
  for (double v : t.cells()) CHECK(v * 256.0 == std::round(v * 256.0));
}

TEST_CASE("sites keep a full window from every edge") {
  const World w = synthesize_world(small(TargetRule::Mixture, 0.2, 1000));
  REQUIRE(w.sites.size() == 1000);
  for (const data::Site& s : w.sites) {
    const data::RawPatch p = data::extract_patch(w.terrain, s.easting, s.northing, 32);
    CHECK(p.status == data::PatchStatus::Ok);
    CHECK(s.raw_value.has_value());
  }
  CHECK(w.sites[7].id == "site#7");
}

TEST_CASE("noiseless targets are a function of location") {
  const World a = synthesize_world(small(TargetRule::TriNonlinear, 0.0));
  for (std::size_t i = 0; i < a.sites.size(); ++i) CHECK(*a.sites[i].raw_value == a.truth[i]);
  for (std::size_t i = 0; i < a.sites.size(); ++i)
    for (std::size_t j = i + 1; j < a.sites.size(); ++j) {
      long ri, ci, rj, cj;
      a.terrain.locate(a.sites[i].easting, a.sites[i].northing, ri, ci);
      a.terrain.locate(a.sites[j].easting, a.sites[j].northing, rj, cj);
      if (ri == rj && ci == cj) CHECK(a.truth[i] == a.truth[j]);
    }
  const World b = synthesize_world(small(TargetRule::TriNonlinear, 0.0));
  CHECK(a.truth == b.truth);
  CHECK(a.terrain == b.terrain);
}

TEST_CASE("noiseless slope rule is recovered by regression on slope") {
  const World w = synthesize_world(small(TargetRule::SlopeLinear, 0.0));
  const baseline::NamedGrid grids[] = {{"slope", baseline::slope(w.terrain)}};
  const baseline::DesignMatrix dm = baseline::build_design_matrix(w.sites, grids);
  Eigen::VectorXd z(static_cast<Eigen::Index>(dm.site_rows.size()));
  for (std::size_t i = 0; i < dm.site_rows.size(); ++i) z[static_cast<Eigen::Index>(i)] = *w.sites[dm.site_rows[i]].raw_value;
  CHECK(baseline::ols_fit(dm.x, z).r_squared > 0.99);
}

TEST_CASE("reported ceiling agrees with the empirical R^2") {
  for (TargetRule rule : {TargetRule::TriNonlinear, TargetRule::Mixture}) {
    const World w = synthesize_world(small(rule, 0.5, 3000));
    CHECK(w.r2_ceiling > 0.5);
    CHECK(w.r2_ceiling < 1.0);
    CHECK(std::fabs(w.r2_ceiling - w.empirical_r2) < 0.03);
  }
}

TEST_CASE("standardised rules have unit variance before noise") {
  const World w = synthesize_world(small(TargetRule::SlopeLinear, 0.0, 2000));
  double m = 0.0, ss = 0.0;
  for (double v : w.truth) m += v;
  m /= static_cast<double>(w.truth.size());
  for (double v : w.truth) ss += (v - m) * (v - m);
  CHECK(std::fabs(m) < 1e-10);
  CHECK(ss / static_cast<double>(w.truth.size()) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(w.r2_ceiling == 1.0);
}
