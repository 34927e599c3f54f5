#include "deepcov/synth.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <random>

#include "deepcov/baselines.hpp"
#include "deepcov/error.hpp"
#include "deepcov/rng.hpp"

namespace deepcov::synth {

std::string to_string(TargetRule rule) {
  switch (rule) {
    case TargetRule::TriNonlinear: return "tri_nonlinear";
    case TargetRule::SlopeLinear: return "slope_linear";
    case TargetRule::Mixture: return "mixture";
  }
  return "?";
}

TargetRule parse_rule(const std::string& text) {
  if (text == "tri_nonlinear") return TargetRule::TriNonlinear;
  if (text == "slope_linear") return TargetRule::SlopeLinear;
  if (text == "mixture") return TargetRule::Mixture;
  throw Error(ErrorKind::InvalidArgument,
              "unknown target rule '" + text + "' (expected tri_nonlinear, slope_linear or mixture)");
}

SynthRecipe SynthRecipe::demo() {
  SynthRecipe r;
  r.size = 512;
  r.hurst = 0.7;
  r.rule = TargetRule::TriNonlinear;
  r.noise_sd = 0.42;
  r.n_sites = 5000;
  r.roughness_contrast = 1.5;
  return r;
}

namespace {

bool is_power_of_two(std::size_t n) { return n >= 2 && (n & (n - 1)) == 0; }

struct FftwFree {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};

}  // namespace

void SynthRecipe::validate() const {
  if (!is_power_of_two(size)) throw Error(ErrorKind::InvalidArgument, "terrain size must be a power of two >= 2");
  if (!(hurst > 0.0 && hurst < 1.0)) throw Error(ErrorKind::InvalidArgument, "hurst must lie in (0, 1)");
  if (!(noise_sd >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise_sd must be >= 0");
  if (!(cell_size > 0.0) || !(relief > 0.0)) throw Error(ErrorKind::InvalidArgument, "cell_size and relief must be positive");
  if (!(roughness_contrast >= 0.0)) throw Error(ErrorKind::InvalidArgument, "roughness_contrast must be >= 0");
  if (!(elevation_quantum >= 0.0)) throw Error(ErrorKind::InvalidArgument, "elevation_quantum must be >= 0");
  if (n_sites < 10) throw Error(ErrorKind::InvalidArgument, "n_sites must be >= 10");
  if (size <= 2 * (window / 2 + 1))
    throw Error(ErrorKind::InvalidArgument, "terrain of " + std::to_string(size) +
                                                " cells leaves no interior for a window of " + std::to_string(window));
}

raster::Grid fractal_terrain(std::size_t size, double hurst, std::uint64_t seed, double cell_size) {
  if (!is_power_of_two(size)) throw Error(ErrorKind::InvalidArgument, "terrain size must be a power of two >= 2");
  if (!(hurst > 0.0 && hurst < 1.0)) throw Error(ErrorKind::InvalidArgument, "hurst must lie in (0, 1)");

  const std::size_t n = size;
  std::unique_ptr<fftw_complex[], FftwFree> buf(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n * n)));
  if (!buf) throw std::bad_alloc();

  Rng rng = make_rng(seed, {streams::kTerrain});
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double exponent = -(hurst + 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double fy = (r < n / 2 ? static_cast<double>(r) : static_cast<double>(r) - static_cast<double>(n)) / n;
    for (std::size_t c = 0; c < n; ++c) {
      const double fx = (c < n / 2 ? static_cast<double>(c) : static_cast<double>(c) - static_cast<double>(n)) / n;
      const double re = gauss(rng);
      const double im = gauss(rng);
      const double f = std::hypot(fx, fy);
      const double amp = (r == 0 && c == 0) ? 0.0 : std::pow(f, exponent);
      buf[r * n + c][0] = re * amp;
      buf[r * n + c][1] = im * amp;
    }
  }
  fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(n), static_cast<int>(n), buf.get(), buf.get(), FFTW_BACKWARD,
                                    FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);

  std::vector<double> z(n * n);
  double mean = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = buf[i][0];
    mean += z[i];
  }
  mean /= static_cast<double>(z.size());
  double var = 0.0;
  for (double& v : z) {
    v -= mean;
    var += v * v;
  }
  var /= static_cast<double>(z.size());
  const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
  for (double& v : z) v /= sd;
  return raster::Grid(n, n, cell_size, 0.0, 0.0, -9999.0, std::move(z));
}

raster::Grid synthesize_terrain(const SynthRecipe& recipe) {
  recipe.validate();
  raster::Grid dem = fractal_terrain(recipe.size, recipe.hurst, recipe.seed, recipe.cell_size);
  auto z = dem.cells();
  if (recipe.roughness_contrast > 0.0) {
    const raster::Grid g = fractal_terrain(recipe.size, 0.9, stream_seed(recipe.seed, {streams::kModulation}),
                                           recipe.cell_size);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] *= std::exp(recipe.roughness_contrast * g.cells()[i]);
  }
  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(z.size());
  for (double& v : z) {
    v = recipe.relief * (v - mean);
    if (recipe.elevation_quantum > 0.0) v = std::round(v / recipe.elevation_quantum) * recipe.elevation_quantum;
  }
  return dem;
}

namespace {

void zscore(std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
  for (double& x : v) x = (x - mean) / sd;
}

std::vector<double> sample(const raster::Grid& g, const std::vector<std::pair<long, long>>& cells) {
  std::vector<double> out;
  out.reserve(cells.size());
  for (auto [r, c] : cells) {
    const double v = g.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    if (g.is_nodata_value(v)) throw Error(ErrorKind::Numerical, "synthetic site landed on a nodata derivative cell");
    out.push_back(v);
  }
  return out;
}

}  // namespace

World generate_sites(const SynthRecipe& recipe, const raster::Grid& terrain) {
  recipe.validate();
  const double margin = static_cast<double>(recipe.window / 2 + 1);
  const double span_cols = static_cast<double>(terrain.n_cols()) - 2.0 * margin;
  const double span_rows = static_cast<double>(terrain.n_rows()) - 2.0 * margin;
  if (!(span_cols > 0.0) || !(span_rows > 0.0))
    throw Error(ErrorKind::InvalidArgument, "terrain too small for the window margin");

  Rng site_rng = make_rng(recipe.seed, {streams::kSites});
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  World world{terrain, {}, {}, 0.0, 0.0};
  std::vector<std::pair<long, long>> cells;
  const double cs = terrain.cell_size();
  for (std::size_t i = 0; i < recipe.n_sites; ++i) {
    const double ce = margin + u01(site_rng) * span_cols;
    const double cn = margin + u01(site_rng) * span_rows;
    data::Site s;
    s.id = "site#" + std::to_string(i);
    s.easting = terrain.origin_easting() + ce * cs;
    s.northing = terrain.origin_northing() + cn * cs;
    long r = 0, c = 0;
    if (!terrain.locate(s.easting, s.northing, r, c))
      throw Error(ErrorKind::Numerical, "synthetic site fell outside the terrain");
    cells.emplace_back(r, c);
    world.sites.push_back(std::move(s));
  }

  std::vector<double> f;
  auto log_tri = [&] {
    std::vector<double> v = sample(baseline::tri(terrain), cells);
    for (double& x : v) x = std::log1p(x);
    zscore(v);
    return v;
  };
  switch (recipe.rule) {
    case TargetRule::TriNonlinear:
      f = log_tri();
      break;
    case TargetRule::SlopeLinear:
      f = sample(baseline::slope(terrain), cells);
      zscore(f);
      break;
    case TargetRule::Mixture: {
      f = log_tri();
      std::vector<double> curv = sample(baseline::curvature(terrain), cells);
      zscore(curv);
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = 0.6 * f[i] + 0.4 * curv[i] * curv[i];
      break;
    }
  }

  Rng noise_rng = make_rng(recipe.seed, {streams::kTargetNoise});
  std::normal_distribution<double> gauss(0.0, recipe.noise_sd > 0.0 ? recipe.noise_sd : 1.0);
  double fmean = 0.0;
  for (double x : f) fmean += x;
  fmean /= static_cast<double>(f.size());
  double fvar = 0.0, sse = 0.0, zmean = 0.0;
  std::vector<double> z(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    fvar += (f[i] - fmean) * (f[i] - fmean);
    z[i] = f[i] + (recipe.noise_sd > 0.0 ? gauss(noise_rng) : 0.0);
    world.sites[i].raw_value = z[i];
    sse += (z[i] - f[i]) * (z[i] - f[i]);
    zmean += z[i];
  }
  fvar /= static_cast<double>(f.size());
  zmean /= static_cast<double>(z.size());
  double sst = 0.0;
  for (double x : z) sst += (x - zmean) * (x - zmean);
  world.r2_ceiling = fvar / (fvar + recipe.noise_sd * recipe.noise_sd);
  world.empirical_r2 = sst > 0.0 ? 1.0 - sse / sst : 0.0;
  world.truth = std::move(f);
  return world;
}

World synthesize_world(const SynthRecipe& recipe) { return generate_sites(recipe, synthesize_terrain(recipe)); }

}  // namespace deepcov::synth
