#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepcov/dataset.hpp"
#include "deepcov/raster.hpp"

namespace deepcov::synth {

enum class TargetRule { TriNonlinear, SlopeLinear, Mixture };

std::string to_string(TargetRule rule);
TargetRule parse_rule(const std::string& text);

struct SynthRecipe {
  std::size_t size = 512;  // cells per side, power of two
  double hurst = 0.7;
  TargetRule rule = TargetRule::TriNonlinear;
  double noise_sd = 0.3;
  std::size_t n_sites = 5000;
  std::uint64_t seed = 1;
  double cell_size = 500.0;
  /// Elevation SD (metres) of the unmodulated surface.
  double relief = 100.0;
  /// SD of a smooth log-amplitude field multiplying the surface; 0 keeps the
  /// roughness statistically uniform across the map.
  double roughness_contrast = 0.0;
  /// Sites keep window/2 + 1 cells from every edge.
  std::size_t window = 32;
  /// Elevations are rounded to multiples of this dyadic step so that integer
  /// shifts of the DEM are exact in floating point.
  double elevation_quantum = 1.0 / 256.0;

  /// 512^2, H = 0.7, tri_nonlinear, 5000 sites, noise 0.42 (R^2 ceiling ~0.85),
  /// roughness contrast 1.5.
  static SynthRecipe demo();
  void validate() const;
};

/// Spectral synthesis: complex Gaussian Fourier coefficients scaled by
/// |f|^-(H+1) (zero at DC), inverse FFT, real part, then shifted to mean 0 and
/// scaled to unit SD. Lower-left origin at (0, 0).
raster::Grid fractal_terrain(std::size_t size, double hurst, std::uint64_t seed, double cell_size = 500.0);

/// relief * fractal_terrain * exp(contrast * g), g an independent H = 0.9 field,
/// re-centred and quantised.
raster::Grid synthesize_terrain(const SynthRecipe& recipe);

struct World {
  raster::Grid terrain;
  std::vector<data::Site> sites;
  std::vector<double> truth;  // noiseless rule value per site
  double r2_ceiling = 0.0;    // Var(f) / (Var(f) + noise_sd^2)
  double empirical_r2 = 0.0;  // R^2 of truth against the noisy targets
};

/// Uniform interior sites with target = rule(cell) + N(0, noise_sd^2).
///   tri_nonlinear: z-scored log(1 + TRI)
///   slope_linear:  z-scored Horn slope
///   mixture:       0.6 * tri_nonlinear + 0.4 * (z-scored curvature)^2
World generate_sites(const SynthRecipe& recipe, const raster::Grid& terrain);

World synthesize_world(const SynthRecipe& recipe);

}  // namespace deepcov::synth
