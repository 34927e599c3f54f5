#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "deepcov/raster.hpp"

namespace deepcov::raster {

struct Rgb {
  std::uint8_t r, g, b;
};

/// Piecewise-linear colour ramp over [0, 1] with evenly spaced stops.
class ColorRamp {
 public:
  explicit ColorRamp(std::vector<Rgb> stops);

  /// Nine-stop viridis approximation, dark purple (0) to yellow (1).
  static ColorRamp viridis();

  Rgb at(double t) const;
  const std::vector<Rgb>& stops() const noexcept { return stops_; }

 private:
  std::vector<Rgb> stops_;
};

/// RGBA pixels, row 0 = north. Valid cells map linearly from [min, max] onto
/// the ramp; a constant grid maps everything to the first stop. Nodata is
/// fully transparent.
std::vector<std::uint8_t> rasterize_rgba(const Grid& grid, const ColorRamp& ramp);

/// Encodes the grid as an 8-bit RGBA PNG. Output is byte-identical for
/// identical inputs (no timestamp or text chunks are written).
void render_png(const Grid& grid, const ColorRamp& ramp, const std::filesystem::path& out_path);

}  // namespace deepcov::raster
