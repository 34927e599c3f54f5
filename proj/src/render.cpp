#include "deepcov/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "deepcov/error.hpp"

namespace deepcov::raster {

ColorRamp::ColorRamp(std::vector<Rgb> stops) : stops_(std::move(stops)) {
  if (stops_.size() < 2) throw Error(ErrorKind::InvalidArgument, "colour ramp needs two stops");
}

ColorRamp ColorRamp::viridis() {
  return ColorRamp({{68, 1, 84},
                    {71, 44, 122},
                    {59, 81, 139},
                    {44, 113, 142},
                    {33, 144, 141},
                    {39, 173, 129},
                    {92, 200, 99},
                    {170, 220, 50},
                    {253, 231, 37}});
}

Rgb ColorRamp::at(double t) const {
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * static_cast<double>(stops_.size() - 1);
  const auto lo = std::min(static_cast<std::size_t>(pos), stops_.size() - 2);
  const double f = pos - static_cast<double>(lo);
  auto mix = [f](std::uint8_t a, std::uint8_t b) {
    return static_cast<std::uint8_t>(std::lround(a + f * (static_cast<double>(b) - a)));
  };
  const Rgb& a = stops_[lo];
  const Rgb& b = stops_[lo + 1];
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

std::vector<std::uint8_t> rasterize_rgba(const Grid& grid, const ColorRamp& ramp) {
  double lo = INFINITY, hi = -INFINITY;
  for (double v : grid.cells()) {
    if (grid.is_nodata_value(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  std::vector<std::uint8_t> px(grid.size() * 4, 0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid.cells()[i];
    if (grid.is_nodata_value(v)) continue;
    const double t = span > 0.0 ? (v - lo) / span : 0.0;
    const Rgb c = ramp.at(t);
    px[4 * i + 0] = c.r;
    px[4 * i + 1] = c.g;
    px[4 * i + 2] = c.b;
    px[4 * i + 3] = 255;
  }
  return px;
}

void render_png(const Grid& grid, const ColorRamp& ramp, const std::filesystem::path& out_path) {
  std::vector<std::uint8_t> px = rasterize_rgba(grid, ramp);

  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(out_path.c_str(), "wb"), &std::fclose);
  if (!file) throw Error(ErrorKind::Io, "cannot write png '" + out_path.string() + "'");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(ErrorKind::Io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorKind::Io, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "libpng failed writing '" + out_path.string() + "'");
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(grid.n_cols()),
               static_cast<png_uint_32>(grid.n_rows()), 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = grid.n_cols() * 4;
  for (std::size_t r = 0; r < grid.n_rows(); ++r) png_write_row(png, px.data() + r * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace deepcov::raster
