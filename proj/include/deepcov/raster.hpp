#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace deepcov::raster {

/// Georeferenced 2-D raster.
///
/// Cells are stored row-major with row 0 the northernmost row, i.e. in the
/// same order as the body of an ESRI ASCII grid. The origin is the lower-left
/// corner of the lower-left cell. Every cell is either finite or exactly the
/// nodata value.
class Grid {
 public:
  Grid(std::size_t n_rows, std::size_t n_cols, double cell_size, double origin_easting,
       double origin_northing, double nodata_value = -9999.0);
  Grid(std::size_t n_rows, std::size_t n_cols, double cell_size, double origin_easting,
       double origin_northing, double nodata_value, std::vector<double> cells);

  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_cols() const noexcept { return n_cols_; }
  std::size_t size() const noexcept { return cells_.size(); }
  double cell_size() const noexcept { return cell_size_; }
  double origin_easting() const noexcept { return origin_easting_; }
  double origin_northing() const noexcept { return origin_northing_; }
  double nodata_value() const noexcept { return nodata_value_; }

  double at(std::size_t row, std::size_t col) const { return cells_[row * n_cols_ + col]; }
  void set(std::size_t row, std::size_t col, double v) { cells_[row * n_cols_ + col] = v; }
  bool is_nodata(std::size_t row, std::size_t col) const { return at(row, col) == nodata_value_; }
  bool is_nodata_value(double v) const { return v == nodata_value_; }

  std::span<const double> cells() const noexcept { return cells_; }
  std::span<double> cells() noexcept { return cells_; }

  /// Easting/northing of the centre of a cell.
  double cell_center_easting(std::size_t col) const;
  double cell_center_northing(std::size_t row) const;

  /// Row/col of the cell containing a coordinate, floor((coord - origin) / cell_size)
  /// along each axis. Returns false when the point lies outside the grid.
  bool locate(double easting, double northing, long& row, long& col) const;
  /// Same as locate but without the bounds check (indices may be negative or too large).
  void locate_unchecked(double easting, double northing, long& row, long& col) const;

  /// True when both grids share dimensions, cell size and origin.
  bool same_geometry(const Grid& other) const;

  /// A grid with identical georeferencing and every cell set to `fill`.
  Grid with_same_geometry(double fill) const;

  bool operator==(const Grid& other) const;

 private:
  std::size_t n_rows_;
  std::size_t n_cols_;
  double cell_size_;
  double origin_easting_;
  double origin_northing_;
  double nodata_value_;
  std::vector<double> cells_;
};

struct GridStats {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t valid_count = 0;
};

/// Reads an ESRI ASCII grid. Header keys are case-insensitive and may come in
/// any order; errors carry the offending line number.
Grid read_ascii_grid(std::istream& in);
Grid read_ascii_grid(const std::filesystem::path& path);

/// Writes an ESRI ASCII grid. Values are printed in the shortest decimal form
/// that parses back to the identical double, so read(write(g)) == g.
void write_ascii_grid(const Grid& grid, std::ostream& out);
void write_ascii_grid(const Grid& grid, const std::filesystem::path& path);

/// Coarsens by averaging the valid cells of each factor x factor block.
/// Trailing rows/cols that do not fill a block are dropped.
Grid block_aggregate(const Grid& grid, std::size_t factor);

/// Mean and population SD over valid cells.
///
/// Values are shifted by the first valid cell before accumulating, so adding a
/// constant that is exactly representable alongside the data (integer metres,
/// dyadic fractions) leaves `sd` bit-identical.
GridStats grid_stats(const Grid& grid);

/// Formats a double in shortest round-trip form.
std::string format_double(double v);

}  // namespace deepcov::raster
