#include "deepcov/raster.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "deepcov/error.hpp"

namespace deepcov::raster {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool parse_number(const std::string& token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

Error parse_error(std::size_t line, const std::string& what) {
  return Error(ErrorKind::Parse, "ascii grid line " + std::to_string(line) + ": " + what);
}

}  // namespace

Grid::Grid(std::size_t n_rows, std::size_t n_cols, double cell_size, double origin_easting,
           double origin_northing, double nodata_value)
    : Grid(n_rows, n_cols, cell_size, origin_easting, origin_northing, nodata_value,
           std::vector<double>(n_rows * n_cols, nodata_value)) {}

Grid::Grid(std::size_t n_rows, std::size_t n_cols, double cell_size, double origin_easting,
           double origin_northing, double nodata_value, std::vector<double> cells)
    : n_rows_(n_rows),
      n_cols_(n_cols),
      cell_size_(cell_size),
      origin_easting_(origin_easting),
      origin_northing_(origin_northing),
      nodata_value_(nodata_value),
      cells_(std::move(cells)) {
  if (n_rows_ == 0 || n_cols_ == 0)
    throw Error(ErrorKind::InvalidArgument, "grid must have at least one row and column");
  if (!(cell_size_ > 0.0) || !std::isfinite(cell_size_))
    throw Error(ErrorKind::InvalidArgument, "grid cell size must be positive");
  if (!std::isfinite(origin_easting_) || !std::isfinite(origin_northing_) ||
      !std::isfinite(nodata_value_))
    throw Error(ErrorKind::InvalidArgument, "grid georeferencing must be finite");
  if (cells_.size() != n_rows_ * n_cols_)
    throw Error(ErrorKind::Shape, "grid cell count " + std::to_string(cells_.size()) +
                                      " does not match " + std::to_string(n_rows_) + "x" +
                                      std::to_string(n_cols_));
  for (double v : cells_) {
    if (!std::isfinite(v) && v != nodata_value_)
      throw Error(ErrorKind::InvalidArgument, "grid cells must be finite or nodata");
  }
}

double Grid::cell_center_easting(std::size_t col) const {
  return origin_easting_ + (static_cast<double>(col) + 0.5) * cell_size_;
}

double Grid::cell_center_northing(std::size_t row) const {
  return origin_northing_ + (static_cast<double>(n_rows_ - row) - 0.5) * cell_size_;
}

void Grid::locate_unchecked(double easting, double northing, long& row, long& col) const {
  col = static_cast<long>(std::floor((easting - origin_easting_) / cell_size_));
  const long row_from_south = static_cast<long>(std::floor((northing - origin_northing_) / cell_size_));
  row = static_cast<long>(n_rows_) - 1 - row_from_south;
}

bool Grid::locate(double easting, double northing, long& row, long& col) const {
  if (!std::isfinite(easting) || !std::isfinite(northing)) return false;
  locate_unchecked(easting, northing, row, col);
  return row >= 0 && col >= 0 && row < static_cast<long>(n_rows_) &&
         col < static_cast<long>(n_cols_);
}

bool Grid::same_geometry(const Grid& other) const {
  return n_rows_ == other.n_rows_ && n_cols_ == other.n_cols_ &&
         cell_size_ == other.cell_size_ && origin_easting_ == other.origin_easting_ &&
         origin_northing_ == other.origin_northing_;
}

Grid Grid::with_same_geometry(double fill) const {
  return Grid(n_rows_, n_cols_, cell_size_, origin_easting_, origin_northing_, nodata_value_,
              std::vector<double>(cells_.size(), fill));
}

bool Grid::operator==(const Grid& other) const {
  return same_geometry(other) && nodata_value_ == other.nodata_value_ && cells_ == other.cells_;
}

Grid read_ascii_grid(std::istream& in) {
  static const std::array<const char*, 5> required = {"ncols", "nrows", "xllcorner", "yllcorner",
                                                      "cellsize"};
  std::map<std::string, double> header;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  std::size_t expected = 0;
  bool in_data = false;
  double nodata = -9999.0;
  std::size_t n_rows = 0, n_cols = 0;

  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream tokens(line);
    std::string first;
    if (!(tokens >> first)) continue;

    double number = 0.0;
    if (!in_data && !parse_number(first, number)) {
      std::string key = lower(first);
      std::string value_token;
      if (!(tokens >> value_token)) throw parse_error(line_no, "header key '" + first + "' has no value");
      std::string extra;
      if (tokens >> extra) throw parse_error(line_no, "unexpected token '" + extra + "' in header");
      double value = 0.0;
      if (!parse_number(value_token, value))
        throw parse_error(line_no, "non-numeric header value '" + value_token + "'");
      if (key != "ncols" && key != "nrows" && key != "xllcorner" && key != "yllcorner" &&
          key != "cellsize" && key != "nodata_value")
        throw parse_error(line_no, "unknown header key '" + first + "'");
      if (header.count(key)) throw parse_error(line_no, "duplicate header key '" + first + "'");
      header[key] = value;
      continue;
    }

    if (!in_data) {
      for (const char* key : required) {
        if (!header.count(key))
          throw parse_error(line_no, std::string("missing header key '") + key + "'");
      }
      const double nc = header["ncols"], nr = header["nrows"];
      if (nc < 1 || nr < 1 || nc != std::floor(nc) || nr != std::floor(nr))
        throw parse_error(line_no, "ncols/nrows must be positive integers");
      n_cols = static_cast<std::size_t>(nc);
      n_rows = static_cast<std::size_t>(nr);
      if (header.count("nodata_value")) nodata = header["nodata_value"];
      expected = n_rows * n_cols;
      values.reserve(expected);
      in_data = true;
    }

    std::string token = first;
    do {
      double v = 0.0;
      if (!parse_number(token, v)) throw parse_error(line_no, "non-numeric value '" + token + "'");
      if (!std::isfinite(v)) throw parse_error(line_no, "non-finite value '" + token + "'");
      if (values.size() == expected)
        throw parse_error(line_no, "more values than ncols*nrows = " + std::to_string(expected));
      values.push_back(v);
    } while (tokens >> token);
  }

  if (!in_data) throw parse_error(line_no, "no data values");
  if (values.size() != expected)
    throw parse_error(line_no, "expected " + std::to_string(expected) + " values, found " +
                                   std::to_string(values.size()));
  try {
    return Grid(n_rows, n_cols, header["cellsize"], header["xllcorner"], header["yllcorner"],
                nodata, std::move(values));
  } catch (const Error& e) {
    throw parse_error(line_no, e.what());
  }
}

Grid read_ascii_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open grid '" + path.string() + "'");
  return read_ascii_grid(in);
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  return std::string(buf.data(), ptr);
}

void write_ascii_grid(const Grid& grid, std::ostream& out) {
  out << "ncols " << grid.n_cols() << '\n'
      << "nrows " << grid.n_rows() << '\n'
      << "xllcorner " << format_double(grid.origin_easting()) << '\n'
      << "yllcorner " << format_double(grid.origin_northing()) << '\n'
      << "cellsize " << format_double(grid.cell_size()) << '\n'
      << "NODATA_value " << format_double(grid.nodata_value()) << '\n';
  std::string row_text;
  for (std::size_t r = 0; r < grid.n_rows(); ++r) {
    row_text.clear();
    for (std::size_t c = 0; c < grid.n_cols(); ++c) {
      if (c) row_text.push_back(' ');
      row_text += format_double(grid.at(r, c));
    }
    row_text.push_back('\n');
    out << row_text;
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing ascii grid");
}

void write_ascii_grid(const Grid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write grid '" + path.string() + "'");
  write_ascii_grid(grid, out);
}

Grid block_aggregate(const Grid& grid, std::size_t factor) {
  if (factor == 0) throw Error(ErrorKind::InvalidArgument, "aggregation factor must be >= 1");
  const std::size_t rows = grid.n_rows() / factor;
  const std::size_t cols = grid.n_cols() / factor;
  if (rows == 0 || cols == 0)
    throw Error(ErrorKind::InvalidArgument, "aggregation factor larger than grid");

  // Trailing northern rows are dropped, so the lower-left origin stays put.
  const std::size_t row_offset = grid.n_rows() - rows * factor;
  std::vector<double> out(rows * cols, grid.nodata_value());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < factor; ++i) {
        for (std::size_t j = 0; j < factor; ++j) {
          const double v = grid.at(row_offset + r * factor + i, c * factor + j);
          if (grid.is_nodata_value(v)) continue;
          sum += v;
          ++count;
        }
      }
      if (count) out[r * cols + c] = sum / static_cast<double>(count);
    }
  }
  return Grid(rows, cols, grid.cell_size() * static_cast<double>(factor), grid.origin_easting(),
              grid.origin_northing(), grid.nodata_value(), std::move(out));
}

GridStats grid_stats(const Grid& grid) {
  const auto cells = grid.cells();
  auto first = std::find_if(cells.begin(), cells.end(),
                            [&](double v) { return !grid.is_nodata_value(v); });
  if (first == cells.end()) throw Error(ErrorKind::InvalidArgument, "grid has no valid cells");
  const double pivot = *first;

  double sum = 0.0;
  std::size_t n = 0;
  for (double v : cells) {
    if (grid.is_nodata_value(v)) continue;
    sum += v - pivot;
    ++n;
  }
  const double shifted_mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : cells) {
    if (grid.is_nodata_value(v)) continue;
    const double d = (v - pivot) - shifted_mean;
    ss += d * d;
  }
  return GridStats{pivot + shifted_mean, std::sqrt(ss / static_cast<double>(n)), n};
}

}  // namespace deepcov::raster
