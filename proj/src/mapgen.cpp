#include "deepcov/mapgen.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "deepcov/dataset.hpp"
#include "deepcov/error.hpp"
#include "deepcov/fingerprint.hpp"

namespace deepcov::mapgen {

using raster::format_double;

void CovariateGrid::write_manifest(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["kind"] = "covariate_grid";
  j["model_fingerprint"] = model_fingerprint;
  j["source_fingerprint"] = source_fingerprint;
  j["stride"] = stride;
  if (!warning.empty()) j["warning"] = warning;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::string model_fingerprint(const nn::Model& model) {
  std::string text = model.arch.fingerprint() + ":" + format_double(model.target_mean) + ":" +
                     format_double(model.target_sd) + ":";
  for (const auto& [name, v] : model.params.tensors) {
    const auto bytes = std::as_bytes(v.value().data());
    text += name + "=" + sha256_hex(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size())) + ";";
  }
  return sha256_hex(text);
}

std::string grid_fingerprint(const raster::Grid& grid) {
  std::ostringstream header;
  header << grid.n_rows() << ' ' << grid.n_cols() << ' ' << format_double(grid.cell_size()) << ' '
         << format_double(grid.origin_easting()) << ' ' << format_double(grid.origin_northing()) << ' '
         << format_double(grid.nodata_value()) << ':';
  const auto bytes = std::as_bytes(grid.cells());
  return sha256_hex(header.str() +
                    sha256_hex(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size())));
}

raster::Grid strided_geometry(const raster::Grid& source, std::size_t stride, double fill) {
  if (stride == 0) throw Error(ErrorKind::InvalidArgument, "stride must be >= 1");
  if (stride == 1) return source.with_same_geometry(fill);
  const std::size_t rows = (source.n_rows() + stride - 1) / stride;
  const std::size_t cols = (source.n_cols() + stride - 1) / stride;
  const double cs = source.cell_size();
  const double s = static_cast<double>(stride);
  const double origin_e = source.origin_easting() + 0.5 * cs - 0.5 * s * cs;
  const double origin_n = source.origin_northing() + (static_cast<double>(source.n_rows()) - 0.5) * cs -
                          (static_cast<double>(rows) - 0.5) * s * cs;
  return raster::Grid(rows, cols, s * cs, origin_e, origin_n, source.nodata_value(),
                      std::vector<double>(rows * cols, fill));
}

CovariateGrid predict_grid(const nn::Model& model, const raster::Grid& grid, double national_sd,
                           const PredictOptions& options) {
  if (options.stride == 0) throw Error(ErrorKind::InvalidArgument, "stride must be >= 1");
  if (options.batch_size == 0) throw Error(ErrorKind::InvalidArgument, "batch size must be >= 1");
  const std::size_t k = model.arch.input_size;
  CovariateGrid out{strided_geometry(grid, options.stride, grid.nodata_value()), model_fingerprint(model),
                    grid_fingerprint(grid), options.stride, {}};
  if (grid.n_rows() < k || grid.n_cols() < k) {
    out.warning = "grid smaller than the " + std::to_string(k) + "-cell window; every node is nodata";
    return out;
  }

  // Interior nodes whose window fits; extraction still rejects nodata windows.
  std::vector<std::size_t> nodes;
  const std::size_t rows = out.grid.n_rows(), cols = out.grid.n_cols();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) nodes.push_back(i * cols + j);

  const std::size_t threads = std::max<std::size_t>(1, options.threads);
  const std::size_t chunk = options.batch_size;
  const std::size_t n_chunks = (nodes.size() + chunk - 1) / chunk;
  auto cells = out.grid.cells();

  auto work = [&](std::size_t worker) {
    std::vector<data::Patch> patches;
    std::vector<std::size_t> targets;
    std::vector<const data::Patch*> ptrs;
    for (std::size_t c = worker; c < n_chunks; c += threads) {
      patches.clear();
      targets.clear();
      const std::size_t end = std::min(nodes.size(), (c + 1) * chunk);
      for (std::size_t idx = c * chunk; idx < end; ++idx) {
        const std::size_t node = nodes[idx];
        const long row = static_cast<long>((node / cols) * options.stride);
        const long col = static_cast<long>((node % cols) * options.stride);
        data::RawPatch raw = data::extract_patch_at(grid, row, col, k);
        if (raw.status != data::PatchStatus::Ok) continue;
        patches.push_back(data::normalize_patch(raw.values, k, national_sd));
        targets.push_back(node);
      }
      if (patches.empty()) continue;
      ptrs.clear();
      for (const data::Patch& p : patches) ptrs.push_back(&p);
      const std::vector<double> pred = nn::predict(model, ptrs, options.batch_size);
      for (std::size_t i = 0; i < pred.size(); ++i) cells[targets[i]] = pred[i];
    }
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

raster::Grid compose_prediction(const raster::Grid& covariate, const raster::Grid& residual_field) {
  if (!covariate.same_geometry(residual_field))
    throw Error(ErrorKind::InvalidArgument, "covariate and residual grids are not aligned");
  raster::Grid out = covariate.with_same_geometry(covariate.nodata_value());
  auto o = out.cells();
  const auto a = covariate.cells();
  const auto b = residual_field.cells();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (covariate.is_nodata_value(a[i]) || residual_field.is_nodata_value(b[i])) continue;
    o[i] = a[i] + b[i];
  }
  return out;
}

}  // namespace deepcov::mapgen
