#pragma once

#include <filesystem>
#include <string>

#include "deepcov/network.hpp"
#include "deepcov/raster.hpp"

namespace deepcov::mapgen {

struct CovariateGrid {
  raster::Grid grid;
  std::string model_fingerprint;
  std::string source_fingerprint;
  std::size_t stride = 1;
  std::string warning;

  /// Sidecar JSON with the provenance fields.
  void write_manifest(const std::filesystem::path& path) const;
};

/// Hash of the architecture fingerprint, target scaling and every parameter value.
std::string model_fingerprint(const nn::Model& model);
/// Hash of the grid's georeferencing and cell values.
std::string grid_fingerprint(const raster::Grid& grid);

/// Geometry of the stride-s node lattice: node (i, j) sits on source cell
/// (i*s, j*s) and the output cell centred on it has size s * cell_size.
raster::Grid strided_geometry(const raster::Grid& source, std::size_t stride, double fill);

struct PredictOptions {
  std::size_t stride = 1;
  std::size_t batch_size = 256;
  std::size_t threads = 1;
};

/// Runs extract -> normalise -> eval-mode forward at every stride-th cell.
/// Nodes whose window leaves the grid or touches nodata are nodata.
CovariateGrid predict_grid(const nn::Model& model, const raster::Grid& grid, double national_sd,
                           const PredictOptions& options = {});

/// Cell-wise covariate + residual; nodata in either input gives nodata.
raster::Grid compose_prediction(const raster::Grid& covariate, const raster::Grid& residual_field);

}  // namespace deepcov::mapgen
