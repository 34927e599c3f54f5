#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepcov/autograd.hpp"
#include "deepcov/dataset.hpp"
#include "deepcov/kvconfig.hpp"

namespace deepcov::nn {

struct ConvLayerSpec {
  std::size_t out_channels = 128;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  double noise_sigma = 0.05;  // added to the layer input in train mode
  double dropout_rate = 0.2;  // applied after the activation

  bool operator==(const ConvLayerSpec&) const = default;
};

struct DenseLayerSpec {
  std::size_t width = 128;
  double dropout_rate = 0.2;

  bool operator==(const DenseLayerSpec&) const = default;
};

/// Layer recipe. Each conv layer is noise -> conv -> ReLU -> dropout; then an
/// optional average pool, flatten, hidden dense layers (dense -> ReLU ->
/// dropout), and a single linear output unit.
struct ArchConfig {
  std::size_t input_size = 32;
  std::vector<ConvLayerSpec> conv_layers;
  std::size_t pool = 2;  // 1 disables pooling
  std::vector<DenseLayerSpec> dense_layers;
  std::uint64_t seed = 1;

  /// 5 x 128-channel 3x3 convs (strides 2,2,2,1,1, padding 1), pool 2, dense 256 and 128.
  static ArchConfig standard();
  /// Same topology with a different conv width, for desk-scale runs.
  static ArchConfig standard_with_width(std::size_t channels);

  static ArchConfig from_kv(const KvConfig& kv);
  KvConfig to_kv() const;

  /// Hash of everything except the seed.
  std::string fingerprint() const;

  bool operator==(const ArchConfig&) const = default;
};

struct LayerShape {
  std::string layer;
  ag::Shape shape;  // per-sample shape (C, H, W) or (F)
};

/// Per-sample output shapes of every stage; throws on inconsistent shapes.
std::vector<LayerShape> shape_trace(const ArchConfig& arch);

struct ModelParameters {
  std::vector<std::pair<std::string, ag::Var>> tensors;

  std::size_t count() const;
  const ag::Var& get(const std::string& name) const;
  ModelParameters clone() const;
  void copy_values_from(const ModelParameters& other);
  void zero_grads();
};

std::size_t parameter_count(const ModelParameters& params);

/// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases.
ModelParameters build_network(const ArchConfig& arch, std::uint64_t seed);

/// Batch N x 1 x k x k -> predictions (N). In train mode, layer l draws its
/// noise and dropout masks from streams derived from (noise_seed, l).
ag::Var forward(const ModelParameters& params, const ArchConfig& arch, const ag::Var& batch,
                ag::Mode mode, std::uint64_t noise_seed = 0,
                std::vector<LayerShape>* trace = nullptr);

/// Trained network plus the target standardisation applied during training.
struct Model {
  ArchConfig arch;
  ModelParameters params;
  double target_mean = 0.0;
  double target_sd = 1.0;
};

/// Packs patches into an N x 1 x k x k tensor.
ag::Tensor pack_batch(std::span<const data::Patch* const> patches, std::size_t k);

/// Eval-mode predictions on the target scale. Each sample's value depends only
/// on its own patch, so the result is independent of batching.
std::vector<double> predict(const Model& model, std::span<const data::Patch* const> patches,
                            std::size_t batch_size = 256);

inline constexpr int kParamFormatVersion = 1;
inline constexpr const char* kParamMagic = "DEEPCOV-PARAMS";

/// Layout: magic line, one-line JSON header (version, architecture and its
/// fingerprint, tensor names/shapes, target scaling), then little-endian f64
/// values in header order.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
/// Loads and refuses files whose architecture fingerprint differs from `arch`.
Model load_model(const std::filesystem::path& path, const ArchConfig& arch);

void save_parameters(const ModelParameters& params, const ArchConfig& arch,
                     const std::filesystem::path& path);
ModelParameters load_parameters(const std::filesystem::path& path, const ArchConfig& arch);

}  // namespace deepcov::nn
