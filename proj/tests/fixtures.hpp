#pragma once

#include <functional>

#include "deepcov/dataset.hpp"
#include "deepcov/network.hpp"
#include "support.hpp"

namespace testing {

/// Dataset of n random k x k patches with targets from `target(patch)`,
/// folds assigned with the given layout.
inline deepcov::data::Dataset patch_dataset(std::size_t n, std::size_t k, std::uint64_t seed,
                                            const std::function<double(const deepcov::data::Patch&)>& target,
                                            const deepcov::data::FoldAssignment& folds) {
  deepcov::data::Dataset ds;
  ds.window = k;
  ds.national_sd = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> raw = uniform_values(k * k, -1.0, 1.0, seed * 1000003 + i);
    ds.patches.push_back(deepcov::data::normalize_patch(raw, k, 1.0));
    ds.targets.push_back(target(ds.patches.back()));
    ds.sites.push_back({"site#" + std::to_string(i), static_cast<double>(i), 0.0, ds.targets.back(), false, 0.0});
  }
  deepcov::data::assign_folds(ds, folds);
  return ds;
}

/// Small conv net without noise or dropout.
inline deepcov::nn::ArchConfig tiny_arch(std::size_t k = 8, std::size_t channels = 16) {
  deepcov::nn::ArchConfig a;
  a.input_size = k;
  a.conv_layers = {{channels, 3, 2, 1, 0.0, 0.0}, {channels, 3, 2, 1, 0.0, 0.0}};
  a.pool = 1;
  a.dense_layers = {{32, 0.0}};
  return a;
}

}  // namespace testing
