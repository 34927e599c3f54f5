#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "deepcov/autograd.hpp"

namespace deepcov::ag {

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// 0 checks every element; otherwise a seeded random sample per parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
};

struct ParamGradCheck {
  std::string name;
  std::size_t checked = 0;
  /// Probes whose +h/-h evaluations saw a different ReLU activation pattern.
  std::size_t skipped_nonsmooth = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h.
/// `loss` must rebuild its graph from the current values of `params` on each
/// call and return a scalar; it must be deterministic.
GradCheckReport grad_check(const std::function<Var()>& loss,
                           const std::vector<std::pair<std::string, Var>>& params,
                           const GradCheckOptions& options = {});

}  // namespace deepcov::ag
