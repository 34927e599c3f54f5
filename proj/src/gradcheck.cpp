#include "deepcov/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deepcov/error.hpp"

namespace deepcov::ag {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Probe {
  double value;
  std::uint64_t kinks;
};

Probe evaluate(const std::function<Var()>& loss) {
  KinkMonitor monitor;
  NoGradGuard no_grad;
  const Var out = loss();
  if (out.value().size() != 1) throw Error(ErrorKind::Shape, "grad_check: loss is not scalar");
  return {out.value()[0], monitor.signature()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Var()>& loss,
                           const std::vector<std::pair<std::string, Var>>& params,
                           const GradCheckOptions& options) {
  for (const auto& [name, p] : params) p.node()->grad = Tensor();
  {
    const Var out = loss();
    backward(out);
  }
  const std::uint64_t base_kinks = evaluate(loss).kinks;

  GradCheckReport report;
  Rng rng = make_rng(options.seed, {streams::kGradCheck});
  for (const auto& [name, param] : params) {
    const Tensor analytic = param.grad();
    Tensor& value = param.node()->value;
    std::vector<std::size_t> order(value.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.max_elements_per_param) std::shuffle(order.begin(), order.end(), rng);
    const std::size_t want = options.max_elements_per_param ? std::min(options.max_elements_per_param, order.size())
                                                            : order.size();

    ParamGradCheck pc;
    pc.name = name;
    for (std::size_t idx : order) {
      if (pc.checked == want) break;
      const double saved = value[idx];
      value[idx] = saved + options.h;
      const Probe plus = evaluate(loss);
      value[idx] = saved - options.h;
      const Probe minus = evaluate(loss);
      value[idx] = saved;
      if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
        ++pc.skipped_nonsmooth;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.h);
      pc.max_rel_error = std::max(pc.max_rel_error, relative_error(analytic[idx], numeric));
      ++pc.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(std::move(pc));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace deepcov::ag
