#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "pram/optim.hpp"
#include "pram/tensor.hpp"

namespace pram {

struct ParamCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  double epsilon = 0.0;
  double tolerance = 0.0;
  std::vector<ParamCheck> params;

  bool passed() const {
    return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.passed; });
  }
  double max_error() const {
    double m = 0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
  }
};

/// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/// Compares backward() against central differences for every element of
/// every listed parameter. `loss_fn` must rebuild the graph from the current
/// parameter values each call and return a scalar.
template <typename T>
GradcheckReport gradcheck(const std::function<Tensor<T>()>& loss_fn,
                          const std::vector<std::shared_ptr<Parameter<T>>>& params, double epsilon,
                          double tolerance) {
  static_assert(std::is_same_v<T, double>, "gradcheck runs in 64-bit mode");
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw std::invalid_argument("gradcheck: epsilon must lie in [1e-7, 1e-3]");
  if (!(tolerance > 0)) throw std::invalid_argument("gradcheck: tolerance must be positive");

  for (auto& p : params) p->tensor.zero_grad();
  Tensor<T> loss = loss_fn();
  const T reference = loss.item();
  if (loss_fn().item() != reference)
    throw std::runtime_error("gradcheck: loss function is not deterministic");
  backward(loss);

  GradcheckReport report{epsilon, tolerance, {}};
  for (auto& p : params) {
    ParamCheck check;
    check.name = p->name;
    auto& w = p->tensor.values();
    check.elements = w.size();
    const std::vector<T> analytic =
        p->tensor.has_grad() ? p->tensor.grad() : std::vector<T>(w.size(), T{0});
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T saved = w[i];
      w[i] = saved + epsilon;
      const double up = loss_fn().item();
      w[i] = saved - epsilon;
      const double down = loss_fn().item();
      w[i] = saved;
      const double numeric = (up - down) / (2 * epsilon);
      const double err = relative_error(analytic[i], numeric);
      if (err > check.max_rel_error || i == 0) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = analytic[i];
        check.numeric = numeric;
      }
    }
    check.passed = check.max_rel_error < tolerance;
    report.params.push_back(check);
  }
  for (auto& p : params) p->tensor.zero_grad();
  return report;
}

}  // namespace pram
