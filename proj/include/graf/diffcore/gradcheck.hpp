#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "graf/diffcore/var.hpp"

namespace graf::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

class NonDeterministicFunction : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
using MultiFn = std::function<Var<T>(const std::vector<Var<T>>&)>;

// Compares reverse-mode gradients of a scalar function of several tensors
// against central differences. Error per coordinate is
// |analytic - numeric| / max(1, |analytic|).
template <typename T>
GradCheckResult finite_diff_check(const MultiFn<T>& f, const std::vector<Tensor<T>>& inputs, T step) {
  std::vector<Var<T>> leaves;
  for (const auto& x : inputs) leaves.emplace_back(x, true);
  const Var<T> root = f(leaves);
  if (root.size() != 1) throw GradError("finite_diff_check: function is not scalar-valued");
  const std::vector<Var<T>> analytic = grad(root, leaves);

  NoGradGuard no_grad;
  auto eval = [&](const std::vector<Tensor<T>>& xs) {
    std::vector<Var<T>> vs;
    for (const auto& x : xs) vs.emplace_back(x, false);
    return f(vs).item();
  };
  const T base_a = eval(inputs);
  const T base_b = eval(inputs);
  if (!(base_a == base_b)) throw NonDeterministicFunction("finite_diff_check: repeated evaluation differs");

  GradCheckResult res;
  std::vector<Tensor<T>> probe = inputs;
  std::size_t flat = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i, ++flat) {
      const T orig = probe[t][i];
      probe[t][i] = orig + step;
      const T plus = eval(probe);
      probe[t][i] = orig - step;
      const T minus = eval(probe);
      probe[t][i] = orig;
      const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * static_cast<double>(step));
      const double a = static_cast<double>(analytic[t].value()[i]);
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (flat == 0 || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_index = flat;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  res.coordinates = flat;
  return res;
}

template <typename T>
GradCheckResult finite_diff_check(const std::function<Var<T>(const Var<T>&)>& f, const Tensor<T>& x, T step) {
  MultiFn<T> g = [&](const std::vector<Var<T>>& v) { return f(v[0]); };
  return finite_diff_check<T>(g, std::vector<Tensor<T>>{x}, step);
}

}  // namespace graf::ad
