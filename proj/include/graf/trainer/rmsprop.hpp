#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "graf/diffcore/param_store.hpp"

namespace graf::train {

template <typename T>
struct OptState {
  std::map<std::string, ad::Tensor<T>> acc;
  std::uint64_t step = 0;

  static OptState zeros_like(const ad::ParamStore<T>& params) {
    OptState s;
    for (const auto& name : params.trainable_names()) s.acc.emplace(name, ad::Tensor<T>::zeros(params.at(name).shape()));
    return s;
  }
};

struct RmsPropConfig {
  double lr = 1e-3;
  double decay = 0.99;
  double eps = 1e-8;
};

// acc <- decay acc + (1 - decay) g^2;  p <- p - lr g / (sqrt(acc) + eps).
template <typename T>
void rmsprop_step(ad::ParamStore<T>& params, const std::map<std::string, ad::Tensor<T>>& grads, OptState<T>& state,
                  const RmsPropConfig& cfg) {
  const auto names = params.trainable_names();
  if (grads.size() != names.size() || state.acc.size() != names.size()) {
    throw std::invalid_argument("rmsprop: gradient/state sets do not match the trainable parameters");
  }
  const T decay = static_cast<T>(cfg.decay), keep = static_cast<T>(1.0 - cfg.decay), lr = static_cast<T>(cfg.lr),
          eps = static_cast<T>(cfg.eps);
  for (const auto& name : names) {
    auto git = grads.find(name);
    auto ait = state.acc.find(name);
    if (git == grads.end() || ait == state.acc.end()) throw std::invalid_argument("rmsprop: no gradient/state for '" + name + "'");
    ad::Tensor<T>& p = params.at(name).mutable_value();
    const ad::Tensor<T>& g = git->second;
    ad::Tensor<T>& a = ait->second;
    if (g.shape() != p.shape() || a.shape() != p.shape()) {
      throw ad::ShapeError("rmsprop: '" + name + "' parameter " + ad::to_string(p.shape()) + ", gradient " + ad::to_string(g.shape()) +
                           ", state " + ad::to_string(a.shape()));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      a[i] = decay * a[i] + keep * g[i] * g[i];
      p[i] -= lr * g[i] / (std::sqrt(a[i]) + eps);
    }
  }
  ++state.step;
}

}  // namespace graf::train
