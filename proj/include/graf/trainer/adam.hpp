#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "graf/diffcore/param_store.hpp"

namespace graf::train {

template <typename T>
struct AdamState {
  std::map<std::string, ad::Tensor<T>> m, v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ad::ParamStore<T>& params) {
    AdamState s;
    for (const auto& name : params.trainable_names()) {
      s.m.emplace(name, ad::Tensor<T>::zeros(params.at(name).shape()));
      s.v.emplace(name, ad::Tensor<T>::zeros(params.at(name).shape()));
    }
    return s;
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2;  p <- p - lr m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adam_step(ad::ParamStore<T>& params, const std::map<std::string, ad::Tensor<T>>& grads, AdamState<T>& state, const AdamConfig& cfg) {
  const auto names = params.trainable_names();
  if (grads.size() != names.size() || state.m.size() != names.size() || state.v.size() != names.size()) {
    throw std::invalid_argument("adam: gradient/state sets do not match the trainable parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2), k1 = static_cast<T>(1 - cfg.beta1),
          k2 = static_cast<T>(1 - cfg.beta2), eps = static_cast<T>(cfg.eps);
  const T c1 = static_cast<T>(1 / (1 - std::pow(cfg.beta1, t))), c2 = static_cast<T>(1 / (1 - std::pow(cfg.beta2, t)));
  const T lr = static_cast<T>(cfg.lr);
  for (const auto& name : names) {
    auto git = grads.find(name);
    auto mit = state.m.find(name);
    auto vit = state.v.find(name);
    if (git == grads.end() || mit == state.m.end() || vit == state.v.end()) {
      throw std::invalid_argument("adam: no gradient/state for '" + name + "'");
    }
    ad::Tensor<T>& p = params.at(name).mutable_value();
    const ad::Tensor<T>& g = git->second;
    ad::Tensor<T>& m = mit->second;
    ad::Tensor<T>& v = vit->second;
    if (g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ad::ShapeError("adam: '" + name + "' parameter " + ad::to_string(p.shape()) + ", gradient " + ad::to_string(g.shape()));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + k1 * g[i];
      v[i] = b2 * v[i] + k2 * g[i] * g[i];
      p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
  }
}

}  // namespace graf::train
