#pragma once

// Convolutional patch discriminator over NHWC patches:
// [SN conv -> instance norm (not on the first layer) -> leaky ReLU]* -> flatten -> SN linear -> logit.

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/diffcore/param_store.hpp"
#include "graf/discriminator/spectral.hpp"

namespace graf::disc {

inline constexpr double kInstanceNormEps = 1e-5;

// x: B x H x W x C. Per (sample, channel) standardization over spatial positions,
// followed by y * gamma + beta when both are given (shape C).
template <typename T>
ad::Var<T> instance_norm(const ad::Var<T>& x, const ad::Var<T>* gamma = nullptr, const ad::Var<T>* beta = nullptr,
                         double eps = kInstanceNormEps) {
  if (x.value().rank() != 4) throw ad::ShapeError("instance_norm: expected B x H x W x C, got " + ad::to_string(x.shape()));
  const std::size_t b = x.shape()[0], hw = x.shape()[1] * x.shape()[2], c = x.shape()[3];
  if (hw == 0) throw ad::ShapeError("instance_norm: empty spatial extent");
  const ad::Var<T> flat = ad::reshape(x, ad::Shape{b, hw, c});
  const ad::Var<T> centered = flat - ad::mean(flat, 1, true);
  const ad::Var<T> var = ad::mean(ad::square(centered), 1, true);
  ad::Var<T> y = centered / ad::sqrt(var + static_cast<T>(eps));
  if (gamma) y = y * *gamma;
  if (beta) y = y + *beta;
  return ad::reshape(y, x.shape());
}

struct DiscArchitecture {
  std::vector<int> channels{64, 128, 256};
  int kernel = 4;
  int stride = 2;
  double leaky_slope = 0.2;
  int sn_power_iters = 1;      // per training step
  int sn_init_iters = 20;      // at initialization
  bool instance_norm = true;

  int padding() const { return (kernel - stride) / 2; }

  // Spatial size of the final feature map for a K x K input.
  int final_size(int k) const {
    int s = k;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const int padded = s + 2 * padding();
      if (padded < kernel) return 0;
      s = (padded - kernel) / stride + 1;
    }
    return s;
  }

  void validate(int k) const {
    if (channels.empty()) throw std::invalid_argument("disc.channels must list at least one layer");
    for (int c : channels)
      if (c < 1) throw std::invalid_argument("disc.channels entries must be >= 1");
    if (kernel < 1 || stride < 1 || stride > kernel) throw std::invalid_argument("disc.kernel/stride must satisfy 1 <= stride <= kernel");
    if (!(leaky_slope >= 0 && leaky_slope < 1)) throw std::invalid_argument("disc.leaky_slope must lie in [0, 1)");
    if (sn_power_iters < 1 || sn_init_iters < 0) throw std::invalid_argument("disc power iteration counts must be positive");
    if (final_size(k) < 1) {
      throw std::invalid_argument("discriminator ladder reduces a " + std::to_string(k) + "x" + std::to_string(k) +
                                  " patch below 1x1");
    }
  }
};

template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(DiscArchitecture arch, int patch, ad::ParamStore<T> params)
      : arch_(std::move(arch)), patch_(patch), params_(std::move(params)) {}

  // Weights (out x k*k*in) uniform in +-1/sqrt(fan_in); biases 0; norm gamma 1, beta 0;
  // spectral vectors random, then refined by sn_init_iters power iterations.
  static Discriminator init(Rng& rng, const DiscArchitecture& arch, int patch) {
    arch.validate(patch);
    ad::ParamStore<T> ps;
    auto layer = [&](const std::string& name, std::size_t out, std::size_t fan_in) {
      ad::Tensor<T> w(ad::Shape{out, fan_in});
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
      auto state = SpectralState<T>::random(rng, out);
      state.iterate(w, arch.sn_init_iters);
      ps.add(name + ".weight", std::move(w));
      ps.add(name + ".bias", ad::Tensor<T>::zeros({out}));
      ps.add(name + ".sn_u", to_tensor(state.u()), false);
    };
    std::size_t in = 3;
    const std::size_t kk = static_cast<std::size_t>(arch.kernel) * static_cast<std::size_t>(arch.kernel);
    for (std::size_t i = 0; i < arch.channels.size(); ++i) {
      const std::size_t out = static_cast<std::size_t>(arch.channels[i]);
      const std::string name = "conv." + std::to_string(i);
      layer(name, out, kk * in);
      if (i > 0 && arch.instance_norm) {
        ps.add("norm." + std::to_string(i) + ".gamma", ad::Tensor<T>::ones({out}));
        ps.add("norm." + std::to_string(i) + ".beta", ad::Tensor<T>::zeros({out}));
      }
      in = out;
    }
    const std::size_t fs = static_cast<std::size_t>(arch.final_size(patch));
    layer("head", 1, fs * fs * in);
    return Discriminator(arch, patch, std::move(ps));
  }

  const DiscArchitecture& arch() const { return arch_; }
  int patch_size() const { return patch_; }
  ad::ParamStore<T>& params() { return params_; }
  const ad::ParamStore<T>& params() const { return params_; }

  std::vector<std::string> spectral_layers() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < arch_.channels.size(); ++i) names.push_back("conv." + std::to_string(i));
    names.push_back("head");
    return names;
  }

  SpectralState<T> spectral_state(const std::string& layer) const {
    const auto& u = params_.at(layer + ".sn_u").value();
    std::vector<double> d(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) d[i] = static_cast<double>(u[i]);
    return SpectralState<T>::restore(std::move(d));
  }

  // Advances every spectral estimate by `iterations` power steps (default: the per-step count).
  void power_step(int iterations = -1) {
    const int it = iterations < 0 ? arch_.sn_power_iters : iterations;
    for (const auto& layer : spectral_layers()) {
      auto st = spectral_state(layer);
      st.iterate(params_.at(layer + ".weight").value(), it);
      params_.at(layer + ".sn_u").mutable_value() = to_tensor(st.u());
    }
  }

  // Weight divided by its current spectral estimate, or by a frozen scale when set.
  ad::Var<T> normalized_weight(const std::string& layer) const {
    const auto& w = params_.at(layer + ".weight");
    auto it = frozen_.find(layer);
    if (it == frozen_.end()) return spectral_state(layer).normalize(w);
    return ad::mul(w, ad::scalar<T>(static_cast<T>(1.0 / std::max(it->second, kSpectralEps))));
  }

  // Pins every layer's divisor at its present estimate, so the logit becomes a
  // plain function of the weights (used for finite-difference checks).
  void freeze_scales() {
    frozen_.clear();
    for (const auto& layer : spectral_layers()) frozen_[layer] = spectral_state(layer).sigma(params_.at(layer + ".weight").value());
  }
  void unfreeze_scales() { frozen_.clear(); }

  // patches: B x K x K x 3 -> logits: B.
  ad::Var<T> forward(const ad::Var<T>& patches) const {
    const ad::Shape& s = patches.shape();
    const std::size_t k = static_cast<std::size_t>(patch_);
    if (s.size() != 4 || s[1] != k || s[2] != k || s[3] != 3) {
      throw ad::ShapeError("discriminator: expected B x " + std::to_string(k) + " x " + std::to_string(k) + " x 3 patches, got " +
                           ad::to_string(s));
    }
    const std::size_t b = s[0];
    const T slope = static_cast<T>(arch_.leaky_slope);
    ad::Var<T> h = patches;
    for (std::size_t i = 0; i < arch_.channels.size(); ++i) {
      const std::string name = "conv." + std::to_string(i);
      h = ad::conv2d(h, normalized_weight(name), static_cast<std::size_t>(arch_.kernel), static_cast<std::size_t>(arch_.stride),
                     static_cast<std::size_t>(arch_.padding()));
      h = h + params_.at(name + ".bias");
      if (i > 0 && arch_.instance_norm) {
        const std::string nn = "norm." + std::to_string(i);
        h = instance_norm(h, &params_.at(nn + ".gamma"), &params_.at(nn + ".beta"));
      }
      h = ad::leaky_relu(h, slope);
    }
    const std::size_t feat = h.size() / b;
    const ad::Var<T> flat = ad::reshape(h, ad::Shape{b, feat});
    const ad::Var<T> logit = ad::matmul(flat, ad::transpose(normalized_weight("head"))) + params_.at("head.bias");
    return ad::reshape(logit, ad::Shape{b});
  }

 private:
  static ad::Tensor<T> to_tensor(const std::vector<double>& u) {
    ad::Tensor<T> t(ad::Shape{u.size()});
    for (std::size_t i = 0; i < u.size(); ++i) t[i] = static_cast<T>(u[i]);
    return t;
  }

  DiscArchitecture arch_;
  int patch_ = 16;
  ad::ParamStore<T> params_;
  std::map<std::string, double> frozen_;
};

}  // namespace graf::disc
