#pragma once

// Spectral normalization by power iteration on a persistent left singular vector.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "graf/core/rng.hpp"
#include "graf/diffcore/var.hpp"

namespace graf::disc {

inline constexpr double kSpectralEps = 1e-12;

namespace detail {

// y = W^T u for W (rows x cols), accumulated in double.
template <typename T>
std::vector<double> wt_times(const ad::Tensor<T>& w, const std::vector<double>& u) {
  const std::size_t rows = w.shape()[0], cols = w.shape()[1];
  std::vector<double> y(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] += static_cast<double>(row[j]) * u[i];
  }
  return y;
}

template <typename T>
std::vector<double> w_times(const ad::Tensor<T>& w, const std::vector<double>& v) {
  const std::size_t rows = w.shape()[0], cols = w.shape()[1];
  std::vector<double> y(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = w.data() + i * cols;
    double acc = 0;
    for (std::size_t j = 0; j < cols; ++j) acc += static_cast<double>(row[j]) * v[j];
    y[i] = acc;
  }
  return y;
}

inline double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void normalize(std::vector<double>& v, double eps) {
  const double n = std::max(norm2(v), eps);
  for (double& x : v) x /= n;
}

}  // namespace detail

// Persistent estimate of the top left singular vector of an (out x fan_in) weight.
template <typename T>
class SpectralState {
 public:
  SpectralState() = default;
  SpectralState(std::vector<double> u, double eps = kSpectralEps) : u_(std::move(u)), eps_(eps) {
    detail::normalize(u_, eps_);
  }

  // Adopts a stored estimate as is.
  static SpectralState restore(std::vector<double> u, double eps = kSpectralEps) {
    SpectralState s;
    s.u_ = std::move(u);
    s.eps_ = eps;
    return s;
  }

  static SpectralState random(Rng& rng, std::size_t rows, double eps = kSpectralEps) {
    std::vector<double> u(rows);
    for (double& x : u) x = rng.normal();
    return SpectralState(std::move(u), eps);
  }

  const std::vector<double>& u() const { return u_; }
  void set_u(std::vector<double> u) {
    u_ = std::move(u);
    detail::normalize(u_, eps_);
  }

  // v = W^T u / |W^T u|, u = W v / |W v|, repeated.
  void iterate(const ad::Tensor<T>& w, int iterations) {
    check(w);
    for (int k = 0; k < iterations; ++k) {
      std::vector<double> v = detail::wt_times(w, u_);
      detail::normalize(v, eps_);
      u_ = detail::w_times(w, v);
      detail::normalize(u_, eps_);
    }
  }

  // sigma = u^T W v with v = W^T u / |W^T u|, i.e. |W^T u|.
  double sigma(const ad::Tensor<T>& w) const {
    check(w);
    return detail::norm2(detail::wt_times(w, u_));
  }

  // W / max(sigma, eps); the scale is a constant on the tape.
  ad::Var<T> normalize(const ad::Var<T>& w) const {
    const double s = std::max(sigma(w.value()), eps_);
    return ad::mul(w, ad::scalar<T>(static_cast<T>(1.0 / s)));
  }

 private:
  void check(const ad::Tensor<T>& w) const {
    if (w.rank() != 2 || w.shape()[0] != u_.size()) {
      throw ad::ShapeError("spectral norm: weight " + ad::to_string(w.shape()) + " does not match u of length " +
                           std::to_string(u_.size()));
    }
  }

  std::vector<double> u_;
  double eps_ = kSpectralEps;
};

// One-shot convenience: run `iterations` steps on `state`, then normalize.
template <typename T>
ad::Var<T> spectral_normalize(const ad::Var<T>& w, SpectralState<T>& state, int iterations = 1) {
  state.iterate(w.value(), iterations);
  return state.normalize(w);
}

}  // namespace graf::disc
