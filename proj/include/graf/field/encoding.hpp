#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "graf/diffcore/var.hpp"

namespace graf::field {

struct EncodingConfig {
  int l_x = 10;
  int l_d = 4;
  bool enabled = true;

  void validate() const {
    if (l_x < 0 || l_d < 0) throw std::invalid_argument("frequency counts must be non-negative");
    if (enabled && l_x > 0 && l_d > 0 && !(l_d < l_x)) {
      throw std::invalid_argument("direction frequencies must be fewer than location frequencies");
    }
  }
};

// Width of the encoding of an n-vector.
inline std::size_t encoded_dim(std::size_t n, int frequencies, bool enabled) {
  return enabled && frequencies > 0 ? n * 2 * static_cast<std::size_t>(frequencies) : n;
}

// (sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)) per component.
inline std::vector<double> positional_encode(const std::vector<double>& p, int frequencies) {
  if (frequencies < 0) throw std::invalid_argument("frequency count must be non-negative");
  if (frequencies == 0) return p;
  std::vector<double> out;
  out.reserve(p.size() * 2 * static_cast<std::size_t>(frequencies));
  for (double v : p) {
    for (int l = 0; l < frequencies; ++l) {
      const double arg = std::ldexp(std::numbers::pi, l) * v;
      out.push_back(std::sin(arg));
      out.push_back(std::cos(arg));
    }
  }
  return out;
}

// Batched form on the tape: rows of `x` (M x n) map to rows of width 2Ln.
template <typename T>
ad::Var<T> positional_encode(const ad::Var<T>& x, int frequencies, bool enabled = true) {
  if (!enabled || frequencies == 0) return x;
  if (x.value().rank() != 2) throw ad::ShapeError("positional_encode: expected M x n input, got " + ad::to_string(x.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const std::size_t lf = static_cast<std::size_t>(frequencies);
  ad::Tensor<T> freq(ad::Shape{n, n * lf}, T(0));
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t l = 0; l < lf; ++l) freq.at(c, c * lf + l) = static_cast<T>(std::ldexp(std::numbers::pi, static_cast<int>(l)));
  const ad::Var<T> scaled = ad::reshape(ad::matmul(x, ad::constant(std::move(freq))), ad::Shape{m, n * lf, 1});
  const ad::Var<T> both = ad::concat<T>({ad::sin(scaled), ad::cos(scaled)}, 2);
  return ad::reshape(both, ad::Shape{m, 2 * n * lf});
}

}  // namespace graf::field
