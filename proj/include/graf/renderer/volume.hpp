#pragma once

// Stratified depth sampling and front-to-back alpha compositing.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/core/rng.hpp"
#include "graf/diffcore/var.hpp"

namespace graf::render {

struct DepthRange {
  double t_near = 1;
  double t_far = 2;

  void validate() const {
    if (!(t_near > 0 && t_near < t_far) || !std::isfinite(t_far)) {
      throw std::invalid_argument("depth range must satisfy 0 < t_near < t_far, got [" + std::to_string(t_near) + ", " +
                                  std::to_string(t_far) + "]");
    }
  }

  // [|c| - b, |c| + b] for a camera at distance |c| from the origin.
  static DepthRange around_origin(double camera_distance, double bound) {
    DepthRange r{camera_distance - bound, camera_distance + bound};
    r.validate();
    return r;
  }

  double bin_width(int n) const { return (t_far - t_near) / n; }
};

// t_i = t_n + (i + u_i) (t_f - t_n) / N for caller-supplied offsets u_i in [0, 1).
inline std::vector<double> stratified_depths(const std::vector<double>& offsets, const DepthRange& range) {
  range.validate();
  if (offsets.empty()) throw std::invalid_argument("stratified_depths: need at least one sample");
  const int n = static_cast<int>(offsets.size());
  const double w = range.bin_width(n);
  std::vector<double> t(offsets.size());
  for (int i = 0; i < n; ++i) {
    const double u = offsets[static_cast<std::size_t>(i)];
    if (!(u >= 0 && u < 1)) throw std::invalid_argument("stratified_depths: offset outside [0, 1)");
    t[static_cast<std::size_t>(i)] = range.t_near + (i + u) * w;
  }
  return t;
}

inline std::vector<double> stratified_depths(Rng& rng, const DepthRange& range, int n) {
  if (n < 1) throw std::invalid_argument("stratified_depths: N must be >= 1");
  std::vector<double> u(static_cast<std::size_t>(n));
  for (auto& v : u) v = rng.uniform();
  return stratified_depths(u, range);
}

// Deterministic variant used for inference.
inline std::vector<double> bin_midpoints(const DepthRange& range, int n) {
  if (n < 1) throw std::invalid_argument("bin_midpoints: N must be >= 1");
  return stratified_depths(std::vector<double>(static_cast<std::size_t>(n), 0.5), range);
}

// Neighbor spacings along a unit-direction ray plus the mean bin width at the end.
inline std::vector<double> sample_spacings(const std::vector<double>& depths, const DepthRange& range) {
  std::vector<double> d(depths.size());
  for (std::size_t i = 0; i + 1 < depths.size(); ++i) d[i] = depths[i + 1] - depths[i];
  d.back() = range.bin_width(static_cast<int>(depths.size()));
  return d;
}

template <typename T>
struct Composite {
  ad::Var<T> color;  // (..., 3)
  ad::Var<T> alpha;  // (...), accumulated opacity
};

// rgb (..., N, 3), sigma (..., N), delta (..., N).
// alpha_i = 1 - exp(-sigma_i delta_i), T_i = exp(-sum_{j<i} sigma_j delta_j),
// color = sum T_i alpha_i c_i. Accumulated alpha sum T_i alpha_i is evaluated in the
// telescoped form 1 - exp(-sum sigma_i delta_i), which stays inside [0, 1] under rounding.
template <typename T>
Composite<T> composite(const ad::Var<T>& rgb, const ad::Var<T>& sigma, const ad::Var<T>& delta) {
  const ad::Shape& ss = sigma.shape();
  if (ss.empty()) throw ad::ShapeError("composite: sigma must have a sample axis");
  if (delta.shape() != ss) throw ad::ShapeError("composite: delta " + ad::to_string(delta.shape()) + " vs sigma " + ad::to_string(ss));
  ad::Shape want_rgb = ss;
  want_rgb.push_back(3);
  if (rgb.shape() != want_rgb) throw ad::ShapeError("composite: rgb " + ad::to_string(rgb.shape()) + ", expected " + ad::to_string(want_rgb));
  for (T v : sigma.value().values())
    if (!(v >= T(0))) throw std::invalid_argument("composite: density must be non-negative");
  for (T v : delta.value().values())
    if (!(v > T(0))) throw std::invalid_argument("composite: sample spacing must be positive");

  const std::size_t axis = ss.size() - 1;
  const ad::Var<T> tau = sigma * delta;
  const ad::Var<T> alpha = T(1) - ad::exp(-tau);
  const ad::Var<T> trans = ad::exp(-ad::cumsum(tau, axis, /*exclusive=*/true));
  const ad::Var<T> w = trans * alpha;
  ad::Shape w3 = ss;
  w3.push_back(1);
  const ad::Var<T> color = ad::sum(ad::reshape(w, w3) * rgb, axis);
  return {color, T(1) - ad::exp(-ad::sum(tau, axis))};
}

// c + (1 - acc) bg, with bg broadcast over the trailing channel axis.
template <typename T>
ad::Var<T> over_background(const Composite<T>& c, const std::array<double, 3>& bg) {
  ad::Shape a3 = c.alpha.shape();
  a3.push_back(1);
  const ad::Var<T> bgv = ad::constant(ad::Tensor<T>(ad::Shape{3}, {T(bg[0]), T(bg[1]), T(bg[2])}));
  return c.color + (T(1) - ad::reshape(c.alpha, a3)) * bgv;
}

// Plain sequential loop over one ray; reference for the tape form.
struct RayComposite {
  std::array<double, 3> color{};
  double alpha = 0;
  std::vector<double> transmittance;
};

inline RayComposite composite_sequential(const std::vector<std::array<double, 3>>& rgb, const std::vector<double>& sigma,
                                         const std::vector<double>& delta) {
  RayComposite out;
  double t = 1;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double a = 1 - std::exp(-sigma[i] * delta[i]);
    out.transmittance.push_back(t);
    for (int c = 0; c < 3; ++c) out.color[static_cast<std::size_t>(c)] += t * a * rgb[i][static_cast<std::size_t>(c)];
    out.alpha += t * a;
    t *= 1 - a;
  }
  return out;
}

}  // namespace graf::render
