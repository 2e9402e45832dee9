#pragma once

// Conditional radiance field. A ReLU trunk maps (gamma(x), z_s) to a shape
// feature h; density is softplus(linear(h)); color is a sigmoid head over
// (h, gamma(d), z_a). Density never sees d or z_a.
//
// Concatenated inputs are realized by slicing the layer's weight rows and
// summing the per-part products, so that per-latent and per-ray parts are
// computed once and broadcast over the samples that share them.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/core/rng.hpp"
#include "graf/diffcore/param_store.hpp"
#include "graf/field/encoding.hpp"
#include "graf/geometry/vec.hpp"

namespace graf::field {

struct FieldArchitecture {
  int depth = 4;
  int hidden = 128;
  int skip_at = 4;  // trunk layer whose input also receives (gamma(x), z_s); none if >= depth or 0
  int color_hidden = 64;
  int latent_shape = 32;
  int latent_appearance = 32;

  void validate() const {
    if (depth < 1 || hidden < 1 || color_hidden < 1) throw std::invalid_argument("field widths and depth must be >= 1");
    if (latent_shape < 1 || latent_appearance < 1) throw std::invalid_argument("latent dimensions must be >= 1");
  }
  bool has_skip(int layer) const { return skip_at > 0 && skip_at < depth && layer == skip_at; }
};

struct LatentCodes {
  std::vector<double> shape;
  std::vector<double> appearance;
};

inline LatentCodes sample_latents(Rng& rng, int m_s, int m_a) {
  LatentCodes z;
  z.shape.resize(static_cast<std::size_t>(m_s));
  z.appearance.resize(static_cast<std::size_t>(m_a));
  for (auto& v : z.shape) v = rng.normal();
  for (auto& v : z.appearance) v = rng.normal();
  return z;
}

inline LatentCodes zero_latents(int m_s, int m_a) {
  return LatentCodes{std::vector<double>(static_cast<std::size_t>(m_s), 0.0),
                     std::vector<double>(static_cast<std::size_t>(m_a), 0.0)};
}

struct RadianceSample {
  std::array<double, 3> color{};
  double sigma = 0;
};

// Closed-form trainable parameter count.
inline std::size_t parameter_count(const FieldArchitecture& a, const EncodingConfig& e) {
  const std::size_t ex = encoded_dim(3, e.l_x, e.enabled), ed = encoded_dim(3, e.l_d, e.enabled);
  const std::size_t h = static_cast<std::size_t>(a.hidden), ms = static_cast<std::size_t>(a.latent_shape),
                    ma = static_cast<std::size_t>(a.latent_appearance), ch = static_cast<std::size_t>(a.color_hidden);
  std::size_t n = 0;
  for (int i = 0; i < a.depth; ++i) {
    const std::size_t in = (i == 0 ? ex + ms : h) + (a.has_skip(i) ? ex + ms : 0);
    n += in * h + h;
  }
  n += h + 1;
  n += (h + ed + ma) * ch + ch;
  n += ch * 3 + 3;
  return n;
}

template <typename T>
struct FieldOutput {
  ad::Var<T> rgb;    // (..., 3)
  ad::Var<T> sigma;  // (...)
};

template <typename T>
class RadianceField {
 public:
  RadianceField() = default;
  RadianceField(FieldArchitecture arch, EncodingConfig enc, ad::ParamStore<T> params)
      : arch_(arch), enc_(enc), params_(std::move(params)) {}

  // Weights are (fan_in x fan_out); trunk layers use He-uniform bounds, heads
  // use 1/sqrt(fan_in). Biases start at zero.
  static RadianceField init(Rng& rng, const FieldArchitecture& arch, const EncodingConfig& enc) {
    arch.validate();
    enc.validate();
    ad::ParamStore<T> ps;
    const std::size_t ex = encoded_dim(3, enc.l_x, enc.enabled), ed = encoded_dim(3, enc.l_d, enc.enabled);
    const std::size_t h = static_cast<std::size_t>(arch.hidden), ms = static_cast<std::size_t>(arch.latent_shape),
                      ma = static_cast<std::size_t>(arch.latent_appearance), ch = static_cast<std::size_t>(arch.color_hidden);
    auto linear = [&](const std::string& name, std::size_t in, std::size_t out, double bound) {
      ad::Tensor<T> w(ad::Shape{in, out});
      for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
      ps.add(name + ".weight", std::move(w));
      ps.add(name + ".bias", ad::Tensor<T>::zeros({out}));
    };
    for (int i = 0; i < arch.depth; ++i) {
      const std::size_t in = (i == 0 ? ex + ms : h) + (arch.has_skip(i) ? ex + ms : 0);
      linear("trunk." + std::to_string(i), in, h, std::sqrt(6.0 / static_cast<double>(in)));
    }
    linear("sigma", h, 1, 1.0 / std::sqrt(static_cast<double>(h)));
    linear("color.0", h + ed + ma, ch, std::sqrt(6.0 / static_cast<double>(h + ed + ma)));
    linear("color.1", ch, 3, 1.0 / std::sqrt(static_cast<double>(ch)));
    return RadianceField(arch, enc, std::move(ps));
  }

  const FieldArchitecture& arch() const { return arch_; }
  const EncodingConfig& encoding() const { return enc_; }
  ad::ParamStore<T>& params() { return params_; }
  const ad::ParamStore<T>& params() const { return params_; }

  // points: G x R x N x 3, dirs: G x R x 3 (unit), z_shape: G x M_s, z_app: G x M_a.
  // Returns rgb G x R x N x 3 and sigma G x R x N.
  FieldOutput<T> forward(const ad::Var<T>& points, const ad::Var<T>& dirs, const ad::Var<T>& z_shape,
                         const ad::Var<T>& z_app) const {
    using ad::Shape;
    const Shape& ps = points.shape();
    if (ps.size() != 4 || ps[3] != 3) throw ad::ShapeError("field: points must be G x R x N x 3, got " + ad::to_string(ps));
    const std::size_t g = ps[0], r = ps[1], n = ps[2];
    if (dirs.shape() != Shape{g, r, 3}) {
      throw ad::ShapeError("field: dirs " + ad::to_string(dirs.shape()) + " do not match points " + ad::to_string(ps));
    }
    const std::size_t ms = static_cast<std::size_t>(arch_.latent_shape), ma = static_cast<std::size_t>(arch_.latent_appearance);
    if (z_shape.shape() != Shape{g, ms} || z_app.shape() != Shape{g, ma}) {
      throw ad::ShapeError("field: latent shapes " + ad::to_string(z_shape.shape()) + ", " + ad::to_string(z_app.shape()) +
                           " do not match group count " + std::to_string(g));
    }
    const std::size_t h = static_cast<std::size_t>(arch_.hidden);
    const std::size_t ex = encoded_dim(3, enc_.l_x, enc_.enabled), ed = encoded_dim(3, enc_.l_d, enc_.enabled);

    const ad::Var<T> gx = positional_encode(ad::reshape(points, Shape{g * r * n, 3}), enc_.l_x, enc_.enabled);

    // Input block (gamma(x), z_s) times rows [row0, row0 + ex + ms) of `w`, as (G, R*N, out).
    auto input_block = [&](const ad::Var<T>& w, std::size_t row0, std::size_t out) {
      const ad::Var<T> wx = ad::slice(w, 0, row0, row0 + ex);
      const ad::Var<T> wz = ad::slice(w, 0, row0 + ex, row0 + ex + ms);
      const ad::Var<T> px = ad::reshape(ad::matmul(gx, wx), Shape{g, r * n, out});
      const ad::Var<T> pz = ad::reshape(ad::matmul(z_shape, wz), Shape{g, 1, out});
      return ad::add(px, pz);
    };

    ad::Var<T> act;
    for (int i = 0; i < arch_.depth; ++i) {
      const std::string base = "trunk." + std::to_string(i);
      const ad::Var<T>& w = params_.at(base + ".weight");
      const ad::Var<T>& b = params_.at(base + ".bias");
      ad::Var<T> pre;
      if (i == 0) {
        pre = input_block(w, 0, h);
      } else {
        const ad::Var<T> wh = ad::slice(w, 0, 0, h);
        pre = ad::reshape(ad::matmul(ad::reshape(act, Shape{g * r * n, h}), wh), Shape{g, r * n, h});
        if (arch_.has_skip(i)) pre = ad::add(pre, input_block(w, h, h));
      }
      act = ad::relu(ad::add(pre, b));
    }
    const ad::Var<T> feat = ad::reshape(act, Shape{g * r * n, h});

    const ad::Var<T> sigma_pre = ad::add(ad::matmul(feat, params_.at("sigma.weight")), params_.at("sigma.bias"));
    const ad::Var<T> sigma = ad::reshape(ad::softplus(sigma_pre), Shape{g, r, n});

    const std::size_t ch = static_cast<std::size_t>(arch_.color_hidden);
    const ad::Var<T>& w0 = params_.at("color.0.weight");
    const ad::Var<T> wh = ad::slice(w0, 0, 0, h);
    const ad::Var<T> wd = ad::slice(w0, 0, h, h + ed);
    const ad::Var<T> wa = ad::slice(w0, 0, h + ed, h + ed + ma);
    const ad::Var<T> gd = positional_encode(ad::reshape(dirs, Shape{g * r, 3}), enc_.l_d, enc_.enabled);
    const ad::Var<T> ph = ad::reshape(ad::matmul(feat, wh), Shape{g, r, n, ch});
    const ad::Var<T> pd = ad::reshape(ad::matmul(gd, wd), Shape{g, r, 1, ch});
    const ad::Var<T> pa = ad::reshape(ad::matmul(z_app, wa), Shape{g, 1, 1, ch});
    const ad::Var<T> hidden = ad::relu(ad::add(ad::add(ad::add(ph, pd), pa), params_.at("color.0.bias")));
    const ad::Var<T> rgb_pre = ad::add(ad::matmul(ad::reshape(hidden, Shape{g * r * n, ch}), params_.at("color.1.weight")),
                                       params_.at("color.1.bias"));
    const ad::Var<T> rgb = ad::reshape(ad::sigmoid(rgb_pre), Shape{g, r, n, 3});
    return {rgb, sigma};
  }

  // Single-point evaluation; the direction must be unit length.
  RadianceSample eval(const geo::Vec3& x, const geo::Vec3& d, const LatentCodes& z) const {
    if (std::abs(geo::norm(d) - 1.0) > 1e-6) throw std::invalid_argument("field_eval: view direction must be unit length");
    ad::NoGradGuard no_grad;
    const auto out = forward(ad::constant(ad::Tensor<T>(ad::Shape{1, 1, 1, 3}, {T(x.x), T(x.y), T(x.z)})),
                             ad::constant(ad::Tensor<T>(ad::Shape{1, 1, 3}, {T(d.x), T(d.y), T(d.z)})),
                             latent_tensor(z.shape, arch_.latent_shape), latent_tensor(z.appearance, arch_.latent_appearance));
    RadianceSample s;
    for (int c = 0; c < 3; ++c) s.color[static_cast<std::size_t>(c)] = static_cast<double>(out.rgb.value()[static_cast<std::size_t>(c)]);
    s.sigma = static_cast<double>(out.sigma.value()[0]);
    return s;
  }

  static ad::Var<T> latent_tensor(const std::vector<double>& z, int dim) {
    if (z.size() != static_cast<std::size_t>(dim)) {
      throw ad::ShapeError("latent code has " + std::to_string(z.size()) + " entries, expected " + std::to_string(dim));
    }
    ad::Tensor<T> t(ad::Shape{1, z.size()});
    for (std::size_t i = 0; i < z.size(); ++i) t[i] = static_cast<T>(z[i]);
    return ad::constant(std::move(t));
  }

 private:
  FieldArchitecture arch_;
  EncodingConfig enc_;
  ad::ParamStore<T> params_;
};

}  // namespace graf::field
