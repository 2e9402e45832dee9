#pragma once

// Gradient-check and oracle suites shared by the verify command and the acceptance binary.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "graf/diffcore/gradcheck.hpp"
#include "graf/trainer/gan.hpp"

namespace graf::app {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

using CompositeFn = std::function<render::Composite<double>(const ad::Var<double>&, const ad::Var<double>&, const ad::Var<double>&)>;

inline CompositeFn library_composite() {
  return [](const ad::Var<double>& rgb, const ad::Var<double>& sigma, const ad::Var<double>& delta) {
    return render::composite(rgb, sigma, delta);
  };
}

namespace detail {

inline std::string format(const char* fmt, double a, double b = 0) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), fmt, a, b);
  return buf;
}

inline ad::Tensor<double> random_tensor(Rng& rng, ad::Shape shape, double lo = -1, double hi = 1) {
  ad::Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double svd_top(const ad::Tensor<double>& w) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(w.shape()[0]), static_cast<Eigen::Index>(w.shape()[1]));
  for (std::size_t i = 0; i < w.shape()[0]; ++i)
    for (std::size_t j = 0; j < w.shape()[1]; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w.at(i, j);
  return Eigen::BDCSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

}  // namespace detail

// K=4 patch, N=4 samples, trunk depth 2, width 16, discriminator channels 8/16.
inline train::GanConfig toy_gan_config() {
  train::GanConfig c;
  c.intrinsics = geo::Intrinsics::centered(10, 8, 8);
  c.patch = 4;
  c.field.depth = 2;
  c.field.hidden = 16;
  c.field.skip_at = 1;
  c.field.color_hidden = 8;
  c.field.latent_shape = 3;
  c.field.latent_appearance = 2;
  c.encoding = {3, 2, true};
  c.render.samples_n = 4;
  c.render.background = {0.2, 0.5, 0.9};
  c.disc.channels = {8, 16};
  c.disc.kernel = 3;
  c.disc.stride = 1;
  c.train.batch = 2;
  return c;
}

// d |render_patch|^2 / d(theta, z_s, z_a) against central differences.
inline CheckResult check_render_gradients() {
  const train::GanConfig cfg = toy_gan_config();
  Rng rng = Rng::substream(1, Stream::kVerify, {1});
  const auto f = field::RadianceField<double>::init(rng, cfg.field, cfg.encoding);
  const std::vector<render::PatchView> views{{geo::pose_from_spherical(0.4, 0.8, 3.0), geo::PatchPattern{4.0, 3.5, 1.25, 4}},
                                             {geo::pose_from_spherical(2.4, 0.3, 3.0), geo::PatchPattern{3.0, 4.0, 1.0, 4}}};
  ad::Tensor<double> zs(ad::Shape{2, 3}), za(ad::Shape{2, 2});
  for (auto& v : zs.values()) v = rng.normal();
  for (auto& v : za.values()) v = rng.normal();
  const auto names = f.params().trainable_names();
  std::vector<ad::Tensor<double>> inputs{zs, za};
  for (const auto& n : names) inputs.push_back(f.params().at(n).value());
  ad::MultiFn<double> fn = [&](const std::vector<ad::Var<double>>& v) {
    field::RadianceField<double> view = f;
    for (std::size_t i = 0; i < names.size(); ++i) view.params().bind(names[i], v[2 + i]);
    const auto p = render::render_patches(view, cfg.intrinsics, views, v[0], v[1], cfg.render, render::StrataKey{5, 1, 0});
    return ad::sum_all(ad::square(p));
  };
  const auto res = ad::finite_diff_check<double>(fn, inputs, 1e-6);
  return {"grad.render_patch", res.max_rel_error < 1e-4,
          detail::format("max rel error %.3g over ", res.max_rel_error) + std::to_string(res.coordinates) + " coordinates"};
}

// d loss_D (with R1, lambda = 10) / d phi against central differences; spectral scales frozen.
inline CheckResult check_disc_gradients() {
  const train::GanConfig cfg = toy_gan_config();
  Rng rng = Rng::substream(2, Stream::kVerify, {2});
  auto d = disc::Discriminator<double>::init(rng, cfg.disc, cfg.patch);
  d.freeze_scales();
  const ad::Tensor<double> real = detail::random_tensor(rng, {2, 4, 4, 3}, 0, 1);
  const ad::Tensor<double> fake = detail::random_tensor(rng, {2, 4, 4, 3}, 0, 1);
  const auto names = d.params().trainable_names();
  std::vector<ad::Tensor<double>> inputs;
  for (const auto& n : names) inputs.push_back(d.params().at(n).value());
  ad::MultiFn<double> fn = [&](const std::vector<ad::Var<double>>& v) {
    disc::Discriminator<double> view = d;
    for (std::size_t i = 0; i < names.size(); ++i) view.params().bind(names[i], v[i]);
    const auto pen = train::r1_penalty<double>([&](const ad::Var<double>& p) { return view.forward(p); }, real);
    return train::loss_discriminator(pen.logits, view.forward(ad::constant(fake)), pen.penalty, 10.0);
  };
  const auto res = ad::finite_diff_check<double>(fn, inputs, 1e-6);
  return {"grad.disc_loss_r1", res.max_rel_error < 1e-4,
          detail::format("max rel error %.3g over ", res.max_rel_error) + std::to_string(res.coordinates) + " coordinates"};
}

// Backward pass of the compositing operator against central differences.
inline CheckResult check_composite_gradient(const CompositeFn& comp) {
  Rng rng = Rng::substream(3, Stream::kVerify, {3});
  const std::size_t rays = 3, n = 5;
  const auto rgb = detail::random_tensor(rng, {rays, n, 3}, 0, 1);
  const auto sigma = detail::random_tensor(rng, {rays, n}, 0.1, 3);
  const auto delta = detail::random_tensor(rng, {rays, n}, 0.05, 0.5);
  const auto w = detail::random_tensor(rng, {rays, 3}), wa = detail::random_tensor(rng, {rays});
  ad::MultiFn<double> fn = [&](const std::vector<ad::Var<double>>& v) {
    const auto c = comp(v[0], v[1], ad::constant(delta));
    return ad::sum_all(c.color * ad::constant(w)) + ad::sum_all(c.alpha * ad::constant(wa));
  };
  const auto res = ad::finite_diff_check<double>(fn, {rgb, sigma}, 1e-6);
  return {"oracle.composite_gradient", res.max_rel_error < 1e-6, detail::format("max rel error %.3g", res.max_rel_error)};
}

// Tape compositing against the sequential loop on 1000 random rays, monotone transmittance, occlusion.
inline CheckResult check_composite_oracle(const CompositeFn& comp) {
  Rng rng = Rng::substream(4, Stream::kVerify, {4});
  const std::size_t rays = 1000, n = 12;
  const auto rgb = detail::random_tensor(rng, {rays, n, 3}, 0, 1);
  const auto sigma = detail::random_tensor(rng, {rays, n}, 0, 5);
  const auto delta = detail::random_tensor(rng, {rays, n}, 0.01, 0.5);
  const auto c = comp(ad::constant(rgb), ad::constant(sigma), ad::constant(delta));
  double worst = 0;
  bool monotone = true;
  for (std::size_t r = 0; r < rays; ++r) {
    std::vector<std::array<double, 3>> cs(n);
    for (std::size_t i = 0; i < n; ++i) cs[i] = {rgb[(r * n + i) * 3], rgb[(r * n + i) * 3 + 1], rgb[(r * n + i) * 3 + 2]};
    const auto seq = render::composite_sequential(cs, std::vector<double>(&sigma[r * n], &sigma[r * n] + n),
                                                  std::vector<double>(&delta[r * n], &delta[r * n] + n));
    for (std::size_t ch = 0; ch < 3; ++ch) worst = std::max(worst, std::abs(c.color.value()[r * 3 + ch] - seq.color[ch]));
    worst = std::max(worst, std::abs(c.alpha.value()[r] - seq.alpha));
    for (std::size_t i = 1; i < n; ++i) monotone = monotone && seq.transmittance[i] <= seq.transmittance[i - 1];
  }
  // sigma * delta = 50 at sample k hides everything behind it.
  std::vector<std::array<double, 3>> cs(8, {0.3, 0.6, 0.9});
  std::vector<double> sg(8, 0.5), dl(8, 1.0);
  sg[3] = 50;
  const auto occ = render::composite_sequential(cs, sg, dl);
  double behind = 0;
  for (std::size_t i = 4; i < 8; ++i) behind = std::max(behind, occ.transmittance[i]);
  ad::Tensor<double> ca(ad::Shape{8, 3}, 0.25), cb(ad::Shape{8, 3}, 0.25);
  for (std::size_t i = 4 * 3; i < 8 * 3; ++i) cb[i] = 1.0;
  const ad::Tensor<double> st(ad::Shape{8}, sg), dt(ad::Shape{8}, dl);
  const auto oa = comp(ad::constant(ca), ad::constant(st), ad::constant(dt)), ob = comp(ad::constant(cb), ad::constant(st), ad::constant(dt));
  for (std::size_t ch = 0; ch < 3; ++ch) behind = std::max(behind, std::abs(oa.color.value()[ch] - ob.color.value()[ch]));
  const bool ok = worst <= 1e-12 && monotone && behind < 1e-20;
  return {"oracle.composite", ok,
          detail::format("max abs deviation %.3g, max transmittance or color leak behind opaque sample %.3g", worst, behind) +
              (monotone ? "" : ", transmittance not monotone")};
}

// sigma is bit-identical under changes of direction and appearance code, and has zero gradient in both.
inline CheckResult check_disentanglement() {
  Rng rng = Rng::substream(5, Stream::kVerify, {5});
  const field::FieldArchitecture arch;
  const field::EncodingConfig enc;
  const auto f = field::RadianceField<double>::init(rng, arch, enc);
  const std::size_t probes = 1000;
  auto random_dirs = [&] {
    ad::Tensor<double> d(ad::Shape{probes, 1, 3});
    for (std::size_t i = 0; i < probes; ++i) {
      const geo::Vec3 v = geo::normalize(geo::Vec3{rng.normal(), rng.normal(), rng.normal()});
      d[i * 3] = v.x, d[i * 3 + 1] = v.y, d[i * 3 + 2] = v.z;
    }
    return d;
  };
  const auto pts = detail::random_tensor(rng, {probes, 1, 1, 3}, -1.2, 1.2);
  ad::Tensor<double> zs(ad::Shape{probes, static_cast<std::size_t>(arch.latent_shape)});
  for (auto& v : zs.values()) v = rng.normal();
  auto random_za = [&] {
    ad::Tensor<double> z(ad::Shape{probes, static_cast<std::size_t>(arch.latent_appearance)});
    for (auto& v : z.values()) v = rng.normal();
    return z;
  };
  const ad::Var<double> d1(random_dirs(), true), za1(random_za(), true);
  const auto out1 = f.forward(ad::constant(pts), d1, ad::constant(zs), za1);
  const auto out2 = f.forward(ad::constant(pts), ad::constant(random_dirs()), ad::constant(zs), ad::constant(random_za()));
  std::size_t differing = 0;
  for (std::size_t i = 0; i < probes; ++i) differing += out1.sigma.value()[i] != out2.sigma.value()[i];
  const auto g = ad::grad(ad::sum_all(out1.sigma), {d1, za1});
  std::size_t nonzero = 0;
  for (const auto& gi : g)
    for (double v : gi.value().values()) nonzero += v != 0.0;
  return {"oracle.disentanglement", differing == 0 && nonzero == 0,
          std::to_string(differing) + " of " + std::to_string(probes) + " densities changed, " + std::to_string(nonzero) +
              " nonzero gradient entries"};
}

// diag(2, 1) after 20 steps and a random 16 x 48 matrix after 50 steps against an SVD oracle.
inline CheckResult check_spectral_examples() {
  Rng rng = Rng::substream(9, Stream::kVerify, {9});
  ad::Tensor<double> d(ad::Shape{2, 2}, {2, 0, 0, 1});
  auto sd = disc::SpectralState<double>::random(rng, 2);
  sd.iterate(d, 20);
  const double diag_sigma = sd.sigma(d), diag_top = detail::svd_top(sd.normalize(ad::constant(d)).value());
  ad::Tensor<double> w(ad::Shape{16, 48});
  for (auto& v : w.values()) v = rng.normal();
  auto st = disc::SpectralState<double>::random(rng, 16);
  st.iterate(w, 50);
  const double worst = std::abs(st.sigma(w) / detail::svd_top(w) - 1);
  const bool ok = diag_sigma >= 1.98 && diag_sigma <= 2.02 && diag_top >= 0.99 && diag_top <= 1.01 && worst < 0.01;
  return {"oracle.spectral_examples", ok,
          detail::format("diag(2,1) estimate %.6g, normalized top %.6g, ", diag_sigma, diag_top) +
              detail::format("16x48 estimate error %.3g%%", 100 * worst)};
}

// Power iteration (50 steps) against an SVD oracle on 100 random matrices up to 256 x 512.
inline CheckResult check_spectral_oracle() {
  Rng rng = Rng::substream(6, Stream::kVerify, {6});
  double worst_est = 0, worst_top = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = trial == 0 ? 256 : 1 + rng.below(256), cols = trial == 0 ? 512 : 1 + rng.below(512);
    ad::Tensor<double> w(ad::Shape{rows, cols});
    for (auto& v : w.values()) v = rng.normal();
    auto st = disc::SpectralState<double>::random(rng, rows);
    st.iterate(w, 50);
    const double top = detail::svd_top(w);
    worst_est = std::max(worst_est, std::abs(st.sigma(w) / top - 1));
    const double normalized_top = detail::svd_top(st.normalize(ad::constant(w)).value());
    worst_top = std::max(worst_top, std::abs(normalized_top - 1));
  }
  return {"oracle.spectral_norm", worst_est < 0.01 && worst_top <= 0.01,
          detail::format("max estimate error %.3g%%, max |top singular value - 1| %.3g", 100 * worst_est, worst_top)};
}

// Pose cap containment and mean, patch-domain containment, hand-enumerated patch grids.
inline CheckResult check_sampling_laws() {
  Rng rng = Rng::substream(7, Stream::kVerify, {7});
  const int n = 100000;
  geo::PoseDistribution pd;
  pd.radius_min = 2.0;
  pd.radius_max = 4.0;
  std::size_t outside = 0;
  double mean = 0;
  for (int i = 0; i < n; ++i) {
    const auto p = geo::sample_pose(rng, pd);
    const double r = geo::norm(p.center);
    outside += p.center.z < 0;
    mean += p.center.z / r;
  }
  mean /= n;
  const double cap_mean = (pd.polar_cos_min + pd.polar_cos_max) / 2;
  const double mean_err = std::abs(mean / cap_mean - 1);

  const int w = 64, h = 48, k = 16;
  const double s_max = geo::max_patch_scale(w, h, k);
  std::size_t bad_patch = 0;
  for (int i = 0; i < n; ++i) {
    const double s_lo = 1 + (s_max - 1) * (i % 5) / 4.0;
    const auto p = geo::sample_pattern(rng, w, h, k, s_lo);
    const auto c = geo::patch_coords(p);
    const bool in = c.front().x >= 0 && c.front().y >= 0 && c.back().x <= w - 1 && c.back().y <= h - 1;
    bad_patch += !in || p.scale < s_lo || p.scale > s_max;
  }

  std::size_t grid_mismatch = 0;
  for (int t = 0; t < 50; ++t) {
    const int kk = 2 * (1 + static_cast<int>(rng.below(8)));
    const geo::PatchPattern p{rng.uniform(0, 64), rng.uniform(0, 64), rng.uniform(1, 4), kk};
    const auto c = geo::patch_coords(p);
    std::size_t idx = 0;
    for (int row = 0; row < kk; ++row)
      for (int col = 0; col < kk; ++col, ++idx) {
        const double x = p.u + p.scale * (col - kk / 2), y = p.v + p.scale * (row - kk / 2);
        grid_mismatch += std::abs(c[idx].x - x) > 1e-12 || std::abs(c[idx].y - y) > 1e-12;
      }
    grid_mismatch += c.size() != static_cast<std::size_t>(kk * kk);
  }
  const bool ok = outside == 0 && mean_err <= 0.005 && bad_patch == 0 && grid_mismatch == 0;
  return {"oracle.sampling_laws", ok,
          detail::format("cap mean error %.3g%%, ", 100 * mean_err) + std::to_string(outside) + " poses below the horizon, " +
              std::to_string(bad_patch) + " patches out of domain, " + std::to_string(grid_mismatch) + " grid mismatches"};
}

// f(t) = -softplus(-t), loss_D at zero logits, R1 of a linear discriminator.
inline CheckResult check_loss_identities() {
  double worst = 0;
  for (int i = 0; i <= 6000; ++i) {
    const double t = -30 + i * 0.01;
    worst = std::max(worst, std::abs(train::f_objective(t) + std::log(1 + std::exp(-t))));
    const ad::Var<double> tv = ad::scalar(t);
    worst = std::max(worst, std::abs(-ad::softplus(-tv).item() - train::f_objective(t)));
  }
  const auto zero = ad::constant(ad::Tensor<double>(ad::Shape{4}, 0.0));
  const double ld = train::loss_discriminator(zero, zero, ad::scalar(0.0), 10.0).item();
  const double ld_err = std::abs(ld - 2 * std::log(2.0));

  // Integer weights and a power-of-two batch keep every operation exact.
  Rng rng = Rng::substream(8, Stream::kVerify, {8});
  ad::Tensor<double> w(ad::Shape{48, 1});
  double norm2 = 0;
  for (auto& v : w.values()) {
    v = static_cast<double>(static_cast<int>(rng.below(9)) - 4);
    norm2 += v * v;
  }
  const auto real = detail::random_tensor(rng, {4, 4, 4, 3}, 0, 1);
  auto linear = [&](const ad::Var<double>& p) { return ad::reshape(ad::matmul(ad::reshape(p, ad::Shape{4, 48}), ad::constant(w)), ad::Shape{4}); };
  const double r1 = train::r1_penalty<double>(linear, real).penalty.item();
  const bool ok = worst <= 1e-12 && ld_err <= 1e-12 && r1 == norm2;
  return {"oracle.loss_identities", ok,
          detail::format("objective max error %.3g, loss_D(0,0) error %.3g, ", worst, ld_err) +
              detail::format("R1 %.17g vs |w|^2 %.17g", r1, norm2)};
}

inline std::vector<CheckResult> grad_suite() {
  return {check_render_gradients(), check_disc_gradients()};
}

inline std::vector<CheckResult> oracle_suite(const CompositeFn& comp = library_composite()) {
  return {check_composite_oracle(comp), check_composite_gradient(comp), check_disentanglement(),
          check_spectral_examples(),    check_sampling_laws(),          check_loss_identities()};
}

}  // namespace graf::app
