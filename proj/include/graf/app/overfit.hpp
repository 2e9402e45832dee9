#pragma once

// Single-scene fit of the radiance field to a posed image set by squared error on random ray batches, optimized with Adam.

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "graf/app/config.hpp"
#include "graf/scenegen/dataset.hpp"
#include "graf/trainer/adam.hpp"
#include "graf/trainer/gan.hpp"

namespace graf::app {

struct OverfitConfig {
  long long iterations = 5000;
  int views = 4;
  int rays = 128;
  double lr = 1e-3;
  double lr_final = 5e-5;
  int holdout = 19;
  long long eval_every = 250;
  double target_psnr = 0;  // 0 runs every iteration

  static OverfitConfig from(const Config& c) {
    OverfitConfig o;
    o.iterations = c.get_int("overfit.iterations");
    o.views = c.get_i32("overfit.views");
    o.rays = c.get_i32("overfit.rays");
    o.lr = c.get_real("overfit.lr");
    o.lr_final = c.get_real("overfit.lr_final");
    o.holdout = c.get_i32("overfit.holdout");
    o.eval_every = c.get_int("overfit.eval_every");
    o.target_psnr = c.get_real("overfit.target_psnr");
    return o;
  }

  // lr decays exponentially from lr at the first step to lr_final at the last.
  double rate(long long it) const {
    if (iterations <= 1) return lr;
    return lr * std::pow(lr_final / lr, static_cast<double>(it) / static_cast<double>(iterations - 1));
  }
};

struct PsnrEntry {
  long long iter = 0;
  double loss = 0;  // training batch MSE of the preceding step; 0 before the first step
  double psnr = 0;
};

struct OverfitReport {
  std::vector<PsnrEntry> log;
  long long iterations_run = 0;
  double final_psnr = 0;
  Image holdout_render;
};

// 10 log10(1 / MSE) for images in [0, 1].
inline double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw std::invalid_argument("psnr: image sizes differ");
  double se = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) se += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  const double mse = std::max(se / static_cast<double>(a.data.size()), 1e-30);
  return 10 * std::log10(1 / mse);
}

// Latents are zero vectors; the held-out view is rendered with bin-midpoint depths.
template <typename T>
OverfitReport run_overfit(const train::GanConfig& cfg, const scene::Dataset& data, const OverfitConfig& oc, std::ostream* log = nullptr) {
  if (data.poses.empty()) throw scene::DatasetError("overfit needs a posed dataset with a pose sidecar");
  const int count = data.manifest.count;
  if (oc.holdout < 0 || oc.holdout >= count) {
    throw std::invalid_argument("overfit.holdout " + std::to_string(oc.holdout) + " is not an image index of the dataset");
  }
  if (count < 2) throw std::invalid_argument("overfit needs at least one training view besides the held-out one");
  std::vector<int> train_views;
  for (int i = 0; i < count; ++i)
    if (i != oc.holdout) train_views.push_back(i);

  const int w = data.manifest.width, h = data.manifest.height;
  auto intrinsics_of = [&](int i) { return geo::Intrinsics::centered(data.poses[static_cast<std::size_t>(i)].focal, w, h); };
  const std::uint64_t seed = cfg.train.seed;
  Rng init = Rng::substream(seed, Stream::kInit, {2});
  auto f = field::RadianceField<T>::init(init, cfg.field, cfg.encoding);
  auto opt = train::AdamState<T>::zeros_like(f.params());
  const field::LatentCodes zero = field::zero_latents(cfg.field.latent_shape, cfg.field.latent_appearance);
  const std::size_t g = static_cast<std::size_t>(oc.views), r = static_cast<std::size_t>(oc.rays);
  const ad::Var<T> zs = ad::constant(ad::Tensor<T>(ad::Shape{g, static_cast<std::size_t>(cfg.field.latent_shape)}));
  const ad::Var<T> za = ad::constant(ad::Tensor<T>(ad::Shape{g, static_cast<std::size_t>(cfg.field.latent_appearance)}));

  OverfitReport rep;
  double last_loss = 0;
  auto evaluate = [&](long long it) {
    const auto& pv = data.poses[static_cast<std::size_t>(oc.holdout)];
    rep.holdout_render = render::render_image(f, intrinsics_of(oc.holdout), pv.pose, zero, cfg.render).color;
    rep.final_psnr = psnr(rep.holdout_render, data.images[static_cast<std::size_t>(oc.holdout)]);
    rep.log.push_back({it, last_loss, rep.final_psnr});
    if (log) *log << it << ',' << last_loss << ',' << rep.final_psnr << '\n' << std::flush;
    if (!std::isfinite(rep.final_psnr)) throw train::NumericAbort("non-finite held-out PSNR at iteration " + std::to_string(it));
  };

  long long it = 0;
  for (; it < oc.iterations; ++it) {
    if (it % oc.eval_every == 0) {
      evaluate(it);
      if (oc.target_psnr > 0 && rep.final_psnr >= oc.target_psnr) break;
    }
    Rng rng = Rng::substream(seed, Stream::kData, {static_cast<std::uint64_t>(it)});
    std::vector<render::RayGroup> groups(g);
    ad::Tensor<T> target(ad::Shape{g, r, 3});
    const auto first = intrinsics_of(train_views[0]);
    for (std::size_t gi = 0; gi < g; ++gi) {
      const int view = train_views[rng.below(train_views.size())];
      if (intrinsics_of(view).focal != first.focal) throw std::invalid_argument("overfit: views with differing focal lengths");
      groups[gi].pose = data.poses[static_cast<std::size_t>(view)].pose;
      const Image& img = data.images[static_cast<std::size_t>(view)];
      for (std::size_t ri = 0; ri < r; ++ri) {
        const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(w))), y = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
        groups[gi].pixels.push_back({static_cast<double>(x), static_cast<double>(y)});
        for (int c = 0; c < 3; ++c) target[(gi * r + ri) * 3 + static_cast<std::size_t>(c)] = static_cast<T>(img.at(x, y, c));
      }
    }
    const auto res = render::render_rays(f, first, groups, zs, za, cfg.render,
                                         render::StrataKey{seed, static_cast<std::uint64_t>(it), train::kPhaseReal + 1});
    const ad::Var<T> loss = ad::mean_all(ad::square(res.rgb - ad::constant(std::move(target))));
    last_loss = static_cast<double>(loss.item());
    if (!std::isfinite(last_loss)) throw train::NumericAbort("non-finite reconstruction loss at iteration " + std::to_string(it));
    const auto grads = ad::backward(loss, f.params());
    train::adam_step(f.params(), grads, opt, train::AdamConfig{oc.rate(it)});
  }
  rep.iterations_run = it;
  if (rep.log.empty() || rep.log.back().iter != it) evaluate(it);
  return rep;
}

}  // namespace graf::app
