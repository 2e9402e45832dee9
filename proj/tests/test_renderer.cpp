#include <gtest/gtest.h>

#include <cmath>

#include "graf/diffcore/gradcheck.hpp"
#include "graf/renderer/render.hpp"

using namespace graf;
using namespace graf::render;
using ad::Shape;
using TD = ad::Tensor<double>;
using VD = ad::Var<double>;

namespace {

// Product-form reference: T_i = prod_{j<i} (1 - alpha_j).
struct Reference {
  std::array<double, 3> color{};
  double acc = 0;
  std::vector<double> trans;
};

Reference reference_composite(const double* rgb, const double* sigma, const double* delta, std::size_t n) {
  Reference r;
  std::vector<double> alpha(n);
  for (std::size_t i = 0; i < n; ++i) alpha[i] = 1 - std::exp(-sigma[i] * delta[i]);
  for (std::size_t i = 0; i < n; ++i) {
    double t = 1;
    for (std::size_t j = 0; j < i; ++j) t *= 1 - alpha[j];
    r.trans.push_back(t);
    for (std::size_t c = 0; c < 3; ++c) r.color[c] += t * alpha[i] * rgb[i * 3 + c];
    r.acc += t * alpha[i];
  }
  return r;
}

Composite<double> run(const TD& rgb, const TD& sigma, const TD& delta) {
  return composite(ad::constant(rgb), ad::constant(sigma), ad::constant(delta));
}

field::FieldArchitecture toy_arch() {
  field::FieldArchitecture a;
  a.depth = 2;
  a.hidden = 16;
  a.skip_at = 1;
  a.color_hidden = 8;
  a.latent_shape = 3;
  a.latent_appearance = 2;
  return a;
}

RenderConfig toy_render(int n = 4) {
  RenderConfig c;
  c.samples_n = n;
  c.background = {0.2, 0.5, 0.9};
  return c;
}

}  // namespace

TEST(Strata, ForcedZeroOffsetsGiveLeftEdges) {
  const auto t = stratified_depths({0, 0, 0, 0}, DepthRange{1, 2});
  EXPECT_EQ(t, (std::vector<double>{1.0, 1.25, 1.5, 1.75}));
}

TEST(Strata, SingleStratum) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto t = stratified_depths(rng, DepthRange{1, 2}, 1);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_GE(t[0], 1.0);
    EXPECT_LT(t[0], 2.0);
  }
}

TEST(Strata, OneSamplePerBinAndAscending) {
  Rng rng(2);
  const DepthRange r{1.8, 4.2};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto t = stratified_depths(rng, r, 8);
    for (int i = 0; i < 8; ++i) {
      const double lo = r.t_near + i * r.bin_width(8);
      EXPECT_GE(t[static_cast<std::size_t>(i)], lo);
      EXPECT_LT(t[static_cast<std::size_t>(i)], lo + r.bin_width(8) + 1e-12);
      if (i > 0) {
        EXPECT_GT(t[static_cast<std::size_t>(i)], t[static_cast<std::size_t>(i - 1)]);
      }
    }
  }
}

TEST(Strata, BinMeansConvergeToMidpoints) {
  Rng rng(3);
  const DepthRange r{1, 2};
  std::vector<double> mean(8, 0);
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    const auto t = stratified_depths(rng, r, 8);
    for (int i = 0; i < 8; ++i) mean[static_cast<std::size_t>(i)] += t[static_cast<std::size_t>(i)] / draws;
  }
  for (int i = 0; i < 8; ++i) {
    const double mid = r.t_near + (i + 0.5) * r.bin_width(8);
    EXPECT_LT(std::abs(mean[static_cast<std::size_t>(i)] - mid), 0.01 * r.bin_width(8)) << "bin " << i;
  }
}

TEST(Strata, RejectsBadRange) {
  Rng rng(4);
  EXPECT_THROW(stratified_depths(rng, DepthRange{2, 1}, 4), std::invalid_argument);
  EXPECT_THROW(stratified_depths(rng, DepthRange{0, 1}, 4), std::invalid_argument);
  EXPECT_THROW(stratified_depths(rng, DepthRange{1, 2}, 0), std::invalid_argument);
}

TEST(Composite, TransparentRayIsBlack) {
  const auto c = run(TD(Shape{3, 3}, 0.7), TD(Shape{3}, 0.0), TD(Shape{3}, 0.1));
  for (double v : c.color.value().values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(c.alpha.item(), 0.0);
}

TEST(Composite, OpaqueSampleReturnsItsColor) {
  const auto c = run(TD(Shape{1, 3}, {0.2, 0.4, 0.6}), TD(Shape{1}, {50.0}), TD(Shape{1}, {1.0}));
  EXPECT_NEAR(c.color.value()[0], 0.2, 1e-12);
  EXPECT_NEAR(c.color.value()[1], 0.4, 1e-12);
  EXPECT_NEAR(c.color.value()[2], 0.6, 1e-12);
  EXPECT_NEAR(c.alpha.item(), 1.0, 1e-12);
}

TEST(Composite, TwoHalfOpaqueSamples) {
  const double l2 = std::log(2.0);
  const auto c = run(TD(Shape{2, 3}, {1, 0, 0, 0, 1, 0}), TD(Shape{2}, {l2, l2}), TD(Shape{2}, {1.0, 1.0}));
  EXPECT_NEAR(c.color.value()[0], 0.5, 1e-15);
  EXPECT_NEAR(c.color.value()[1], 0.25, 1e-15);
  EXPECT_NEAR(c.color.value()[2], 0.0, 1e-15);
  EXPECT_NEAR(c.alpha.item(), 0.75, 1e-15);
}

TEST(Composite, MatchesProductFormOnRandomInstances) {
  Rng rng(5);
  const std::size_t rays = 1000;
  for (std::size_t n : {1u, 4u, 16u}) {
    TD rgb(Shape{rays, n, 3}), sigma(Shape{rays, n}), delta(Shape{rays, n});
    for (auto& v : rgb.values()) v = rng.uniform();
    for (auto& v : sigma.values()) v = rng.uniform(0, 5);
    for (auto& v : delta.values()) v = rng.uniform(0.01, 0.5);
    const auto c = run(rgb, sigma, delta);
    for (std::size_t r = 0; r < rays; ++r) {
      const auto ref = reference_composite(&rgb[r * n * 3], &sigma[r * n], &delta[r * n], n);
      for (std::size_t ch = 0; ch < 3; ++ch) ASSERT_NEAR(c.color.value()[r * 3 + ch], ref.color[ch], 1e-12);
      ASSERT_NEAR(c.alpha.value()[r], ref.acc, 1e-12);
      ASSERT_NEAR(c.alpha.value()[r], 1 - ref.trans.back() * std::exp(-sigma[r * n + n - 1] * delta[r * n + n - 1]), 1e-12);
      // Sequential library loop agrees too.
      std::vector<std::array<double, 3>> cs(n);
      for (std::size_t i = 0; i < n; ++i) cs[i] = {rgb[(r * n + i) * 3], rgb[(r * n + i) * 3 + 1], rgb[(r * n + i) * 3 + 2]};
      const auto seq = composite_sequential(cs, std::vector<double>(&sigma[r * n], &sigma[r * n] + n),
                                            std::vector<double>(&delta[r * n], &delta[r * n] + n));
      for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(seq.transmittance[i], ref.trans[i], 1e-12);
    }
  }
}

TEST(Composite, ConvexityAndMonotoneTransmittance) {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    TD rgb(Shape{n, 3}), sigma(Shape{n}), delta(Shape{n});
    for (auto& v : rgb.values()) v = rng.uniform();
    for (auto& v : sigma.values()) v = rng.uniform(0, 10);
    for (auto& v : delta.values()) v = rng.uniform(0.01, 1);
    const auto c = run(rgb, sigma, delta);
    const auto ref = reference_composite(rgb.data(), sigma.data(), delta.data(), n);
    EXPECT_EQ(ref.trans[0], 1.0);
    for (std::size_t i = 1; i < n; ++i) {
      EXPECT_LE(ref.trans[i], ref.trans[i - 1]);
      EXPECT_GE(ref.trans[i], 0.0);
    }
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double mx = 0;
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, rgb[i * 3 + ch]);
      EXPECT_GE(c.color.value()[ch], 0.0);
      EXPECT_LE(c.color.value()[ch], mx + 1e-15);
    }
    EXPECT_GE(c.alpha.item(), 0.0);
    EXPECT_LE(c.alpha.item(), 1.0);
  }
}

TEST(Composite, OpaqueSampleOccludesEverythingBehind) {
  Rng rng(7);
  const std::size_t n = 8, k = 3;
  TD rgb(Shape{n, 3}), sigma(Shape{n}), delta(Shape{n}, 1.0);
  for (auto& v : rgb.values()) v = rng.uniform();
  for (auto& v : sigma.values()) v = rng.uniform(0, 1);
  sigma[k] = 50;
  const auto ref = reference_composite(rgb.data(), sigma.data(), delta.data(), n);
  for (std::size_t i = k + 1; i < n; ++i) EXPECT_LT(ref.trans[i], 1e-20);
  TD rgb2 = rgb;
  for (std::size_t i = (k + 1) * 3; i < n * 3; ++i) rgb2[i] = 1 - rgb2[i];
  const auto a = run(rgb, sigma, delta), b = run(rgb2, sigma, delta);
  for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_LT(std::abs(a.color.value()[ch] - b.color.value()[ch]), 1e-20);
}

TEST(Composite, RejectsInvalidInputs) {
  EXPECT_THROW(run(TD(Shape{2, 3}), TD(Shape{2}, {-0.1, 1}), TD(Shape{2}, 1.0)), std::invalid_argument);
  EXPECT_THROW(run(TD(Shape{2, 3}), TD(Shape{2}, 1.0), TD(Shape{2}, {0.0, 1.0})), std::invalid_argument);
  EXPECT_THROW(run(TD(Shape{2, 2}), TD(Shape{2}, 1.0), TD(Shape{2}, 1.0)), ad::ShapeError);
}

TEST(Composite, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  const std::size_t rays = 3, n = 5;
  TD rgb(Shape{rays, n, 3}), sigma(Shape{rays, n}), delta(Shape{rays, n}), w(Shape{rays, 3}), wa(Shape{rays});
  for (auto& v : rgb.values()) v = rng.uniform();
  for (auto& v : sigma.values()) v = rng.uniform(0.1, 3);
  for (auto& v : delta.values()) v = rng.uniform(0.05, 0.5);
  for (auto& v : w.values()) v = rng.uniform(-1, 1);
  for (auto& v : wa.values()) v = rng.uniform(-1, 1);
  ad::MultiFn<double> fn = [&](const std::vector<VD>& v) {
    const auto c = composite(v[0], v[1], ad::constant(delta));
    return ad::sum_all(c.color * ad::constant(w)) + ad::sum_all(c.alpha * ad::constant(wa));
  };
  EXPECT_LT(ad::finite_diff_check<double>(fn, {rgb, sigma}, 1e-6).max_rel_error, 1e-6);
}

TEST(Render, EmptySceneOnBlackIsZero) {
  Rng rng(9);
  auto f = field::RadianceField<double>::init(rng, toy_arch(), field::EncodingConfig{3, 2, true});
  f.params().at("sigma.weight").mutable_value() = TD(Shape{16, 1}, 0.0);
  f.params().at("sigma.bias").mutable_value() = TD(Shape{1}, -1000.0);
  RenderConfig cfg = toy_render(8);
  cfg.background = {0, 0, 0};
  const auto intr = geo::Intrinsics::centered(8, 8, 8);
  const auto pose = geo::pose_from_spherical(0.3, 0.7, 3.0);
  const auto p = render_patch(f, intr, pose, geo::centered_pattern(8, 8, 4), field::sample_latents(rng, 3, 2), cfg,
                              StrataKey{1, 0, 0});
  for (double v : p.value().values()) EXPECT_EQ(v, 0.0);
  cfg.background = {0.1, 0.2, 0.3};
  const auto img = render_image(f, intr, pose, field::zero_latents(3, 2), cfg);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(img.color.at(x, y, c), cfg.background[static_cast<std::size_t>(c)]);
}

TEST(Render, FieldCoordinatesLieInUnitBallOrAreMasked) {
  const auto intr = geo::Intrinsics::centered(16, 16, 16);
  const auto pose = geo::pose_from_spherical(0.4, 1.1, 3.0);
  RenderConfig cfg = toy_render(16);
  cfg.bound_b = 0.8;
  const auto b = build_rays<double>(intr, {RayGroup{pose, geo::full_image_coords(16, 16)}}, cfg, StrataKey{5, 0, 0});
  const auto rays = geo::generate_rays(intr, pose, geo::full_image_coords(16, 16));
  std::size_t inside = 0, outside = 0;
  for (std::size_t i = 0; i < b.inside.size(); ++i) {
    const geo::Vec3 p{b.points[i * 3], b.points[i * 3 + 1], b.points[i * 3 + 2]};
    const geo::Vec3 world = p * cfg.bound_b;
    const geo::Ray& ray = rays[i / 16];
    const geo::Vec3 along = world - ray.origin;
    EXPECT_LT(geo::norm(along - ray.direction * geo::dot(along, ray.direction)), 1e-12);
    EXPECT_EQ(b.inside[i], geo::norm(world) <= cfg.bound_b ? 1.0 : 0.0);
    (b.inside[i] == 1.0 ? inside : outside)++;
  }
  EXPECT_GT(inside, 0u);
  EXPECT_GT(outside, 0u);
}

TEST(Render, RaysMissingTheBoundingSphereShowBackground) {
  Rng rng(12);
  auto f = field::RadianceField<double>::init(rng, toy_arch(), field::EncodingConfig{3, 2, true});
  f.params().at("sigma.weight").mutable_value() = TD(Shape{16, 1}, 0.0);
  f.params().at("sigma.bias").mutable_value() = TD(Shape{1}, 50.0);
  RenderConfig cfg = toy_render(8);
  cfg.bound_b = 0.5;
  const auto intr = geo::Intrinsics::centered(8, 8, 8);
  const auto img = render_image(f, intr, geo::pose_from_spherical(0.3, 0.7, 3.0), field::zero_latents(3, 2), cfg);
  // The corner ray passes the origin at distance 3 sin(atan(sqrt(2) / 2)) > 0.5; the center ray goes through it.
  EXPECT_EQ(img.alpha[0], 0.0);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(img.color.at(0, 0, c), cfg.background[static_cast<std::size_t>(c)]);
  EXPECT_GT(img.alpha[4 * 8 + 4], 0.99);
}

TEST(Render, SameSeedIsBitIdentical) {
  Rng rng(10);
  auto f = field::RadianceField<float>::init(rng, field::FieldArchitecture{}, field::EncodingConfig{});
  const auto intr = geo::Intrinsics::centered(40, 32, 32);
  const auto pose = geo::pose_from_spherical(1.0, 0.5, 3.0);
  const auto z = field::sample_latents(rng, 32, 32);
  RenderConfig cfg;
  cfg.samples_n = 16;
  const geo::PatchPattern pat{14.5, 17.0, 1.5, 8};
  const auto a = render_patch(f, intr, pose, pat, z, cfg, StrataKey{3, 7, 1});
  const auto b = render_patch(f, intr, pose, pat, z, cfg, StrataKey{3, 7, 1});
  EXPECT_EQ(a.value(), b.value());
  const auto c = render_patch(f, intr, pose, pat, z, cfg, StrataKey{3, 8, 1});
  EXPECT_NE(a.value(), c.value());
}

TEST(Render, ImageEqualsFullPatch) {
  Rng rng(11);
  auto f = field::RadianceField<double>::init(rng, toy_arch(), field::EncodingConfig{3, 2, true});
  const auto intr = geo::Intrinsics::centered(9, 8, 8);
  const auto pose = geo::pose_from_spherical(2.0, 0.9, 3.0);
  const auto z = field::sample_latents(rng, 3, 2);
  RenderConfig cfg = toy_render(6);
  cfg.chunk_rays = 5;
  for (auto strata : {std::optional<StrataKey>{}, std::optional<StrataKey>{StrataKey{4, 2, 0}}}) {
    const auto p = render_patch(f, intr, pose, geo::centered_pattern(8, 8, 8), z, cfg, strata);
    const auto img = render_image(f, intr, pose, z, cfg, strata);
    for (std::size_t i = 0; i < img.color.data.size(); ++i) EXPECT_EQ(img.color.data[i], p.value()[i]);
  }
}

TEST(Render, ChunkSizeDoesNotChangeImage) {
  Rng rng(12);
  auto f = field::RadianceField<float>::init(rng, field::FieldArchitecture{}, field::EncodingConfig{});
  const auto intr = geo::Intrinsics::centered(20, 16, 16);
  const auto pose = geo::pose_from_spherical(0.1, 0.4, 3.0);
  const auto z = field::sample_latents(rng, 32, 32);
  RenderConfig a, b;
  a.samples_n = b.samples_n = 8;
  a.chunk_rays = 256;
  b.chunk_rays = 37;
  const auto ia = render_image(f, intr, pose, z, a), ib = render_image(f, intr, pose, z, b);
  EXPECT_EQ(ia.color, ib.color);
  EXPECT_EQ(ia.alpha, ib.alpha);
  for (double v : ia.alpha) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Render, PatchGradientsMatchFiniteDifferences) {
  Rng rng(13);
  auto f = field::RadianceField<double>::init(rng, toy_arch(), field::EncodingConfig{3, 2, true});
  const auto intr = geo::Intrinsics::centered(10, 8, 8);
  const std::vector<PatchView> views{{geo::pose_from_spherical(0.4, 0.8, 3.0), geo::PatchPattern{4.0, 3.5, 1.25, 4}},
                                     {geo::pose_from_spherical(2.4, 0.3, 3.0), geo::PatchPattern{3.0, 4.0, 1.0, 4}}};
  TD zs(Shape{2, 3}), za(Shape{2, 2});
  for (auto& v : zs.values()) v = rng.normal();
  for (auto& v : za.values()) v = rng.normal();
  const auto names = f.params().trainable_names();
  std::vector<TD> inputs{zs, za};
  for (const auto& nm : names) inputs.push_back(f.params().at(nm).value());
  const RenderConfig cfg = toy_render(4);
  ad::MultiFn<double> fn = [&](const std::vector<VD>& v) {
    field::RadianceField<double> view = f;
    for (std::size_t i = 0; i < names.size(); ++i) view.params().bind(names[i], v[2 + i]);
    const auto p = render_patches(view, intr, views, v[0], v[1], cfg, StrataKey{5, 1, 0});
    return ad::sum_all(ad::square(p));
  };
  const auto res = ad::finite_diff_check<double>(fn, inputs, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-4);
}
