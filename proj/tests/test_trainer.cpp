#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "graf/diffcore/gradcheck.hpp"
#include "graf/trainer/adam.hpp"
#include "graf/trainer/gan.hpp"

using namespace graf;
using namespace graf::train;
using ad::Shape;
using TD = ad::Tensor<double>;
using VD = ad::Var<double>;

namespace {

GanConfig tiny_config(std::uint64_t seed = 3) {
  GanConfig c;
  c.intrinsics = geo::Intrinsics::centered(10, 8, 8);
  c.patch = 4;
  c.anneal_iters = 4;
  c.field.depth = 2;
  c.field.hidden = 16;
  c.field.skip_at = 1;
  c.field.color_hidden = 8;
  c.field.latent_shape = 3;
  c.field.latent_appearance = 2;
  c.encoding = {3, 2, true};
  c.render.samples_n = 4;
  c.disc.channels = {8, 16};
  c.disc.kernel = 3;
  c.disc.stride = 1;
  c.train.batch = 2;
  c.train.seed = seed;
  return c;
}

std::vector<Image> tiny_images(int n) {
  Rng rng(99);
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) {
    Image img(8, 8);
    const double a = rng.uniform(), b = rng.uniform();
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.5 + 0.5 * std::sin(a * x + b * y + c);
    out.push_back(img);
  }
  return out;
}

template <typename T>
std::uint64_t store_hash(const ad::ParamStore<T>& ps) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [n, e] : ps.entries()) {
    for (char ch : n) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
    const auto* p = reinterpret_cast<const unsigned char*>(e.var.value().data());
    for (std::size_t i = 0; i < e.var.size() * sizeof(T); ++i) h = (h ^ p[i]) * 1099511628211ULL;
  }
  return h;
}

template <typename T>
std::uint64_t opt_hash(const OptState<T>& o) {
  ad::ParamStore<T> ps;
  for (const auto& [n, a] : o.acc) ps.add(n, a);
  return store_hash(ps) ^ o.step;
}

bool same_metrics(const TrainMetrics& a, const TrainMetrics& b) {
  return a.iter == b.iter && a.loss_d == b.loss_d && a.loss_g == b.loss_g && a.r1 == b.r1 && a.logit_real == b.logit_real &&
         a.logit_fake == b.logit_fake && a.s_lo == b.s_lo;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("graf_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Losses, ObjectiveIdentityOnWideRange) {
  for (int i = 0; i <= 6000; ++i) {
    const double t = -30 + i * 0.01;
    ASSERT_NEAR(f_objective(t), -std::log(1 + std::exp(-t)), 1e-12) << t;
    const auto sp = ad::softplus(ad::scalar(-t)).item();
    ASSERT_NEAR(f_objective(t), -sp, 1e-12);
  }
}

TEST(Losses, DiscriminatorHandValues) {
  const auto zero = ad::constant(TD(Shape{4}, 0.0));
  EXPECT_NEAR(loss_discriminator(zero, zero, ad::scalar(0.0), 10).item(), 2 * std::log(2.0), 1e-15);
  const auto l = loss_discriminator(ad::constant(TD(Shape{1}, {1.0})), ad::constant(TD(Shape{1}, {-1.0})), ad::scalar(0.5), 10);
  EXPECT_NEAR(l.item(), 2 * std::log1p(std::exp(-1.0)) + 5, 1e-12);
  EXPECT_NEAR(l.item(), 5.62652, 1e-5);
  const auto sat = loss_discriminator(ad::constant(TD(Shape{1}, {60.0})), ad::constant(TD(Shape{1}, {-60.0})), ad::scalar(0.0), 10);
  EXPECT_LT(sat.item(), 1e-20);
}

TEST(Losses, DiscriminatorMonotone) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double r = rng.uniform(-5, 5), f = rng.uniform(-5, 5), e = rng.uniform(0.01, 1);
    auto L = [](double a, double b) {
      return loss_discriminator(ad::constant(TD(Shape{1}, {a})), ad::constant(TD(Shape{1}, {b})), ad::scalar(0.0), 10).item();
    };
    EXPECT_LT(L(r + e, f), L(r, f));
    EXPECT_GT(L(r, f + e), L(r, f));
  }
}

TEST(Losses, GeneratorHandValuesAndNonSaturation) {
  EXPECT_NEAR(loss_generator(ad::constant(TD(Shape{1}, {0.0}))).item(), std::log(2.0), 1e-15);
  EXPECT_LT(loss_generator(ad::constant(TD(Shape{1}, {20.0}))).item(), 1e-8);
  VD t(TD(Shape{1}, {-20.0}), true);
  const auto g = ad::grad(loss_generator(t), {t});
  EXPECT_LT(std::abs(g[0].value()[0] + 1), 1e-6);
}

TEST(R1, ZeroFinalLayerGivesZero) {
  Rng rng(2);
  auto d = disc::Discriminator<double>::init(rng, tiny_config().disc, 4);
  d.params().at("head.weight").mutable_value() = TD(d.params().at("head.weight").shape(), 0.0);
  TD real(Shape{2, 4, 4, 3});
  for (auto& v : real.values()) v = rng.uniform();
  const auto res = r1_penalty<double>([&](const VD& p) { return d.forward(p); }, real);
  EXPECT_EQ(res.penalty.item(), 0.0);
}

TEST(R1, LinearProbeEqualsSquaredNorm) {
  Rng rng(3);
  TD w(Shape{4 * 4 * 3, 1});
  double n2 = 0;
  for (auto& v : w.values()) {
    v = rng.normal();
    n2 += v * v;
  }
  TD real(Shape{5, 4, 4, 3});
  for (auto& v : real.values()) v = rng.uniform();
  auto probe = [&](const VD& p) { return ad::reshape(ad::matmul(ad::reshape(p, Shape{5, 48}), ad::constant(w)), Shape{5}); };
  const auto res = r1_penalty<double>(probe, real);
  EXPECT_NEAR(res.penalty.item(), n2, 1e-12 * n2);
}

TEST(R1, NonNegativeAndDifferentiableInParameters) {
  Rng rng(4);
  auto d = disc::Discriminator<double>::init(rng, tiny_config().disc, 4);
  d.freeze_scales();
  TD real(Shape{2, 4, 4, 3});
  for (auto& v : real.values()) v = rng.uniform();
  const auto names = d.params().trainable_names();
  std::vector<TD> inputs;
  for (const auto& n : names) inputs.push_back(d.params().at(n).value());
  ad::MultiFn<double> fn = [&](const std::vector<VD>& v) {
    disc::Discriminator<double> view = d;
    for (std::size_t i = 0; i < names.size(); ++i) view.params().bind(names[i], v[i]);
    const auto res = r1_penalty<double>([&](const VD& p) { return view.forward(p); }, real);
    EXPECT_GE(res.penalty.item(), 0.0);
    return res.penalty;
  };
  EXPECT_LT(ad::finite_diff_check<double>(fn, inputs, 1e-6).max_rel_error, 1e-4);
}

TEST(RmsProp, HandUpdate) {
  ad::ParamStore<double> ps;
  ps.add("p", TD(Shape{1}, {0.0}));
  auto st = OptState<double>::zeros_like(ps);
  rmsprop_step(ps, {{"p", TD(Shape{1}, {1.0})}}, st, RmsPropConfig{0.1, 0.99, 1e-8});
  EXPECT_NEAR(st.acc.at("p")[0], 0.01, 1e-17);
  EXPECT_NEAR(ps.at("p").value()[0], -0.1 / (0.1 + 1e-8), 1e-15);
  EXPECT_NEAR(ps.at("p").value()[0], -0.99999990, 1e-8);
}

TEST(RmsProp, ZeroGradientLeavesParameters) {
  ad::ParamStore<double> ps;
  ps.add("a", TD(Shape{2, 2}, {1, 2, 3, 4}));
  auto st = OptState<double>::zeros_like(ps);
  rmsprop_step(ps, {{"a", TD(Shape{2, 2}, 0.0)}}, st, RmsPropConfig{});
  EXPECT_EQ(ps.at("a").value(), TD(Shape{2, 2}, {1, 2, 3, 4}));
}

TEST(RmsProp, RejectsShapeMismatch) {
  ad::ParamStore<double> ps;
  ps.add("a", TD(Shape{2}));
  auto st = OptState<double>::zeros_like(ps);
  EXPECT_THROW(rmsprop_step(ps, {{"a", TD(Shape{3})}}, st, RmsPropConfig{}), ad::ShapeError);
  EXPECT_THROW(rmsprop_step(ps, {{"b", TD(Shape{2})}}, st, RmsPropConfig{}), std::invalid_argument);
}

TEST(Adam, TwoHandSteps) {
  ad::ParamStore<double> ps;
  ps.add("p", TD(Shape{2}, {0.0, 1.0}));
  auto st = AdamState<double>::zeros_like(ps);
  const AdamConfig cfg{0.1, 0.9, 0.999, 0.0};
  adam_step(ps, {{"p", TD(Shape{2}, {2.0, -0.5})}}, st, cfg);
  // Bias correction makes the first step lr * sign(g).
  EXPECT_NEAR(ps.at("p").value()[0], -0.1, 1e-15);
  EXPECT_NEAR(ps.at("p").value()[1], 1.1, 1e-15);
  adam_step(ps, {{"p", TD(Shape{2}, {1.0, 0.0})}}, st, cfg);
  const double m = (0.9 * 0.2 + 0.1 * 1.0) / (1 - 0.81), v = (0.999 * 0.004 + 0.001 * 1.0) / (1 - 0.998001);
  EXPECT_NEAR(ps.at("p").value()[0], -0.1 - 0.1 * m / std::sqrt(v), 1e-14);
  const double m1 = 0.9 * -0.05 / (1 - 0.81), v1 = 0.999 * 0.00025 / (1 - 0.998001);
  EXPECT_NEAR(ps.at("p").value()[1], 1.1 - 0.1 * m1 / std::sqrt(v1), 1e-14);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, RejectsMismatchedGradients) {
  ad::ParamStore<double> ps;
  ps.add("a", TD(Shape{2}));
  auto st = AdamState<double>::zeros_like(ps);
  EXPECT_THROW(adam_step(ps, {{"a", TD(Shape{3})}}, st, AdamConfig{}), ad::ShapeError);
  EXPECT_THROW(adam_step(ps, {{"b", TD(Shape{2})}}, st, AdamConfig{}), std::invalid_argument);
}

TEST(Sampling, LatentBatchesLookStandardNormal) {
  const auto cfg = tiny_config();
  std::vector<double> all;
  for (std::uint64_t it = 0; all.size() < 10000; ++it) {
    const auto fb = sample_fake_batch<double>(cfg, it, kPhaseGen, 1.0);
    for (double v : fb.z_shape.value().values()) all.push_back(v);
    for (double v : fb.z_app.value().values()) all.push_back(v);
  }
  const double n = static_cast<double>(all.size());
  double mean = 0, var = 0;
  for (double v : all) mean += v / n;
  for (double v : all) var += (v - mean) * (v - mean) / (n - 1);
  EXPECT_LT(std::abs(mean), 3 / std::sqrt(n));
  EXPECT_LT(std::abs(var - 1), 3 * std::sqrt(2 / (n - 1)));
}

TEST(TrainStep, UpdatesOnlyTheSteppedNetwork) {
  const auto cfg = tiny_config();
  const auto images = tiny_images(5);
  auto st = init_gan<double>(cfg);
  const auto g0 = store_hash(st.gen.params()), og0 = opt_hash(st.opt_g);
  const auto d0 = store_hash(st.disc.params()), od0 = opt_hash(st.opt_d);
  TrainMetrics m;
  disc_step(st, images, cfg, m);
  EXPECT_EQ(store_hash(st.gen.params()), g0);
  EXPECT_EQ(opt_hash(st.opt_g), og0);
  const auto d1 = store_hash(st.disc.params());
  EXPECT_NE(d1, d0);
  EXPECT_NE(opt_hash(st.opt_d), od0);
  gen_step(st, cfg, m);
  EXPECT_EQ(store_hash(st.disc.params()), d1);
  EXPECT_NE(store_hash(st.gen.params()), g0);
}

TEST(TrainStep, DeterministicAndFinite) {
  const auto images = tiny_images(5);
  for (double lambda : {0.0, 10.0}) {
    auto cfg = tiny_config();
    cfg.train.r1_weight = lambda;
    auto a = init_gan<float>(cfg), b = init_gan<float>(cfg);
    for (int i = 0; i < 6; ++i) {
      const auto ma = train_step(a, images, cfg), mb = train_step(b, images, cfg);
      EXPECT_TRUE(same_metrics(ma, mb));
      EXPECT_TRUE(ma.finite());
      EXPECT_LT(std::abs(ma.logit_real), 50);
      EXPECT_LT(std::abs(ma.logit_fake), 50);
    }
    EXPECT_EQ(a.iteration, 6u);
    EXPECT_EQ(a.gen.params().flatten(), b.gen.params().flatten());
  }
}

TEST(TrainStep, AnnealsScaleLowerBound) {
  auto cfg = tiny_config();
  const auto images = tiny_images(3);
  auto st = init_gan<float>(cfg);
  std::vector<double> s;
  for (int i = 0; i < 6; ++i) s.push_back(train_step(st, images, cfg).s_lo);
  EXPECT_EQ(s[0], 2.0);
  EXPECT_EQ(s[2], 1.5);
  EXPECT_EQ(s[4], 1.0);
  EXPECT_EQ(s[5], 1.0);
}

// D(x) = psi x against generator point theta, data at 0.
namespace {
std::pair<double, double> dirac_game(double lambda, int steps) {
  double theta = 1.0, psi = 0.0;
  const double lr = 0.1;
  for (int step = 0; step < steps; ++step) {
    {
      VD p(TD(Shape{1}, {psi}), true);
      auto disc = [&](const VD& x) { return ad::reshape(x * p, Shape{1}); };
      const auto pen = r1_penalty<double>(disc, TD(Shape{1}, {0.0}));
      const auto fake = disc(ad::constant(TD(Shape{1}, {theta})));
      const auto loss = loss_discriminator(pen.logits, fake, pen.penalty, lambda);
      psi -= lr * ad::grad(loss, {p})[0].value()[0];
    }
    {
      VD t(TD(Shape{1}, {theta}), true);
      const auto loss = loss_generator(ad::reshape(t * psi, Shape{1}));
      theta -= lr * ad::grad(loss, {t})[0].value()[0];
    }
  }
  return {theta, psi};
}
}  // namespace

TEST(R1, StabilizesDiracToyGame) {
  const auto [theta_r1, psi_r1] = dirac_game(1.0, 500);
  EXPECT_LT(std::hypot(theta_r1, psi_r1), 1e-2);
  const auto [theta_free, psi_free] = dirac_game(0.0, 500);
  EXPECT_GT(std::hypot(theta_free, psi_free), 0.1);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto cfg = tiny_config();
  auto st = init_gan<float>(cfg);
  const auto images = tiny_images(3);
  train_step(st, images, cfg);
  std::array<std::uint8_t, 32> hash{};
  hash[0] = 7;
  hash[31] = 9;
  const auto path = temp_path("rt.ckpt");
  save_checkpoint(path, to_checkpoint(st, hash, "train.batch=2\n"));
  const auto c = load_checkpoint(path);
  EXPECT_EQ(c.config_hash, hash);
  EXPECT_EQ(c.iteration, 1u);
  EXPECT_EQ(checkpoint_config_text(c), "train.batch=2\n");
  auto fresh = init_gan<float>(cfg);
  restore(fresh, c);
  EXPECT_EQ(store_hash(fresh.gen.params()), store_hash(st.gen.params()));
  EXPECT_EQ(store_hash(fresh.disc.params()), store_hash(st.disc.params()));
  EXPECT_EQ(opt_hash(fresh.opt_g), opt_hash(st.opt_g));
  EXPECT_EQ(opt_hash(fresh.opt_d), opt_hash(st.opt_d));
  EXPECT_EQ(encode_checkpoint(to_checkpoint(fresh, hash, "train.batch=2\n")), encode_checkpoint(c));
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  Checkpoint c;
  c.iteration = 0x0102030405060708ULL;
  c.tensors.emplace("b", TensorRecord::from(ad::Tensor<float>(Shape{2}, {1.5f, -2.0f})));
  c.tensors.emplace("a", TensorRecord::from_values(std::vector<std::uint8_t>{1, 2, 3}));
  const auto bytes = encode_checkpoint(c);
  ASSERT_EQ(bytes.size(), 4u + 4 + 32 + 8 + (4 + 1 + 1 + 1 + 8 + 3) + (4 + 1 + 1 + 1 + 8 + 8));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GRAF");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[40], 0x08);
  EXPECT_EQ(bytes[47], 0x01);
  EXPECT_EQ(bytes[48], 1);    // name length of "a"
  EXPECT_EQ(bytes[52], 'a');  // sorted first
  EXPECT_EQ(bytes[53], 3);    // u8 tag
  EXPECT_EQ(bytes[54], 1);    // rank
}

TEST(Checkpoint, RejectsCorruption) {
  const auto cfg = tiny_config();
  const auto st = init_gan<float>(cfg);
  const auto good = encode_checkpoint(to_checkpoint(st, {}, "x"));
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  bad = good;
  bad[4] = 9;
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, std::size_t{60}, good.size() / 2, good.size() - 1}) {
    std::vector<std::uint8_t> t(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_checkpoint(t), CheckpointError) << cut;
  }
  auto other_cfg = cfg;
  other_cfg.field.depth = 3;
  auto other = init_gan<float>(other_cfg);
  EXPECT_THROW(restore(other, decode_checkpoint(good)), CheckpointError);
}

TEST(Checkpoint, ResumeReproducesUninterruptedRun) {
  const auto cfg = tiny_config(11);
  const auto images = tiny_images(4);
  auto full = init_gan<float>(cfg);
  std::vector<TrainMetrics> ref;
  for (int i = 0; i < 6; ++i) ref.push_back(train_step(full, images, cfg));

  auto part = init_gan<float>(cfg);
  for (int i = 0; i < 3; ++i) train_step(part, images, cfg);
  const auto path = temp_path("resume.ckpt");
  save_checkpoint(path, to_checkpoint(part, {}, ""));
  auto resumed = init_gan<float>(cfg);
  restore(resumed, load_checkpoint(path));
  for (int i = 3; i < 6; ++i) EXPECT_TRUE(same_metrics(train_step(resumed, images, cfg), ref[static_cast<std::size_t>(i)])) << i;
  EXPECT_EQ(store_hash(resumed.gen.params()), store_hash(full.gen.params()));
  EXPECT_EQ(store_hash(resumed.disc.params()), store_hash(full.disc.params()));
  std::filesystem::remove(path);
}

TEST(Metrics, RowFormat) {
  TrainMetrics m;
  m.iter = 3;
  m.loss_d = 1.5;
  m.s_lo = 2;
  const std::string row = metrics_row(m);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 7);
  EXPECT_EQ(row.substr(0, 6), "3,1.5,");
  EXPECT_EQ(std::string(kMetricsHeader), "iter,loss_d,loss_g,r1,logit_real,logit_fake,s_lo,secs");
}
