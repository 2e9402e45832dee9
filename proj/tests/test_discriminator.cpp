#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <type_traits>

#include "graf/diffcore/gradcheck.hpp"
#include "graf/discriminator/discriminator.hpp"

using namespace graf;
using namespace graf::disc;
using ad::Shape;
using TD = ad::Tensor<double>;
using VD = ad::Var<double>;

namespace {

double svd_top(const TD& w) {
  Eigen::MatrixXd m(w.shape()[0], w.shape()[1]);
  for (std::size_t i = 0; i < w.shape()[0]; ++i)
    for (std::size_t j = 0; j < w.shape()[1]; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w.at(i, j);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

TD random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  TD w(Shape{r, c});
  for (auto& v : w.values()) v = rng.normal();
  return w;
}

DiscArchitecture toy_arch(bool norm = true) {
  DiscArchitecture a;
  a.channels = {8, 16};
  a.kernel = 3;
  a.stride = 1;
  a.instance_norm = norm;
  return a;
}

TD random_patches(Rng& rng, std::size_t b, std::size_t k) {
  TD p(Shape{b, k, k, 3});
  for (auto& v : p.values()) v = rng.uniform(-1, 1);
  return p;
}

}  // namespace

TEST(Spectral, IdentityIsFixed) {
  Rng rng(1);
  TD eye(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1;
  auto st = SpectralState<double>::random(rng, 3);
  const auto w = spectral_normalize(ad::constant(eye), st, 1);
  EXPECT_NEAR(st.sigma(eye), 1.0, 1e-15);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(w.value()[i], eye[i], 1e-15);
}

TEST(Spectral, DiagonalTwoOne) {
  Rng rng(2);
  TD d(Shape{2, 2}, {2, 0, 0, 1});
  auto st = SpectralState<double>::random(rng, 2);
  const auto w = spectral_normalize(ad::constant(d), st, 20);
  EXPECT_GE(st.sigma(d), 1.98);
  EXPECT_LE(st.sigma(d), 2.02);
  const double top = svd_top(w.value());
  EXPECT_GE(top, 0.99);
  EXPECT_LE(top, 1.01);
}

TEST(Spectral, RandomMatrixAgainstSvd) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const TD w = random_matrix(rng, 16, 48);
    auto st = SpectralState<double>::random(rng, 16);
    st.iterate(w, 50);
    EXPECT_LT(std::abs(st.sigma(w) / svd_top(w) - 1), 0.01);
  }
}

TEST(Spectral, EstimateIsMonotoneAndUnit) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const TD w = random_matrix(rng, 24, 40);
    auto st = SpectralState<double>::random(rng, 24);
    double prev = st.sigma(w);
    for (int k = 0; k < 40; ++k) {
      st.iterate(w, 1);
      const double cur = st.sigma(w);
      EXPECT_GE(cur, prev - 1e-9);
      prev = cur;
      double n = 0;
      for (double v : st.u()) n += v * v;
      EXPECT_NEAR(n, 1.0, 1e-12);
    }
    EXPECT_LE(prev, svd_top(w) * (1 + 1e-12));
  }
}

TEST(Spectral, ZeroMatrixStaysZero) {
  Rng rng(5);
  TD z(Shape{4, 6});
  auto st = SpectralState<double>::random(rng, 4);
  const auto w = spectral_normalize(ad::constant(z), st, 3);
  for (double v : w.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(Spectral, ScaleIsConstantOnTape) {
  Rng rng(6);
  const TD w0 = random_matrix(rng, 5, 7);
  auto st = SpectralState<double>::random(rng, 5);
  st.iterate(w0, 30);
  VD w(w0, true);
  const auto g = ad::grad(ad::sum_all(st.normalize(w)), {w});
  const double inv = 1.0 / st.sigma(w0);
  for (double v : g[0].value().values()) EXPECT_DOUBLE_EQ(v, inv);
}

TEST(InstanceNorm, ConstantChannelMapsToZero) {
  const auto y = instance_norm(ad::constant(TD(Shape{2, 3, 3, 4}, 5.0)));
  for (double v : y.value().values()) EXPECT_LT(std::abs(v), 1e-2);
}

TEST(InstanceNorm, StandardizesEachSampleChannel) {
  Rng rng(7);
  TD x(Shape{3, 5, 4, 6});
  for (auto& v : x.values()) v = rng.uniform(-3, 7);
  const auto y = instance_norm(ad::constant(x)).value();
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t c = 0; c < 6; ++c) {
      double m = 0, s = 0;
      for (std::size_t p = 0; p < 20; ++p) m += y[(b * 20 + p) * 6 + c] / 20;
      for (std::size_t p = 0; p < 20; ++p) s += std::pow(y[(b * 20 + p) * 6 + c] - m, 2) / 20;
      EXPECT_LT(std::abs(m), 1e-6);
      EXPECT_GE(s, 1 - 1e-3);
      EXPECT_LE(s, 1 + 1e-3);
    }
}

TEST(InstanceNorm, StandardizedInputIsFixed) {
  Rng rng(8);
  TD x(Shape{1, 4, 4, 2});
  for (auto& v : x.values()) v = rng.normal();
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0, s = 0;
    for (std::size_t p = 0; p < 16; ++p) m += x[p * 2 + c] / 16;
    for (std::size_t p = 0; p < 16; ++p) s += std::pow(x[p * 2 + c] - m, 2) / 16;
    for (std::size_t p = 0; p < 16; ++p) x[p * 2 + c] = (x[p * 2 + c] - m) / std::sqrt(s);
  }
  const auto y = instance_norm(ad::constant(x)).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-4);
}

TEST(InstanceNorm, InvariantToPositiveAffineShift) {
  Rng rng(9);
  TD x(Shape{2, 4, 4, 3});
  for (auto& v : x.values()) v = rng.uniform(-10, 10);
  TD z = x;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      const double a = rng.uniform(1, 4), sh = rng.uniform(-5, 5);
      for (std::size_t p = 0; p < 16; ++p) z[(b * 16 + p) * 3 + c] = a * x[(b * 16 + p) * 3 + c] + sh;
    }
  const auto y1 = instance_norm(ad::constant(x)).value(), y2 = instance_norm(ad::constant(z)).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-6);
}

TEST(Discriminator, DefaultLadderForSixteen) {
  DiscArchitecture a;
  EXPECT_EQ(a.padding(), 1);
  EXPECT_EQ(a.final_size(16), 2);
  EXPECT_THROW(a.validate(4), std::invalid_argument);
  Rng rng(10);
  const auto d = Discriminator<float>::init(rng, a, 16);
  EXPECT_EQ(d.params().at("head.weight").shape(), (Shape{1, 2 * 2 * 256}));
  EXPECT_EQ(d.params().at("conv.1.weight").shape(), (Shape{128, 4 * 4 * 64}));
  EXPECT_FALSE(d.params().contains("norm.0.gamma"));
  EXPECT_TRUE(d.params().contains("norm.2.gamma"));
  EXPECT_FALSE(d.params().trainable("conv.0.sn_u"));
}

TEST(Discriminator, TakesNoScaleInput) {
  static_assert(std::is_invocable_v<decltype(&Discriminator<double>::forward), const Discriminator<double>&, const VD&>);
  SUCCEED();
}

TEST(Discriminator, IdenticalPatchesGiveIdenticalLogits) {
  Rng rng(11);
  const auto d = Discriminator<float>::init(rng, DiscArchitecture{}, 16);
  ad::Tensor<float> one(Shape{1, 16, 16, 3});
  for (auto& v : one.values()) v = static_cast<float>(rng.uniform());
  ad::Tensor<float> four(Shape{4, 16, 16, 3});
  for (std::size_t b = 0; b < 4; ++b) std::copy(one.values().begin(), one.values().end(), four.values().begin() + static_cast<std::ptrdiff_t>(b * one.size()));
  const auto l = d.forward(ad::constant(four)).value();
  for (std::size_t b = 1; b < 4; ++b) EXPECT_EQ(l[b], l[0]);
  EXPECT_EQ(d.forward(ad::constant(one)).value()[0], l[0]);
}

TEST(Discriminator, RejectsWrongPatchSize) {
  Rng rng(12);
  const auto d = Discriminator<double>::init(rng, toy_arch(), 4);
  EXPECT_THROW(d.forward(ad::constant(TD(Shape{2, 6, 6, 3}))), ad::ShapeError);
}

TEST(Discriminator, InputGradientMatchesFiniteDifferences) {
  Rng rng(13);
  const auto d = Discriminator<double>::init(rng, toy_arch(), 4);
  const TD p = random_patches(rng, 3, 4);
  TD w(Shape{3});
  for (auto& v : w.values()) v = rng.uniform(-1, 1);
  ad::MultiFn<double> fn = [&](const std::vector<VD>& v) { return ad::sum_all(d.forward(v[0]) * ad::constant(w)); };
  EXPECT_LT(ad::finite_diff_check<double>(fn, {p}, 1e-6).max_rel_error, 1e-5);
}

TEST(Discriminator, ParameterGradientMatchesFiniteDifferences) {
  Rng rng(14);
  auto d = Discriminator<double>::init(rng, toy_arch(), 4);
  d.freeze_scales();
  const TD p = random_patches(rng, 2, 4);
  const auto names = d.params().trainable_names();
  std::vector<TD> inputs;
  for (const auto& n : names) inputs.push_back(d.params().at(n).value());
  ad::MultiFn<double> fn = [&](const std::vector<VD>& v) {
    Discriminator<double> view = d;
    for (std::size_t i = 0; i < names.size(); ++i) view.params().bind(names[i], v[i]);
    const auto l = view.forward(ad::constant(p));
    return ad::sum_all(ad::square(l));
  };
  EXPECT_LT(ad::finite_diff_check<double>(fn, inputs, 1e-6).max_rel_error, 1e-4);
}

TEST(Discriminator, PowerStepKeepsUnitEstimates) {
  Rng rng(15);
  auto d = Discriminator<double>::init(rng, toy_arch(), 4);
  const auto before = d.params().at("conv.1.sn_u").value();
  d.power_step();
  const auto after = d.params().at("conv.1.sn_u").value();
  double n = 0;
  for (double v : after.values()) n += v * v;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_EQ(after.shape(), before.shape());
}

// Without instance norm each layer is a linear map followed by a 1-Lipschitz activation;
// a conv with unfolded matrix W has operator norm <= |W|_2 * ceil(k/s).
TEST(Discriminator, LipschitzBoundWithoutInstanceNorm) {
  Rng rng(16);
  DiscArchitecture a;
  a.channels = {8, 16, 32};
  a.instance_norm = false;
  auto d = Discriminator<double>::init(rng, a, 16);
  d.power_step(30);
  double bound = 1;
  const double overlap = std::ceil(static_cast<double>(a.kernel) / a.stride);
  for (const auto& layer : d.spectral_layers()) {
    const double top = svd_top(d.normalized_weight(layer).value());
    EXPECT_LE(top, 1.01) << layer;
    bound *= top * (layer == "head" ? 1.0 : overlap);
  }
  for (int pair = 0; pair < 100; ++pair) {
    const TD p = random_patches(rng, 1, 16);
    TD q = p;
    const double scale = rng.uniform(1e-3, 1);
    double dist = 0;
    for (auto& v : q.values()) {
      const double e = scale * rng.normal();
      v += e;
      dist += e * e;
    }
    const double gap = std::abs(d.forward(ad::constant(p)).item() - d.forward(ad::constant(q)).item());
    EXPECT_LE(gap, bound * std::sqrt(dist) * (1 + 1e-12));
  }
}
