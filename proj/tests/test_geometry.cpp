#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "graf/core/rng.hpp"
#include "graf/geometry/camera.hpp"
#include "graf/geometry/patch.hpp"

using namespace graf;
using namespace graf::geo;

namespace {

double max_abs(const Vec3& a, const Vec3& b) {
  return std::max({std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.z - b.z)});
}

void expect_rotation(const Mat3& r) {
  const Mat3 rtr = r.transposed() * r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(rtr(i, j), i == j ? 1.0 : 0.0, 1e-9);
  EXPECT_NEAR(r.det(), 1.0, 1e-9);
}

}  // namespace

TEST(Pose, PoleIsResolvedByPolarPerturbation) {
  PoseDistribution d;
  d.polar_cos_min = d.polar_cos_max = 1.0;
  d.radius_min = d.radius_max = 2.0;
  Rng rng(1);
  const CameraPose p = sample_pose(rng, d);
  EXPECT_LT(max_abs(p.center, {0, 0, 2}), 1e-3);
  EXPECT_LT(max_abs(p.forward(), {0, 0, -1}), 1e-3);
  expect_rotation(p.rotation);
}

TEST(Pose, LookAtAndHemisphereInvariants) {
  PoseDistribution d;
  d.radius_min = 1.5;
  d.radius_max = 3.5;
  Rng rng(2);
  const Intrinsics k = Intrinsics::centered(40, 32, 32);
  for (int i = 0; i < 2000; ++i) {
    const CameraPose p = sample_pose(rng, d);
    const double r = norm(p.center);
    EXPECT_GE(r, 1.5 - 1e-12);
    EXPECT_LE(r, 3.5 + 1e-12);
    EXPECT_GE(p.center.z, 0.0);
    expect_rotation(p.rotation);
    // R^T (-t / |t|) is the camera forward axis.
    EXPECT_LT(max_abs(p.rotation.transposed() * (-p.center / r), {0, 0, 1}), 1e-9);
    const auto px = k.project(p.to_camera({0, 0, 0}));
    EXPECT_LT(std::abs(px[0] - k.cx), 1e-6);
    EXPECT_LT(std::abs(px[1] - k.cy), 1e-6);
  }
}

TEST(Pose, CapMeanMatchesAnalytic) {
  PoseDistribution d;
  d.radius_min = d.radius_max = 2.0;
  Rng rng(3);
  double mean = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += sample_pose(rng, d).center.z;
  mean /= n;
  EXPECT_GE(mean, 0.995);
  EXPECT_LE(mean, 1.005);
}

TEST(Pose, CustomUpVectorKeepsHemisphere) {
  PoseDistribution d;
  d.up = {0, 1, 0};
  Rng rng(4);
  for (int i = 0; i < 500; ++i) EXPECT_GE(sample_pose(rng, d).center.y, -1e-12);
}

TEST(Rays, PrincipalPointRayIsOpticalAxis) {
  const Intrinsics k = Intrinsics::centered(30, 32, 24);
  const CameraPose p = pose_from_spherical(0.7, 1.1, 2.5);
  const auto rays = generate_rays(k, p, {{k.cx, k.cy}});
  EXPECT_LT(max_abs(rays[0].direction, p.forward()), 1e-12);
  EXPECT_EQ(rays[0].origin, p.center);
}

TEST(Rays, UnitNormAndHandPinhole) {
  const Intrinsics k = Intrinsics::centered(20, 32, 32);
  const CameraPose id{Mat3::identity(), {0, 0, 0}};
  const auto rays = generate_rays(k, id, {{k.cx + 20, k.cy}});
  const double h = 1.0 / std::sqrt(2.0);
  EXPECT_LT(max_abs(rays[0].direction, {h, 0, h}), 1e-12);
  Rng rng(5);
  std::vector<PixelCoord> coords;
  for (int i = 0; i < 200; ++i) coords.push_back({rng.uniform(0, 31), rng.uniform(0, 31)});
  for (const auto& r : generate_rays(k, pose_from_spherical(1, 0.4, 3), coords)) {
    EXPECT_NEAR(norm(r.direction), 1.0, 1e-9);
  }
}

TEST(Rays, RotationEquivariance) {
  const Intrinsics k = Intrinsics::centered(25, 16, 16);
  const CameraPose p0 = pose_from_spherical(0.3, 0.9, 2.0);
  const Mat3 rot = Mat3::rotation({0.3, -0.5, 0.8}, 1.234);
  const CameraPose p1{rot * p0.rotation, rot * p0.center};
  const auto coords = full_image_coords(16, 16);
  const auto r0 = generate_rays(k, p0, coords);
  const auto r1 = generate_rays(k, p1, coords);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    EXPECT_LT(max_abs(r1[i].direction, rot * r0[i].direction), 1e-9);
    EXPECT_LT(max_abs(r1[i].origin, rot * r0[i].origin), 1e-9);
  }
}

TEST(Patch, MaxScale) { EXPECT_EQ(max_patch_scale(64, 64, 16), 4.0); }

TEST(Patch, CoordsHandEnumerated) {
  const auto c = patch_coords({0, 0, 1, 2});
  const std::vector<PixelCoord> want{{-1, -1}, {0, -1}, {-1, 0}, {0, 0}};
  EXPECT_EQ(c, want);
  const auto c4 = patch_coords({10, 10, 2, 4});
  for (int row = 0; row < 4; ++row) {
    for (int col = 0; col < 4; ++col) {
      EXPECT_EQ(c4[static_cast<std::size_t>(row * 4 + col)].x, 6.0 + 2.0 * col);
      EXPECT_EQ(c4[static_cast<std::size_t>(row * 4 + col)].y, 6.0 + 2.0 * row);
    }
  }
}

TEST(Patch, CoordsAreAffineInPattern) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const PatchPattern p{rng.uniform(10, 20), rng.uniform(10, 20), rng.uniform(1, 3), 8};
    const auto base = patch_coords({0, 0, 1, 8});
    const auto c = patch_coords(p);
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_NEAR(c[i].x, p.scale * base[i].x + p.u, 1e-12);
      EXPECT_NEAR(c[i].y, p.scale * base[i].y + p.v, 1e-12);
    }
  }
}

TEST(Patch, MaxScaleCenterIsForcedInside) {
  const CenterRange r = valid_centers(64, 64, 16, 4.0);
  EXPECT_EQ(r.lo_x, 32.0);
  EXPECT_EQ(r.hi_x, 35.0);
  for (double u : {r.lo_x, r.hi_x}) {
    const auto c = patch_coords({u, u, 4.0, 16});
    EXPECT_GE(c.front().x, 0.0);
    EXPECT_LE(c.back().x, 63.0);
  }
}

TEST(Patch, SampledPatternsStayInDomain) {
  const AnnealSchedule sched{4.0, 1000};
  for (long long iter : {0LL, 250LL, 500LL, 2000LL}) {
    Rng rng(static_cast<std::uint64_t>(100 + iter));
    const double s_lo = sched.lower_bound(iter);
    for (int i = 0; i < 100000 / 4; ++i) {
      const PatchPattern p = sample_pattern(rng, 64, 64, 16, s_lo);
      ASSERT_GE(p.scale, s_lo);
      ASSERT_LE(p.scale, 4.0);
      const auto c = patch_coords(p);
      ASSERT_GE(c.front().x, 0.0);
      ASSERT_GE(c.front().y, 0.0);
      ASSERT_LE(c.back().x, 63.0);
      ASSERT_LE(c.back().y, 63.0);
    }
  }
}

TEST(Patch, AnnealSchedule) {
  const AnnealSchedule s{4.0, 1000};
  EXPECT_EQ(s.lower_bound(0), 4.0);
  EXPECT_EQ(s.lower_bound(1000), 1.0);
  EXPECT_EQ(s.lower_bound(5000), 1.0);
  EXPECT_EQ(s.lower_bound(500), 2.5);
  EXPECT_THROW(s.lower_bound(-1), std::invalid_argument);
}

TEST(Bilinear, LatticeAndMidpoint) {
  Image img(2, 1);
  img.at(1, 0, 0) = 1.0;
  img.at(0, 0, 1) = 0.25;
  auto v = bilinear_extract(img, {{0, 0}, {1, 0}, {0.5, 0}});
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 0.25);
  EXPECT_EQ(v[3], 1.0);
  EXPECT_EQ(v[6], 0.5);
  EXPECT_THROW(bilinear_extract(img, {{1.5, 0}}), OutOfDomain);
  EXPECT_THROW(bilinear_extract(img, {{0, -0.1}}), OutOfDomain);
}

TEST(Bilinear, MatchesFourNeighbourOracle) {
  Rng rng(8);
  Image img(8, 8);
  for (auto& v : img.data) v = rng.uniform();
  std::vector<PixelCoord> coords;
  for (int i = 0; i < 500; ++i) coords.push_back({rng.uniform(0, 7), rng.uniform(0, 7)});
  const auto got = bilinear_extract(img, coords);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double x = coords[i].x, y = coords[i].y;
    // Weighted sum over the 4 lattice neighbours with tent weights.
    for (int c = 0; c < 3; ++c) {
      double want = 0;
      for (int yy = 0; yy < 8; ++yy)
        for (int xx = 0; xx < 8; ++xx) {
          const double wx = std::max(0.0, 1 - std::abs(x - xx));
          const double wy = std::max(0.0, 1 - std::abs(y - yy));
          want += wx * wy * img.at(xx, yy, c);
        }
      EXPECT_NEAR(got[i * 3 + static_cast<std::size_t>(c)], want, 1e-12);
    }
  }
}

TEST(Bilinear, UnitScaleIntegerCenterIsExactCrop) {
  Rng rng(9);
  Image img(16, 16);
  for (auto& v : img.data) v = rng.uniform();
  const PatchPattern p{7, 9, 1.0, 4};
  const auto coords = patch_coords(p);
  const auto got = bilinear_extract(img, coords);
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      EXPECT_EQ(got[i * 3 + static_cast<std::size_t>(c)],
                img.at(static_cast<int>(coords[i].x), static_cast<int>(coords[i].y), c));
    }
}
