#pragma once

// Pinhole camera, look-at poses on a spherical cap, and ray generation.
//
// Camera frame: x right, y down, z forward. A pose stores the camera-to-world
// rotation R (columns are the camera axes in world coordinates) and the camera
// center t. Pixel (x, y) maps to the camera-frame direction
// ((x - cx) / f, (y - cy) / f, 1) before rotation and normalization.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/core/rng.hpp"
#include "graf/geometry/vec.hpp"

namespace graf::geo {

struct Intrinsics {
  double focal = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  // Principal point at (W/2, H/2).
  static Intrinsics centered(double focal, int width, int height) {
    if (!(focal > 0)) throw std::invalid_argument("focal length must be positive");
    if (width < 1 || height < 1) throw std::invalid_argument("image size must be positive");
    return Intrinsics{focal, width / 2.0, height / 2.0, width, height};
  }

  // Projects a camera-frame point to pixel coordinates.
  std::array<double, 2> project(const Vec3& p_cam) const {
    return {focal * p_cam.x / p_cam.z + cx, focal * p_cam.y / p_cam.z + cy};
  }
};

struct CameraPose {
  Mat3 rotation;  // camera-to-world
  Vec3 center;

  Vec3 forward() const { return rotation.column(2); }
  Vec3 to_camera(const Vec3& world) const { return rotation.transposed() * (world - center); }
};

class DegeneratePose : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Camera at `center` looking at the world origin.
inline CameraPose look_at_origin(const Vec3& center, const Vec3& up) {
  const double dist = norm(center);
  if (!(dist > 0)) throw DegeneratePose("camera center coincides with the look-at target");
  const Vec3 fwd = -center / dist;
  const Vec3 r = cross(fwd, up);
  const double rn = norm(r);
  if (rn < 1e-12 * norm(up)) throw DegeneratePose("up vector parallel to the viewing direction");
  const Vec3 right = r / rn;
  const Vec3 down = cross(fwd, right);
  return CameraPose{Mat3::from_columns(right, down, fwd), center};
}

struct PoseDistribution {
  double azimuth_min = 0.0;
  double azimuth_max = 2.0 * std::numbers::pi;
  double polar_cos_min = 0.0;  // cosine of the angle from the up vector
  double polar_cos_max = 1.0;
  double radius_min = 3.0;
  double radius_max = 3.0;
  Vec3 up{0, 0, 1};

  void validate() const {
    if (azimuth_min > azimuth_max) throw std::invalid_argument("azimuth range is empty");
    if (polar_cos_min > polar_cos_max || polar_cos_min < -1 || polar_cos_max > 1) {
      throw std::invalid_argument("polar cosine range must lie within [-1, 1]");
    }
    if (!(radius_min > 0) || radius_min > radius_max) throw std::invalid_argument("radius range must be positive and ordered");
    if (!(norm(up) > 0)) throw std::invalid_argument("up vector must be non-zero");
  }
};

struct SphericalBasis {
  Vec3 e1, e2, up;
};

inline SphericalBasis basis_around(const Vec3& up) {
  const Vec3 e3 = normalize(up);
  const Vec3 a = std::abs(e3.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 e1 = normalize(a - e3 * dot(a, e3));
  return {e1, cross(e3, e1), e3};
}

// Degenerate look-at rule: a camera on the up axis is nudged by this polar angle.
inline constexpr double kPolarPerturbation = 1e-4;

// Look-at pose from azimuth and polar angle (radians, polar measured from up).
inline CameraPose pose_from_spherical(double azimuth, double polar, double radius, const Vec3& up = {0, 0, 1}) {
  const SphericalBasis b = basis_around(up);
  for (int attempt = 0; attempt < 4; ++attempt) {
    const Vec3 dir = b.e1 * (std::sin(polar) * std::cos(azimuth)) + b.e2 * (std::sin(polar) * std::sin(azimuth)) +
                     b.up * std::cos(polar);
    try {
      return look_at_origin(dir * radius, up);
    } catch (const DegeneratePose&) {
      polar += kPolarPerturbation;
    }
  }
  throw DegeneratePose("could not resolve degenerate pose");
}

// Area-uniform draw on the cap: azimuth uniform, cosine of polar angle uniform.
inline CameraPose sample_pose(Rng& rng, const PoseDistribution& dist) {
  const double azimuth = rng.uniform(dist.azimuth_min, dist.azimuth_max);
  const double v = rng.uniform(dist.polar_cos_min, dist.polar_cos_max);
  const double radius = rng.uniform(dist.radius_min, dist.radius_max);
  return pose_from_spherical(azimuth, std::acos(std::clamp(v, -1.0, 1.0)), radius, dist.up);
}

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

struct PixelCoord {
  double x = 0, y = 0;
  bool operator==(const PixelCoord&) const = default;
};

inline Vec3 pixel_direction(const Intrinsics& k, const CameraPose& pose, const PixelCoord& p) {
  const Vec3 cam{(p.x - k.cx) / k.focal, (p.y - k.cy) / k.focal, 1.0};
  return normalize(pose.rotation * cam);
}

inline std::vector<Ray> generate_rays(const Intrinsics& k, const CameraPose& pose, const std::vector<PixelCoord>& coords) {
  std::vector<Ray> rays;
  rays.reserve(coords.size());
  for (const auto& p : coords) rays.push_back(Ray{pose.center, pixel_direction(k, pose, p)});
  return rays;
}

// Every pixel of a W x H image, row-major.
inline std::vector<PixelCoord> full_image_coords(int width, int height) {
  std::vector<PixelCoord> out;
  out.reserve(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.push_back({static_cast<double>(x), static_cast<double>(y)});
  return out;
}

}  // namespace graf::geo
