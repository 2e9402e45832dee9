#pragma once

// Analytic Lambertian ray tracer over spheres and axis-aligned boxes, and a
// parametric scene distribution.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "graf/core/image.hpp"
#include "graf/core/rng.hpp"
#include "graf/geometry/camera.hpp"

namespace graf::scene {

using Rgb = std::array<double, 3>;

struct Sphere {
  geo::Vec3 center;
  double radius = 0.5;
  Rgb albedo{0.5, 0.5, 0.5};
};

struct Box {
  geo::Vec3 lo, hi;
  Rgb albedo{0.5, 0.5, 0.5};
};

using Primitive = std::variant<Sphere, Box>;

struct SceneSpec {
  std::vector<Primitive> primitives;
  geo::Vec3 light{0, 0, 1};  // unit, pointing toward the light
  double ambient = 0.3;
  Rgb background{1, 1, 1};

  // Throws unless albedos lie in [0, 1], the light is unit length and every primitive fits in radius `bound`.
  void validate(double bound) const;
};

inline double max_extent(const Primitive& p) {
  if (const auto* s = std::get_if<Sphere>(&p)) return geo::norm(s->center) + s->radius;
  const auto& b = std::get<Box>(p);
  double m = 0;
  for (int i = 0; i < 8; ++i) {
    const geo::Vec3 c{(i & 1) ? b.hi.x : b.lo.x, (i & 2) ? b.hi.y : b.lo.y, (i & 4) ? b.hi.z : b.lo.z};
    m = std::max(m, geo::norm(c));
  }
  return m;
}

inline void SceneSpec::validate(double bound) const {
  auto check_albedo = [](const Rgb& a) {
    for (double v : a)
      if (!(v >= 0 && v <= 1)) throw std::invalid_argument("albedo channels must lie in [0, 1]");
  };
  if (std::abs(geo::norm(light) - 1) > 1e-9) throw std::invalid_argument("light direction must be unit length");
  if (!(ambient >= 0 && ambient <= 1)) throw std::invalid_argument("ambient term must lie in [0, 1]");
  for (const auto& p : primitives) {
    std::visit([&](const auto& q) { check_albedo(q.albedo); }, p);
    if (const auto* b = std::get_if<Box>(&p)) {
      if (!(b->lo.x < b->hi.x && b->lo.y < b->hi.y && b->lo.z < b->hi.z)) throw std::invalid_argument("box corners must be ordered");
    } else if (!(std::get<Sphere>(p).radius > 0)) {
      throw std::invalid_argument("sphere radius must be positive");
    }
    if (max_extent(p) > bound * (1 + 1e-12)) {
      throw std::invalid_argument("primitive extends to radius " + std::to_string(max_extent(p)) + ", beyond the bound " +
                                  std::to_string(bound));
    }
  }
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  geo::Vec3 normal;
  Rgb albedo{};
};

inline std::optional<Hit> intersect(const Sphere& s, const geo::Ray& r) {
  const geo::Vec3 oc = r.origin - s.center;
  const double b = geo::dot(oc, r.direction);
  const double c = geo::dot(oc, oc) - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= 0) t = -b + sq;
  if (t <= 0) return std::nullopt;
  return Hit{t, (r.origin + r.direction * t - s.center) / s.radius, s.albedo};
}

inline std::optional<Hit> intersect(const Box& bx, const geo::Ray& r) {
  const double o[3] = {r.origin.x, r.origin.y, r.origin.z}, d[3] = {r.direction.x, r.direction.y, r.direction.z};
  const double lo[3] = {bx.lo.x, bx.lo.y, bx.lo.z}, hi[3] = {bx.hi.x, bx.hi.y, bx.hi.z};
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis0 = 0, axis1 = 0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) t0 = ta, axis0 = a;
    if (tb < t1) t1 = tb, axis1 = a;
  }
  if (t0 > t1 || t1 <= 0) return std::nullopt;
  const bool inside = t0 <= 0;
  const double t = inside ? t1 : t0;
  const int axis = inside ? axis1 : axis0;
  double n[3] = {0, 0, 0};
  n[axis] = d[axis] > 0 ? -1.0 : 1.0;
  if (inside) n[axis] = -n[axis];
  return Hit{t, {n[0], n[1], n[2]}, bx.albedo};
}

inline std::optional<Hit> nearest_hit(const SceneSpec& s, const geo::Ray& r) {
  std::optional<Hit> best;
  for (const auto& p : s.primitives) {
    const auto h = std::visit([&](const auto& q) { return intersect(q, r); }, p);
    if (h && (!best || h->t < best->t)) best = h;
  }
  return best;
}

// albedo * (ambient + (1 - ambient) max(0, n.l)).
inline Rgb shade(const SceneSpec& s, const Hit& h) {
  const double k = s.ambient + (1 - s.ambient) * std::max(0.0, geo::dot(h.normal, s.light));
  return {h.albedo[0] * k, h.albedo[1] * k, h.albedo[2] * k};
}

inline Rgb trace(const SceneSpec& s, const geo::Ray& r) {
  const auto h = nearest_hit(s, r);
  return h ? shade(s, *h) : s.background;
}

// One ray per pixel through the same pixel convention as the renderer.
inline Image raytrace(const SceneSpec& s, const geo::Intrinsics& k, const geo::CameraPose& pose) {
  Image img(k.width, k.height);
  const auto rays = geo::generate_rays(k, pose, geo::full_image_coords(k.width, k.height));
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const Rgb c = trace(s, rays[i]);
    for (int ch = 0; ch < 3; ++ch) img.data[i * 3 + static_cast<std::size_t>(ch)] = c[static_cast<std::size_t>(ch)];
  }
  img.clamp01();
  return img;
}

struct Range {
  double lo = 0, hi = 0;
  double draw(Rng& rng) const { return rng.uniform(lo, hi); }
  void validate(const std::string& what) const {
    if (!(lo <= hi)) throw std::invalid_argument(what + " range must satisfy lo <= hi");
  }
};

struct SceneDistribution {
  double bound = 1.2;  // containment radius, equal to the renderer's bound
  int primitives = 1;
  double box_weight = 0.0;  // probability a primitive is a box
  Range sphere_radius{0.5, 0.9};
  Range box_half_extent{0.3, 0.6};
  double center_offset = 0.0;  // maximum distance of a primitive center from the origin
  std::array<Range, 3> albedo{Range{0, 1}, Range{0, 1}, Range{0, 1}};
  geo::Vec3 light = geo::normalize(geo::Vec3{0.3, -0.4, 1.0});
  double ambient = 0.3;
  Rgb background{1, 1, 1};

  void validate() const {
    if (!(bound > 0)) throw std::invalid_argument("scene bound must be positive");
    if (primitives < 0) throw std::invalid_argument("primitive count must be non-negative");
    if (!(box_weight >= 0 && box_weight <= 1)) throw std::invalid_argument("box weight must lie in [0, 1]");
    sphere_radius.validate("sphere radius");
    box_half_extent.validate("box half extent");
    for (const auto& a : albedo) {
      a.validate("albedo");
      if (a.lo < 0 || a.hi > 1) throw std::invalid_argument("albedo range must lie in [0, 1]");
    }
    if (!(sphere_radius.lo > 0) || sphere_radius.hi > bound) throw std::invalid_argument("sphere radius must lie in (0, bound]");
    if (!(box_half_extent.lo > 0) || box_half_extent.hi * std::sqrt(3.0) > bound) {
      throw std::invalid_argument("box half extent must be positive and the box must fit in the bound");
    }
    if (center_offset < 0) throw std::invalid_argument("center offset must be non-negative");
    if (!(geo::norm(light) > 0)) throw std::invalid_argument("light direction must be non-zero");
    if (!(ambient >= 0 && ambient <= 1)) throw std::invalid_argument("ambient term must lie in [0, 1]");
  }
};

namespace detail {

// Uniform point in a ball of the given radius.
inline geo::Vec3 point_in_ball(Rng& rng, double radius) {
  if (radius <= 0) return {0, 0, 0};
  const double u = rng.uniform(-1, 1), phi = rng.uniform(0, 2 * std::numbers::pi), r = radius * std::cbrt(rng.uniform());
  const double s = std::sqrt(1 - u * u);
  return {r * s * std::cos(phi), r * s * std::sin(phi), r * u};
}

}  // namespace detail

// Centers are drawn inside the ball that keeps each primitive within the bound.
inline SceneSpec sample_scene(Rng& rng, const SceneDistribution& dist) {
  dist.validate();
  SceneSpec s;
  s.light = geo::normalize(dist.light);
  s.ambient = dist.ambient;
  s.background = dist.background;
  for (int i = 0; i < dist.primitives; ++i) {
    const bool box = rng.uniform() < dist.box_weight;
    Rgb albedo;
    for (std::size_t c = 0; c < 3; ++c) albedo[c] = dist.albedo[c].draw(rng);
    if (box) {
      const geo::Vec3 h{dist.box_half_extent.draw(rng), dist.box_half_extent.draw(rng), dist.box_half_extent.draw(rng)};
      const geo::Vec3 c = detail::point_in_ball(rng, std::min(dist.center_offset, dist.bound - geo::norm(h)));
      s.primitives.emplace_back(Box{c - h, c + h, albedo});
    } else {
      const double r = dist.sphere_radius.draw(rng);
      const geo::Vec3 c = detail::point_in_ball(rng, std::min(dist.center_offset, dist.bound - r));
      s.primitives.emplace_back(Sphere{c, r, albedo});
    }
  }
  return s;
}

}  // namespace graf::scene
