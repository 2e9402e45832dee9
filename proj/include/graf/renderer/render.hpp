#pragma once

// Patch rendering for training and chunked full-image rendering for inference.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "graf/core/image.hpp"
#include "graf/field/radiance_field.hpp"
#include "graf/geometry/patch.hpp"
#include "graf/renderer/volume.hpp"

namespace graf::render {

struct RenderConfig {
  int samples_n = 64;
  double bound_b = 1.2;
  std::array<double, 3> background{1, 1, 1};
  int chunk_rays = 1024;

  void validate() const {
    if (samples_n < 1) throw std::invalid_argument("render.samples_n must be >= 1");
    if (!(bound_b > 0)) throw std::invalid_argument("render.bound_b must be positive");
    if (chunk_rays < 1) throw std::invalid_argument("render.chunk_rays must be >= 1");
    for (double c : background)
      if (!(c >= 0 && c <= 1)) throw std::invalid_argument("render.background channels must lie in [0, 1]");
  }
};

// Ray r of a render call draws its offsets from substream (seed, strata, {iteration, phase, r}).
// Without a key every ray uses bin midpoints.
struct StrataKey {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t phase = 0;
};

// One rendered view: a camera plus the pixel positions of its rays.
struct RayGroup {
  geo::CameraPose pose;
  std::vector<geo::PixelCoord> pixels;
};

template <typename T>
struct RenderResult {
  ad::Var<T> rgb;    // G x R x 3, background applied
  ad::Var<T> alpha;  // G x R
};

// Field coordinates are world points divided by the scene bound, so the bounding sphere maps onto
// the unit ball where the encoding is injective. Samples outside it carry zero density.
template <typename T>
struct RayBatch {
  ad::Tensor<T> points;  // G x R x N x 3, field coordinates
  ad::Tensor<T> dirs;    // G x R x 3
  ad::Tensor<T> delta;   // G x R x N
  ad::Tensor<T> inside;  // G x R x N, 1 inside the bounding sphere and 0 outside
};

// Geometry for every ray of every group; `ray_offset` numbers the first ray for strata keys.
template <typename T>
RayBatch<T> build_rays(const geo::Intrinsics& intr, const std::vector<RayGroup>& groups, const RenderConfig& cfg,
                       const std::optional<StrataKey>& strata, std::size_t ray_offset = 0) {
  if (groups.empty()) throw std::invalid_argument("render: no ray groups");
  const std::size_t g = groups.size(), r = groups[0].pixels.size(), n = static_cast<std::size_t>(cfg.samples_n);
  for (const auto& grp : groups)
    if (grp.pixels.size() != r) throw std::invalid_argument("render: ray groups must have equal ray counts");
  RayBatch<T> b{ad::Tensor<T>(ad::Shape{g, r, n, 3}), ad::Tensor<T>(ad::Shape{g, r, 3}), ad::Tensor<T>(ad::Shape{g, r, n}),
                ad::Tensor<T>(ad::Shape{g, r, n})};
  const double inv_b = 1 / cfg.bound_b;
  std::size_t ray_index = ray_offset;
  for (std::size_t gi = 0; gi < g; ++gi) {
    const auto& grp = groups[gi];
    const DepthRange range = DepthRange::around_origin(geo::norm(grp.pose.center), cfg.bound_b);
    const std::vector<geo::Ray> rays = geo::generate_rays(intr, grp.pose, grp.pixels);
    const std::vector<double> mid = strata ? std::vector<double>{} : bin_midpoints(range, cfg.samples_n);
    for (std::size_t ri = 0; ri < r; ++ri, ++ray_index) {
      std::vector<double> depths;
      if (strata) {
        Rng rng = Rng::substream(strata->seed, Stream::kStrata, {strata->iteration, strata->phase, ray_index});
        depths = stratified_depths(rng, range, cfg.samples_n);
      } else {
        depths = mid;
      }
      const std::vector<double> sp = sample_spacings(depths, range);
      const geo::Ray& ray = rays[ri];
      const std::size_t base = gi * r + ri;
      b.dirs[base * 3] = static_cast<T>(ray.direction.x);
      b.dirs[base * 3 + 1] = static_cast<T>(ray.direction.y);
      b.dirs[base * 3 + 2] = static_cast<T>(ray.direction.z);
      for (std::size_t k = 0; k < n; ++k) {
        const geo::Vec3 x = (ray.origin + ray.direction * depths[k]) * inv_b;
        const std::size_t p = (base * n + k) * 3;
        b.points[p] = static_cast<T>(x.x);
        b.points[p + 1] = static_cast<T>(x.y);
        b.points[p + 2] = static_cast<T>(x.z);
        b.delta[base * n + k] = static_cast<T>(sp[k]);
        b.inside[base * n + k] = geo::norm(x) <= 1 ? T(1) : T(0);
      }
    }
  }
  return b;
}

// Renders every group's rays; z_shape is G x M_s and z_app G x M_a.
template <typename T>
RenderResult<T> render_rays(const field::RadianceField<T>& f, const geo::Intrinsics& intr, const std::vector<RayGroup>& groups,
                            const ad::Var<T>& z_shape, const ad::Var<T>& z_app, const RenderConfig& cfg,
                            const std::optional<StrataKey>& strata, std::size_t ray_offset = 0) {
  cfg.validate();
  RayBatch<T> b = build_rays<T>(intr, groups, cfg, strata, ray_offset);
  const auto out = f.forward(ad::constant(std::move(b.points)), ad::constant(std::move(b.dirs)), z_shape, z_app);
  const ad::Var<T> sigma = out.sigma * ad::constant(std::move(b.inside));
  const Composite<T> c = composite(out.rgb, sigma, ad::constant(std::move(b.delta)));
  return {over_background(c, cfg.background), c.alpha};
}

struct PatchView {
  geo::CameraPose pose;
  geo::PatchPattern pattern;
};

// G patches as a G x K x K x 3 tensor, row-major within each patch.
template <typename T>
ad::Var<T> render_patches(const field::RadianceField<T>& f, const geo::Intrinsics& intr, const std::vector<PatchView>& views,
                          const ad::Var<T>& z_shape, const ad::Var<T>& z_app, const RenderConfig& cfg,
                          const std::optional<StrataKey>& strata) {
  std::vector<RayGroup> groups;
  groups.reserve(views.size());
  int k = 0;
  for (const auto& v : views) {
    geo::check_patch_size(v.pattern.size, intr.width, intr.height);
    if (k != 0 && v.pattern.size != k) throw std::invalid_argument("render_patches: patch sizes differ");
    k = v.pattern.size;
    groups.push_back({v.pose, geo::patch_coords(v.pattern)});
  }
  const auto res = render_rays(f, intr, groups, z_shape, z_app, cfg, strata);
  const std::size_t ks = static_cast<std::size_t>(k);
  return ad::reshape(res.rgb, ad::Shape{views.size(), ks, ks, 3});
}

// Single patch, K x K x 3.
template <typename T>
ad::Var<T> render_patch(const field::RadianceField<T>& f, const geo::Intrinsics& intr, const geo::CameraPose& pose,
                        const geo::PatchPattern& pattern, const field::LatentCodes& z, const RenderConfig& cfg,
                        const std::optional<StrataKey>& strata = std::nullopt) {
  const auto zs = field::RadianceField<T>::latent_tensor(z.shape, f.arch().latent_shape);
  const auto za = field::RadianceField<T>::latent_tensor(z.appearance, f.arch().latent_appearance);
  const auto p = render_patches(f, intr, {PatchView{pose, pattern}}, zs, za, cfg, strata);
  const std::size_t ks = static_cast<std::size_t>(pattern.size);
  return ad::reshape(p, ad::Shape{ks, ks, 3});
}

struct RenderedImage {
  Image color;
  std::vector<double> alpha;  // W * H, row-major
};

// Every pixel of the image, rendered in chunks with recording off.
template <typename T>
RenderedImage render_image(const field::RadianceField<T>& f, const geo::Intrinsics& intr, const geo::CameraPose& pose,
                           const field::LatentCodes& z, const RenderConfig& cfg,
                           const std::optional<StrataKey>& strata = std::nullopt) {
  cfg.validate();
  ad::NoGradGuard no_grad;
  const auto zs = field::RadianceField<T>::latent_tensor(z.shape, f.arch().latent_shape);
  const auto za = field::RadianceField<T>::latent_tensor(z.appearance, f.arch().latent_appearance);
  const std::vector<geo::PixelCoord> all = geo::full_image_coords(intr.width, intr.height);
  RenderedImage out{Image(intr.width, intr.height), std::vector<double>(all.size())};
  const std::size_t chunk = static_cast<std::size_t>(cfg.chunk_rays);
  for (std::size_t start = 0; start < all.size(); start += chunk) {
    const std::size_t end = std::min(all.size(), start + chunk);
    RayGroup grp{pose, std::vector<geo::PixelCoord>(all.begin() + static_cast<std::ptrdiff_t>(start),
                                                    all.begin() + static_cast<std::ptrdiff_t>(end))};
    const auto res = render_rays(f, intr, {grp}, zs, za, cfg, strata, start);
    for (std::size_t i = start; i < end; ++i) {
      for (std::size_t c = 0; c < 3; ++c) out.color.data[i * 3 + c] = static_cast<double>(res.rgb.value()[(i - start) * 3 + c]);
      out.alpha[i] = static_cast<double>(res.alpha.value()[i - start]);
    }
  }
  return out;
}

}  // namespace graf::render
