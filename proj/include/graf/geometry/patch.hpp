#pragma once

// Continuous patch patterns: a K x K grid of image coordinates with center u
// and scale s, the sampler that keeps every grid point inside the image, the
// bilinear real-patch extractor, and the receptive-field annealing schedule.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "graf/core/image.hpp"
#include "graf/core/rng.hpp"
#include "graf/geometry/camera.hpp"

namespace graf::geo {

struct PatchPattern {
  double u = 0;  // center, x
  double v = 0;  // center, y
  double scale = 1;
  int size = 2;  // K
};

inline void check_patch_size(int k, int width, int height) {
  if (k < 2 || k % 2 != 0) throw std::invalid_argument("patch size K must be even and at least 2, got " + std::to_string(k));
  if (k > std::min(width, height)) {
    throw std::invalid_argument("patch size K=" + std::to_string(k) + " exceeds image size");
  }
}

// Largest admissible scale S = min(W, H) / K.
inline double max_patch_scale(int width, int height, int k) {
  return static_cast<double>(std::min(width, height)) / static_cast<double>(k);
}

// {(s*x + u, s*y + v) | x, y in {-K/2, ..., K/2 - 1}}, row-major (y outer).
inline std::vector<PixelCoord> patch_coords(const PatchPattern& p) {
  std::vector<PixelCoord> out;
  out.reserve(static_cast<std::size_t>(p.size) * static_cast<std::size_t>(p.size));
  const int half = p.size / 2;
  for (int y = -half; y < half; ++y)
    for (int x = -half; x < half; ++x) out.push_back({p.scale * x + p.u, p.scale * y + p.v});
  return out;
}

struct CenterRange {
  double lo_x, hi_x, lo_y, hi_y;
};

// Centers u for which every grid point of scale s lies in [0, W-1] x [0, H-1].
inline CenterRange valid_centers(int width, int height, int k, double scale) {
  const double half = k / 2;
  return {scale * half, (width - 1) - scale * (half - 1), scale * half, (height - 1) - scale * (half - 1)};
}

// s ~ U[s_lo, S], then u uniform over the valid center rectangle for that s.
inline PatchPattern sample_pattern(Rng& rng, int width, int height, int k, double s_lo) {
  check_patch_size(k, width, height);
  const double s_max = max_patch_scale(width, height, k);
  s_lo = std::clamp(s_lo, 1.0, s_max);
  PatchPattern p;
  p.size = k;
  p.scale = rng.uniform(s_lo, s_max);
  const CenterRange r = valid_centers(width, height, k, p.scale);
  p.u = std::clamp(rng.uniform(r.lo_x, r.hi_x), r.lo_x, r.hi_x);
  p.v = std::clamp(rng.uniform(r.lo_y, r.hi_y), r.lo_y, r.hi_y);
  return p;
}

// s = 1 at the image center; covers every pixel when K = W = H.
inline PatchPattern centered_pattern(int width, int height, int k) {
  return PatchPattern{width / 2.0, height / 2.0, 1.0, k};
}

struct AnnealSchedule {
  double max_scale = 1;    // S
  long long iterations = 2000;  // T_anneal

  // s_lo(iter) = max(1, S - (S - 1) * iter / T).
  double lower_bound(long long iter) const {
    if (iter < 0) throw std::invalid_argument("iteration must be non-negative");
    if (iterations <= 0) return 1.0;
    const double frac = static_cast<double>(iter) / static_cast<double>(iterations);
    return std::max(1.0, max_scale - (max_scale - 1.0) * frac);
  }
};

class OutOfDomain : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Bilinear lookup at continuous coordinates; no prefiltering. Values are
// written as coords.size() x 3, row-major.
inline std::vector<double> bilinear_extract(const Image& img, const std::vector<PixelCoord>& coords) {
  std::vector<double> out(coords.size() * 3);
  const double max_x = img.width - 1, max_y = img.height - 1;
  constexpr double kSlack = 1e-9;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    double x = coords[i].x, y = coords[i].y;
    if (!(x >= -kSlack && x <= max_x + kSlack && y >= -kSlack && y <= max_y + kSlack)) {
      throw OutOfDomain("bilinear_extract: coordinate (" + std::to_string(x) + ", " + std::to_string(y) +
                        ") outside image domain");
    }
    x = std::clamp(x, 0.0, max_x);
    y = std::clamp(y, 0.0, max_y);
    const int x0 = std::min(static_cast<int>(std::floor(x)), img.width - 1);
    const int y0 = std::min(static_cast<int>(std::floor(y)), img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0, fy = y - y0;
    for (int c = 0; c < 3; ++c) {
      const double top = (1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
      const double bottom = (1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
      out[i * 3 + static_cast<std::size_t>(c)] = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

}  // namespace graf::geo
