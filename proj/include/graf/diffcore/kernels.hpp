#pragma once

// Raw tensor kernels. Every reduction runs in a fixed order that does not
// depend on how many rows are processed together, so a batched evaluation is
// bit-identical to evaluating its rows one at a time.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <type_traits>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "graf/diffcore/tensor.hpp"

namespace graf::ad::kernels {

// C[m,n] = A[m,k] * B[k,n]; each C[i,j] accumulates k in ascending order via fma.
template <typename T>
void matmul_generic(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      const T v = ai[p];
      for (std::size_t j = 0; j < n; ++j) ci[j] = std::fma(v, brow[j], ci[j]);
    }
  }
}

#if defined(__AVX512F__)
namespace simd {

template <typename T>
struct Lanes;

template <>
struct Lanes<float> {
  using V = __m512;
  using M = __mmask16;
  static constexpr std::size_t kWidth = 16;
  static V zero() { return _mm512_setzero_ps(); }
  static V load(const float* p, M m, bool masked) { return masked ? _mm512_maskz_loadu_ps(m, p) : _mm512_loadu_ps(p); }
  static void store(float* p, V v, M m, bool masked) { masked ? _mm512_mask_storeu_ps(p, m, v) : _mm512_storeu_ps(p, v); }
  static V splat(float x) { return _mm512_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm512_fmadd_ps(a, b, c); }
};

template <>
struct Lanes<double> {
  using V = __m512d;
  using M = __mmask8;
  static constexpr std::size_t kWidth = 8;
  static V zero() { return _mm512_setzero_pd(); }
  static V load(const double* p, M m, bool masked) { return masked ? _mm512_maskz_loadu_pd(m, p) : _mm512_loadu_pd(p); }
  static void store(double* p, V v, M m, bool masked) { masked ? _mm512_mask_storeu_pd(p, m, v) : _mm512_storeu_pd(p, v); }
  static V splat(double x) { return _mm512_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm512_fmadd_pd(a, b, c); }
};

// MR rows x NV vectors of C over k in [p0, p1); the last vector is masked when `tail` is set.
template <typename T, int MR, int NV>
inline void tile(const T* a, std::size_t ars, std::size_t aps, const T* b, std::size_t n, T* c, std::size_t p0, std::size_t p1, std::size_t j,
                 typename Lanes<T>::M mask, bool tail) {
  using L = Lanes<T>;
  typename L::V acc[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) {
      const bool masked = tail && v == NV - 1;
      acc[r][v] = p0 == 0 ? L::zero() : L::load(c + r * n + j + L::kWidth * v, mask, masked);
    }
  for (std::size_t p = p0; p < p1; ++p) {
    const T* bp = b + p * n + j;
    typename L::V bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = L::load(bp + L::kWidth * v, mask, tail && v == NV - 1);
    for (int r = 0; r < MR; ++r) {
      const typename L::V av = L::splat(a[r * ars + p * aps]);
      for (int v = 0; v < NV; ++v) acc[r][v] = L::fma(av, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) L::store(c + r * n + j + L::kWidth * v, acc[r][v], mask, tail && v == NV - 1);
}

template <typename T, int MR>
inline void row_panel(const T* a, std::size_t ars, std::size_t aps, const T* b, T* c, std::size_t p0, std::size_t p1, std::size_t n) {
  using L = Lanes<T>;
  constexpr std::size_t w = L::kWidth;
  using M = typename L::M;
  std::size_t j = 0;
  for (; j + 2 * w <= n; j += 2 * w) tile<T, MR, 2>(a, ars, aps, b, n, c, p0, p1, j, M(0), false);
  const std::size_t rem = n - j;
  if (rem > w) {
    tile<T, MR, 2>(a, ars, aps, b, n, c, p0, p1, j, static_cast<M>((1u << (rem - w)) - 1), rem < 2 * w);
  } else if (rem > 0) {
    tile<T, MR, 1>(a, ars, aps, b, n, c, p0, p1, j, static_cast<M>(rem == w ? ~0u : (1u << rem) - 1), rem < w);
  }
}

// k is split into blocks; each element's fma chain still runs in ascending k.
// A element (i, p) is read at a[i * ars + p * aps].
template <typename T>
void matmul_strided(const T* a, std::size_t ars, std::size_t aps, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kBlockK = 256, kRows = 6;
  std::size_t p0 = 0;
  do {
    const std::size_t p1 = std::min(k, p0 + kBlockK);
    std::size_t i = 0;
    for (; i + kRows <= m; i += kRows) row_panel<T, kRows>(a + i * ars, ars, aps, b, c + i * n, p0, p1, n);
    for (; i < m; ++i) row_panel<T, 1>(a + i * ars, ars, aps, b, c + i * n, p0, p1, n);
    p0 = p1;
  } while (p0 < k);
}

}  // namespace simd
#endif

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
    simd::matmul_strided(a, k, 1, b, c, m, k, n);
    return;
  }
#endif
  matmul_generic(a, b, c, m, k, n);
}

// C[m,n] = A^T * B with A stored as [k,m]; same accumulation order as matmul on the transposed A.
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float> || std::is_same_v<T, double>) {
    simd::matmul_strided(a, 1, m, b, c, m, k, n);
    return;
  }
#endif
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      const T v = a[p * m + i];
      for (std::size_t j = 0; j < n; ++j) ci[j] = std::fma(v, brow[j], ci[j]);
    }
  }
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out(Shape{c, r});
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < r; i0 += kBlock) {
    for (std::size_t j0 = 0; j0 < c; j0 += kBlock) {
      const std::size_t i1 = std::min(r, i0 + kBlock), j1 = std::min(c, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * r + i] = x[i * c + j];
    }
  }
  return out;
}

// Number of repeats when `small` (leading ones dropped) equals the trailing dims of `big`; 0 otherwise.
inline std::size_t tiled_repeats(const Shape& small, const Shape& big) {
  std::size_t lead = 0;
  while (lead < small.size() && small[lead] == 1) ++lead;
  const std::size_t core = small.size() - lead;
  if (core > big.size()) return 0;
  const std::size_t off = big.size() - core;
  for (std::size_t i = 0; i < core; ++i)
    if (small[lead + i] != big[off + i]) return 0;
  std::size_t reps = 1;
  for (std::size_t i = 0; i < off; ++i) reps *= big[i];
  return reps;
}

// Expand `x` to `shape` under trailing alignment.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (!broadcastable_to(x.shape(), shape)) {
    throw ShapeError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  const std::size_t rank = shape.size();
  const std::size_t off = rank - x.rank();
  std::vector<std::size_t> src_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = x.rank(); i-- > 0;) {
    src_stride[i + off] = x.shape()[i] == 1 ? 0 : s;
    s *= x.shape()[i];
  }
  if (const std::size_t reps = tiled_repeats(x.shape(), shape); reps > 0 && x.size() > 0) {
    Tensor<T> out(shape);
    for (std::size_t r = 0; r < reps; ++r) std::copy(x.data(), x.data() + x.size(), out.data() + r * x.size());
    return out;
  }
  Tensor<T> out(shape);
  const std::size_t total = out.size();
  if (total == 0) return out;
  // Innermost contiguous run shared by source and destination.
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    out[flat] = x[src];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < shape[d]) break;
      src -= src_stride[d] * shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

// Sum `x` down to `shape`; the adjoint of broadcast_to.
template <typename T>
Tensor<T> sum_to(const Tensor<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (!broadcastable_to(shape, x.shape())) {
    throw ShapeError("cannot sum " + to_string(x.shape()) + " down to " + to_string(shape));
  }
  const std::size_t rank = x.rank();
  const std::size_t off = rank - shape.size();
  std::vector<std::size_t> dst_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    dst_stride[i + off] = shape[i] == 1 ? 0 : s;
    s *= shape[i];
  }
  Tensor<T> out(shape, T(0));
  if (const std::size_t reps = tiled_repeats(shape, x.shape()); reps > 0 && out.size() > 0) {
    const std::size_t block = out.size();
    T* dst = out.data();
    for (std::size_t r = 0; r < reps; ++r) {
      const T* src = x.data() + r * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
    return out;
  }
  const std::size_t total = x.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t dst = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    out[dst] += x[flat];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      dst += dst_stride[d];
      if (idx[d] < x.shape()[d]) break;
      dst -= dst_stride[d] * x.shape()[d];
      idx[d] = 0;
    }
  }
  return out;
}

// Reduce one axis by summation (ascending index order).
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor<T> out(out_shape, T(0));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    T* dst = out.data() + o * sp.inner;
    const T* src = x.data() + o * sp.extent * sp.inner;
    for (std::size_t e = 0; e < sp.extent; ++e) {
      const T* row = src + e * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> cumsum_axis(const Tensor<T>& x, std::size_t axis, bool exclusive, bool reverse) {
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor<T> out(x.shape());
  std::vector<T> acc(sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::fill(acc.begin(), acc.end(), T(0));
    const std::size_t base = o * sp.extent * sp.inner;
    for (std::size_t step = 0; step < sp.extent; ++step) {
      const std::size_t e = reverse ? sp.extent - 1 - step : step;
      const T* src = x.data() + base + e * sp.inner;
      T* dst = out.data() + base + e * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) {
        if (exclusive) {
          dst[i] = acc[i];
          acc[i] += src[i];
        } else {
          acc[i] += src[i];
          dst[i] = acc[i];
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> slice_axis(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit sp = split_at(x.shape(), axis);
  if (begin > end || end > sp.extent) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Tensor<T> out(shape);
  const std::size_t run = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const T* src = x.data() + (o * sp.extent + begin) * sp.inner;
    std::copy(src, src + run, out.data() + o * run);
  }
  return out;
}

// Embed `x` into a zero tensor whose `axis` has `extent`, starting at `begin`.
template <typename T>
Tensor<T> pad_axis(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t extent) {
  const AxisSplit sp = split_at(x.shape(), axis);
  if (begin + sp.extent > extent) {
    throw ShapeError("pad target extent " + std::to_string(extent) + " too small for " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = extent;
  Tensor<T> out(shape, T(0));
  const std::size_t run = sp.extent * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy(x.data() + o * run, x.data() + (o + 1) * run, out.data() + (o * extent + begin) * sp.inner);
  }
  return out;
}

struct ConvGeometry {
  std::size_t batch = 0, height = 0, width = 0, channels = 0;
  std::size_t kernel = 1, stride = 1, pad = 0;
  std::size_t out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t rows() const { return batch * out_h() * out_w(); }
  std::size_t cols() const { return kernel * kernel * channels; }
};

// NHWC image to (B*Ho*Wo) x (k*k*C) patch matrix; zero padding.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
  Tensor<T> out(Shape{g.rows(), g.cols()}, T(0));
  const std::size_t ho = g.out_h(), wo = g.out_w();
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox, ++row) {
        T* dst = out.data() + row * g.cols();
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            const T* src = x.data() + ((b * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)) * g.channels;
            std::copy(src, src + g.channels, dst + (ky * g.kernel + kx) * g.channels);
          }
        }
      }
  return out;
}

// Adjoint of im2col: scatter-add patch rows back into an NHWC image.
template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const ConvGeometry& g) {
  Tensor<T> out(Shape{g.batch, g.height, g.width, g.channels}, T(0));
  const std::size_t ho = g.out_h(), wo = g.out_w();
  std::size_t row = 0;
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox, ++row) {
        const T* src = cols.data() + row * g.cols();
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            T* dst = out.data() + ((b * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)) * g.channels;
            const T* s = src + (ky * g.kernel + kx) * g.channels;
            for (std::size_t c = 0; c < g.channels; ++c) dst[c] += s[c];
          }
        }
      }
  return out;
}

}  // namespace graf::ad::kernels
