// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

// Built with -mavx2 only; callers reach these through the dispatch table
// after a CPUID check. Multiplies and adds stay separate (no FMA) to match
// the scalar kernels bit for bit.

#include <immintrin.h>

#include "kernels_impl.hpp"

namespace crowngen::simd::detail {

namespace {
inline __m256d dist2_4(__m256d qx, __m256d qy, __m256d qz, const double* xs,
                       const double* ys, const double* zs) {
  const __m256d dx = _mm256_sub_pd(qx, _mm256_loadu_pd(xs));
  const __m256d dy = _mm256_sub_pd(qy, _mm256_loadu_pd(ys));
  const __m256d dz = _mm256_sub_pd(qz, _mm256_loadu_pd(zs));
  __m256d d = _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy));
  return _mm256_add_pd(d, _mm256_mul_pd(dz, dz));
}
}  // namespace

void squared_distances_avx2(double qx, double qy, double qz, const double* xs,
                            const double* ys, const double* zs, std::size_t n,
                            double* out) {
  const __m256d vx = _mm256_set1_pd(qx);
  const __m256d vy = _mm256_set1_pd(qy);
  const __m256d vz = _mm256_set1_pd(qz);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, dist2_4(vx, vy, vz, xs + i, ys + i, zs + i));
  }
  squared_distances_scalar(qx, qy, qz, xs + i, ys + i, zs + i, n - i, out + i);
}

NearestResult nearest_avx2(double qx, double qy, double qz, const double* xs,
                           const double* ys, const double* zs, std::size_t n) {
  const __m256d vx = _mm256_set1_pd(qx);
  const __m256d vy = _mm256_set1_pd(qy);
  const __m256d vz = _mm256_set1_pd(qz);
  __m256d best = _mm256_set1_pd(std::numeric_limits<double>::infinity());
  __m256d best_idx = _mm256_setzero_pd();
  __m256d idx = _mm256_setr_pd(0.0, 1.0, 2.0, 3.0);
  const __m256d four = _mm256_set1_pd(4.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = dist2_4(vx, vy, vz, xs + i, ys + i, zs + i);
    const __m256d lt = _mm256_cmp_pd(d, best, _CMP_LT_OQ);
    best = _mm256_blendv_pd(best, d, lt);
    best_idx = _mm256_blendv_pd(best_idx, idx, lt);
    idx = _mm256_add_pd(idx, four);
  }
  alignas(32) double lane_d[4];
  alignas(32) double lane_i[4];
  _mm256_store_pd(lane_d, best);
  _mm256_store_pd(lane_i, best_idx);
  NearestResult out{std::numeric_limits<double>::infinity(), 0};
  for (int l = 0; l < 4; ++l) {
    const auto li = static_cast<std::size_t>(lane_i[l]);
    if (lane_d[l] < out.dist2 || (lane_d[l] == out.dist2 && li < out.index)) {
      out = {lane_d[l], li};
    }
  }
  if (i < n) {
    NearestResult tail = nearest_scalar(qx, qy, qz, xs + i, ys + i, zs + i, n - i);
    if (tail.dist2 < out.dist2) out = {tail.dist2, tail.index + i};
  }
  return out;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

}  // namespace crowngen::simd::detail
