// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernels_impl.hpp"

namespace crowngen::simd::detail {

void squared_distances_scalar(double qx, double qy, double qz,
                              const double* xs, const double* ys,
                              const double* zs, std::size_t n, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = qx - xs[i];
    const double dy = qy - ys[i];
    const double dz = qz - zs[i];
    out[i] = dx * dx + dy * dy + dz * dz;
  }
}

NearestResult nearest_scalar(double qx, double qy, double qz,
                             const double* xs, const double* ys,
                             const double* zs, std::size_t n) {
  NearestResult best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = qx - xs[i];
    const double dy = qy - ys[i];
    const double dz = qz - zs[i];
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < best.dist2) best = {d, i};
  }
  return best;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

}  // namespace crowngen::simd::detail
