// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>

#include "crowngen/simd/kernels.hpp"

namespace crowngen::simd::detail {

void squared_distances_scalar(double qx, double qy, double qz,
                              const double* xs, const double* ys,
                              const double* zs, std::size_t n, double* out);
NearestResult nearest_scalar(double qx, double qy, double qz,
                             const double* xs, const double* ys,
                             const double* zs, std::size_t n);
void axpy_scalar(double a, const double* x, double* y, std::size_t n);

#if defined(CROWNGEN_HAVE_AVX2)
void squared_distances_avx2(double qx, double qy, double qz, const double* xs,
                            const double* ys, const double* zs, std::size_t n,
                            double* out);
NearestResult nearest_avx2(double qx, double qy, double qz, const double* xs,
                           const double* ys, const double* zs, std::size_t n);
void axpy_avx2(double a, const double* x, double* y, std::size_t n);
#endif

}  // namespace crowngen::simd::detail
