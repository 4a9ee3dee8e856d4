// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

namespace crowngen::simd {

// Scalar reference kernels and AVX2 variants. Every variant evaluates the
// same arithmetic in the same order, so results are bit-identical; the
// equivalence tests enforce this.

enum class Isa { scalar, avx2 };

struct NearestResult {
  double dist2;
  std::size_t index;  // position within the block; first minimum wins
};

/// Squared distance from (qx,qy,qz) to each of n SoA points.
using SquaredDistancesFn = void (*)(double qx, double qy, double qz,
                                    const double* xs, const double* ys,
                                    const double* zs, std::size_t n,
                                    double* out);
/// Closest of n SoA points (n >= 1), ties resolved to the lowest position.
using NearestFn = NearestResult (*)(double qx, double qy, double qz,
                                    const double* xs, const double* ys,
                                    const double* zs, std::size_t n);
/// y[i] += a * x[i]
using AxpyFn = void (*)(double a, const double* x, double* y, std::size_t n);

struct KernelTable {
  Isa isa;
  SquaredDistancesFn squared_distances;
  NearestFn nearest;
  AxpyFn axpy;
};

const KernelTable& scalar_kernels();
/// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_kernels();

/// Best table for this CPU. CROWNGEN_SIMD=scalar forces the reference path.
const KernelTable& active_kernels();

bool cpu_has_avx2();
std::string_view isa_name(Isa isa);

}  // namespace crowngen::simd
