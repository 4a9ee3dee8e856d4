// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "crowngen/geometry.hpp"

namespace crowngen {

/// Differentiable Poisson surface reconstruction on a periodic grid.
///
/// Oriented points are splatted trilinearly (samples at voxel centres,
/// periodic wrap) into a vector field v. The indicator solves
/// lap(chi) = div(v) spectrally:
///
///   chi_hat(u) = g(u) * (i u . v_hat(u)) / (-|u|^2),  chi_hat(0) = 0,
///
/// with u_d = 2*pi*k_d / N_d (radians per voxel, Nyquist derivative terms
/// dropped) and g(u) = exp(-sigma^2 |u|^2 / 2), a Gaussian of std `sigma`
/// voxels. Optionally chi is then shifted so its mean over the input
/// points is zero, which puts the surface at iso-level 0. Outward normals
/// make chi negative inside and positive outside.
struct DpsrConfig {
  GridSpec grid;
  double smoothing_sigma = 2.0;
  bool zero_mean_at_points = true;

  void validate() const;
};

struct DpsrGradients {
  std::vector<Vec3> d_points;
  std::vector<Vec3> d_normals;
};

/// Indicator grid for an oriented cloud. Normals are used as given (the
/// operator is linear in them). Throws NormalsMissing, PointOutsideGrid.
VoxelVolume dpsr_forward(const PointCloud& cloud, const DpsrConfig& cfg);

/// Exact adjoint of dpsr_forward: gradients of a scalar loss with respect
/// to point positions and normals, given dL/dchi on the grid.
DpsrGradients dpsr_backward(const PointCloud& cloud, const DpsrConfig& cfg,
                            const VoxelVolume& upstream);

/// Trilinear interpolation between voxel centres. Points must lie in
/// [centre(0), centre(N-1)] on every axis (PointOutsideGrid otherwise).
std::vector<double> sample_trilinear(const VoxelVolume& volume,
                                     std::span<const Vec3> points);

}  // namespace crowngen
