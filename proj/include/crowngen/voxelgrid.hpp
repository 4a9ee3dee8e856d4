// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "crowngen/geometry.hpp"

namespace crowngen {

/// What voxelize does with a point whose index falls outside the grid.
enum class BoundsPolicy { reject, clamp, drop };

/// floor((p - origin) / spacing), without bounds checking.
Index3 voxel_index(const GridSpec& spec, const Vec3& p);

/// Occupancy volume with a 1 in every voxel hit by at least one point.
/// Throws OutOfBounds under BoundsPolicy::reject.
VoxelVolume voxelize(const PointCloud& cloud, const GridSpec& spec,
                     BoundsPolicy policy = BoundsPolicy::reject);

/// Occupied voxel indices in lexicographic (i, j, k) order.
std::vector<Index3> occupied_indices(const VoxelVolume& volume);

/// Reverse voxelization: one point per occupied voxel at the voxel centre,
/// in the order of occupied_indices. Throws EmptyVolume.
PointCloud devoxelize(const VoxelVolume& volume);

/// Occupancy = 1 where logit > 0 (strict).
VoxelVolume threshold_logits(const VoxelVolume& logits);

}  // namespace crowngen
