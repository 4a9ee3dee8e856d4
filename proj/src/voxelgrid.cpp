// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/voxelgrid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "crowngen/error.hpp"

namespace crowngen {

Index3 voxel_index(const GridSpec& spec, const Vec3& p) {
  const Vec3 rel = (p - spec.origin) / spec.spacing;
  return {static_cast<int>(std::floor(rel.x())),
          static_cast<int>(std::floor(rel.y())),
          static_cast<int>(std::floor(rel.z()))};
}

VoxelVolume voxelize(const PointCloud& cloud, const GridSpec& spec,
                     BoundsPolicy policy) {
  spec.validate();
  VoxelVolume out(spec, VolumeKind::occupancy, 0.0);
  for (const Vec3& p : cloud.points) {
    if (!p.allFinite()) {
      throw Error(ErrorCode::InvalidArgument, "non-finite point");
    }
    Index3 idx = voxel_index(spec, p);
    if (!spec.contains(idx)) {
      switch (policy) {
        case BoundsPolicy::reject: {
          std::ostringstream msg;
          msg << "point (" << p.x() << ", " << p.y() << ", " << p.z()
              << ") maps to voxel (" << idx.i << ", " << idx.j << ", "
              << idx.k << ")";
          throw Error(ErrorCode::OutOfBounds, msg.str());
        }
        case BoundsPolicy::drop:
          continue;
        case BoundsPolicy::clamp:
          idx.i = std::clamp(idx.i, 0, spec.dims[0] - 1);
          idx.j = std::clamp(idx.j, 0, spec.dims[1] - 1);
          idx.k = std::clamp(idx.k, 0, spec.dims[2] - 1);
          break;
      }
    }
    out[idx] = 1.0;
  }
  return out;
}

std::vector<Index3> occupied_indices(const VoxelVolume& volume) {
  std::vector<Index3> out;
  for (std::size_t f = 0; f < volume.data.size(); ++f) {
    if (volume.data[f] != 0.0) out.push_back(volume.spec.unflat(f));
  }
  return out;
}

PointCloud devoxelize(const VoxelVolume& volume) {
  if (volume.kind != VolumeKind::occupancy) {
    throw Error(ErrorCode::InvalidArgument,
                "devoxelize expects an occupancy volume");
  }
  PointCloud out;
  for (const Index3& idx : occupied_indices(volume)) {
    out.points.push_back(volume.spec.center(idx));
  }
  if (out.points.empty()) {
    throw Error(ErrorCode::EmptyVolume, "no occupied voxel to devoxelize");
  }
  return out;
}

VoxelVolume threshold_logits(const VoxelVolume& logits) {
  if (logits.kind != VolumeKind::logits) {
    throw Error(ErrorCode::InvalidArgument,
                "threshold_logits expects a logits volume");
  }
  VoxelVolume out(logits.spec, VolumeKind::occupancy, 0.0);
  std::transform(logits.data.begin(), logits.data.end(), out.data.begin(),
                 [](double v) { return v > 0.0 ? 1.0 : 0.0; });
  return out;
}

}  // namespace crowngen
