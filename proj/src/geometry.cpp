// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/geometry.hpp"

#include <cmath>
#include <string>

#include "crowngen/error.hpp"

namespace crowngen {

void PointCloud::validate() const {
  if (!normals) return;
  if (normals->size() != points.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "normal count " + std::to_string(normals->size()) +
                    " != point count " + std::to_string(points.size()));
  }
  for (std::size_t i = 0; i < normals->size(); ++i) {
    const double n = (*normals)[i].norm();
    if (!(std::abs(n - 1.0) <= 1e-6)) {
      throw Error(ErrorCode::InvalidArgument,
                  "normal " + std::to_string(i) + " is not unit length");
    }
  }
}

void GridSpec::validate() const {
  for (int d : dims) {
    if (d < 2) throw Error(ErrorCode::InvalidArgument, "grid dims must be >= 2");
  }
  if (!(spacing > 0.0) || !std::isfinite(spacing)) {
    throw Error(ErrorCode::InvalidArgument, "grid spacing must be positive");
  }
}

std::size_t VoxelVolume::count_nonzero() const noexcept {
  std::size_t n = 0;
  for (double v : data) n += (v != 0.0);
  return n;
}

void VoxelVolume::validate() const {
  spec.validate();
  if (data.size() != spec.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "volume payload size != D*H*W");
  }
  if (kind == VolumeKind::occupancy) {
    for (double v : data) {
      if (v != 0.0 && v != 1.0) {
        throw Error(ErrorCode::InvalidArgument,
                    "occupancy volume holds a value outside {0,1}");
      }
    }
  }
}

void Mesh::validate() const {
  const auto nv = static_cast<int>(vertices.size());
  for (const Face& f : faces) {
    for (int v : f) {
      if (v < 0 || v >= nv) {
        throw Error(ErrorCode::InvalidArgument, "face index out of range");
      }
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      throw Error(ErrorCode::InvalidArgument, "degenerate face");
    }
  }
}

}  // namespace crowngen
