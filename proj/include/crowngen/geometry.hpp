// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace crowngen {

using Vec3 = Eigen::Vector3d;

/// Points in physical millimetres, optionally with unit normals.
struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<Vec3>> normals;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  bool has_normals() const noexcept { return normals.has_value(); }

  /// Throws InvalidArgument if normals are present but not unit length
  /// (within 1e-6) or not one per point.
  void validate() const;
};

struct Index3 {
  int i = 0;
  int j = 0;
  int k = 0;
  friend bool operator==(const Index3&, const Index3&) = default;
};

/// Dense grid geometry. Axis i runs along x, j along y, k along z. Voxel
/// (i,j,k) covers [origin + idx*s, origin + (idx+1)*s) and its sample
/// location is the centre origin + (idx + 0.5)*s.
struct GridSpec {
  std::array<int, 3> dims{2, 2, 2};
  double spacing = 1.0;
  Vec3 origin = Vec3::Zero();

  std::size_t voxel_count() const noexcept {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  // Row-major, i-major: k varies fastest.
  std::size_t flat(int i, int j, int k) const noexcept {
    return (static_cast<std::size_t>(i) * dims[1] + j) * dims[2] + k;
  }
  Index3 unflat(std::size_t f) const noexcept {
    const auto k = static_cast<int>(f % dims[2]);
    f /= dims[2];
    return {static_cast<int>(f / dims[1]), static_cast<int>(f % dims[1]), k};
  }
  bool contains(const Index3& idx) const noexcept {
    return idx.i >= 0 && idx.j >= 0 && idx.k >= 0 && idx.i < dims[0] &&
           idx.j < dims[1] && idx.k < dims[2];
  }
  Vec3 center(const Index3& idx) const noexcept {
    return origin + spacing * Vec3(idx.i + 0.5, idx.j + 0.5, idx.k + 0.5);
  }
  Vec3 extent() const noexcept {
    return spacing * Vec3(dims[0], dims[1], dims[2]);
  }

  void validate() const;
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

enum class VolumeKind { occupancy, logits, indicator };

struct VoxelVolume {
  GridSpec spec;
  VolumeKind kind = VolumeKind::occupancy;
  std::vector<double> data;

  VoxelVolume() = default;
  VoxelVolume(GridSpec s, VolumeKind k, double fill = 0.0)
      : spec(s), kind(k), data(s.voxel_count(), fill) {}

  double& at(int i, int j, int k) { return data[spec.flat(i, j, k)]; }
  double at(int i, int j, int k) const { return data[spec.flat(i, j, k)]; }
  double& operator[](const Index3& x) { return at(x.i, x.j, x.k); }
  double operator[](const Index3& x) const { return at(x.i, x.j, x.k); }

  std::size_t count_nonzero() const noexcept;
  void validate() const;
};

using Face = std::array<int, 3>;

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  void validate() const;
};

}  // namespace crowngen
