// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crowngen/geometry.hpp"

namespace crowngen {

struct Neighbor {
  std::size_t index;
  double dist2;
};

/// Static 3-d tree over a point set. Leaves hold points in SoA blocks
/// sorted by original index and are scanned with the SIMD kernels.
/// All queries break distance ties toward the lowest original index, so
/// results match a brute-force scan exactly.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 16);

  std::size_t size() const noexcept { return index_.size(); }
  bool empty() const noexcept { return index_.empty(); }

  Neighbor nearest(const Vec3& q) const;
  /// k nearest sorted by (dist2, index). k is clamped to size().
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const;

  /// nearest() for every query point.
  std::vector<Neighbor> nearest_all(std::span<const Vec3> queries) const;

 private:
  struct Node {
    // Leaf when left < 0: [begin, end) into the SoA arrays.
    int left = -1;
    int right = -1;
    int axis = 0;
    double split = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    Vec3 lo, hi;  // bounding box
  };

  int build(std::size_t begin, std::size_t end, std::size_t leaf_size);
  void nearest_rec(int node, const Vec3& q, Neighbor& best) const;
  void knn_rec(int node, const Vec3& q, std::size_t k,
               std::vector<Neighbor>& heap, std::vector<double>& scratch) const;
  static double box_dist2(const Node& n, const Vec3& q);

  std::vector<Node> nodes_;
  std::vector<std::size_t> index_;  // original index per SoA slot
  std::vector<double> xs_, ys_, zs_;
  std::vector<Vec3> build_points_;
};

}  // namespace crowngen
