// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "crowngen/simd/kernels.hpp"

namespace crowngen {

namespace {
// Max-heap order on (dist2, index): the worst neighbour sits at the front.
bool worse(const Neighbor& a, const Neighbor& b) {
  return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
}
}  // namespace

KdTree::KdTree(std::span<const Vec3> points, std::size_t leaf_size)
    : index_(points.size()), build_points_(points.begin(), points.end()) {
  std::iota(index_.begin(), index_.end(), std::size_t{0});
  if (!index_.empty()) {
    nodes_.reserve(2 * points.size() / std::max<std::size_t>(leaf_size, 1) + 2);
    build(0, index_.size(), std::max<std::size_t>(leaf_size, 1));
  }
  xs_.resize(index_.size());
  ys_.resize(index_.size());
  zs_.resize(index_.size());
  for (std::size_t s = 0; s < index_.size(); ++s) {
    const Vec3& p = build_points_[index_[s]];
    xs_[s] = p.x();
    ys_[s] = p.y();
    zs_[s] = p.z();
  }
  build_points_.clear();
  build_points_.shrink_to_fit();
}

int KdTree::build(std::size_t begin, std::size_t end, std::size_t leaf_size) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::size_t s = begin; s < end; ++s) {
    lo = lo.cwiseMin(build_points_[index_[s]]);
    hi = hi.cwiseMax(build_points_[index_[s]]);
  }
  nodes_[id].lo = lo;
  nodes_[id].hi = hi;
  nodes_[id].begin = begin;
  nodes_[id].end = end;

  const Vec3 ext = hi - lo;
  if (end - begin <= leaf_size || ext.maxCoeff() <= 0.0) {
    std::sort(index_.begin() + begin, index_.begin() + end);
    return id;
  }
  int axis = 0;
  ext.maxCoeff(&axis);
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(index_.begin() + begin, index_.begin() + mid,
                   index_.begin() + end, [&](std::size_t a, std::size_t b) {
                     const double ca = build_points_[a][axis];
                     const double cb = build_points_[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  const int left = build(begin, mid, leaf_size);
  const int right = build(mid, end, leaf_size);
  nodes_[id].axis = axis;
  nodes_[id].split = build_points_[index_[mid]][axis];
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double KdTree::box_dist2(const Node& n, const Vec3& q) {
  double d = 0.0;
  for (int a = 0; a < 3; ++a) {
    double gap = 0.0;
    if (q[a] < n.lo[a]) {
      gap = n.lo[a] - q[a];
    } else if (q[a] > n.hi[a]) {
      gap = q[a] - n.hi[a];
    }
    d = d + gap * gap;
  }
  return d;
}

Neighbor KdTree::nearest(const Vec3& q) const {
  Neighbor best{std::numeric_limits<std::size_t>::max(),
                std::numeric_limits<double>::infinity()};
  if (!nodes_.empty()) nearest_rec(0, q, best);
  return best;
}

void KdTree::nearest_rec(int id, const Vec3& q, Neighbor& best) const {
  const Node& n = nodes_[id];
  if (box_dist2(n, q) > best.dist2) return;
  if (n.left < 0) {
    const auto& k = simd::active_kernels();
    const auto r = k.nearest(q.x(), q.y(), q.z(), xs_.data() + n.begin,
                             ys_.data() + n.begin, zs_.data() + n.begin,
                             n.end - n.begin);
    const std::size_t idx = index_[n.begin + r.index];
    if (r.dist2 < best.dist2 || (r.dist2 == best.dist2 && idx < best.index)) {
      best = {idx, r.dist2};
    }
    return;
  }
  const bool go_left = q[n.axis] < n.split;
  nearest_rec(go_left ? n.left : n.right, q, best);
  nearest_rec(go_left ? n.right : n.left, q, best);
}

std::vector<Neighbor> KdTree::knn(const Vec3& q, std::size_t k) const {
  k = std::min(k, size());
  std::vector<Neighbor> heap;
  if (k == 0) return heap;
  heap.reserve(k + 1);
  std::vector<double> scratch;
  knn_rec(0, q, k, heap, scratch);
  std::sort_heap(heap.begin(), heap.end(), worse);
  return heap;
}

void KdTree::knn_rec(int id, const Vec3& q, std::size_t k,
                     std::vector<Neighbor>& heap,
                     std::vector<double>& scratch) const {
  const Node& n = nodes_[id];
  if (heap.size() == k && box_dist2(n, q) > heap.front().dist2) return;
  if (n.left < 0) {
    const std::size_t count = n.end - n.begin;
    scratch.resize(count);
    simd::active_kernels().squared_distances(
        q.x(), q.y(), q.z(), xs_.data() + n.begin, ys_.data() + n.begin,
        zs_.data() + n.begin, count, scratch.data());
    for (std::size_t s = 0; s < count; ++s) {
      const Neighbor cand{index_[n.begin + s], scratch[s]};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), worse);
      } else if (worse(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), worse);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), worse);
      }
    }
    return;
  }
  const bool go_left = q[n.axis] < n.split;
  knn_rec(go_left ? n.left : n.right, q, k, heap, scratch);
  knn_rec(go_left ? n.right : n.left, q, k, heap, scratch);
}

std::vector<Neighbor> KdTree::nearest_all(std::span<const Vec3> queries) const {
  std::vector<Neighbor> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) out[i] = nearest(queries[i]);
  return out;
}

}  // namespace crowngen
