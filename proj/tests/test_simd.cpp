// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>
#include <vector>

#include "crowngen/kdtree.hpp"
#include "crowngen/simd/kernels.hpp"
#include "test_util.hpp"

using namespace crowngen;

namespace {
std::vector<const simd::KernelTable*> available_tables() {
  std::vector<const simd::KernelTable*> out{&simd::scalar_kernels()};
  if (simd::cpu_has_avx2() && simd::avx2_kernels()) out.push_back(simd::avx2_kernels());
  return out;
}
}  // namespace

TEST_CASE("SIMD kernels are bit-identical to the scalar reference") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const auto& ref = simd::scalar_kernels();
  for (const auto* table : available_tables()) {
    CAPTURE(simd::isa_name(table->isa));
    for (std::size_t n : {1u, 3u, 4u, 5u, 8u, 17u, 64u, 1001u}) {
      std::vector<double> xs(n), ys(n), zs(n);
      for (std::size_t i = 0; i < n; ++i) {
        xs[i] = u(rng);
        ys[i] = u(rng);
        zs[i] = u(rng);
      }
      const double qx = u(rng), qy = u(rng), qz = u(rng);

      std::vector<double> a(n), b(n);
      ref.squared_distances(qx, qy, qz, xs.data(), ys.data(), zs.data(), n, a.data());
      table->squared_distances(qx, qy, qz, xs.data(), ys.data(), zs.data(), n, b.data());
      CHECK(a == b);

      const auto ra = ref.nearest(qx, qy, qz, xs.data(), ys.data(), zs.data(), n);
      const auto rb = table->nearest(qx, qy, qz, xs.data(), ys.data(), zs.data(), n);
      CHECK(ra.dist2 == rb.dist2);
      CHECK(ra.index == rb.index);

      std::vector<double> y1(xs), y2(xs);
      ref.axpy(0.37, ys.data(), y1.data(), n);
      table->axpy(0.37, ys.data(), y2.data(), n);
      CHECK(y1 == y2);
    }
  }
}

TEST_CASE("nearest kernel resolves ties to the first position") {
  for (const auto* table : available_tables()) {
    // Equal distances in several lanes and in the scalar tail.
    std::vector<double> xs{2, 1, -1, 1, 3, 1, -1, 1, 1};
    std::vector<double> ys(xs.size(), 0.0), zs(xs.size(), 0.0);
    const auto r = table->nearest(0, 0, 0, xs.data(), ys.data(), zs.data(), xs.size());
    CHECK(r.dist2 == 1.0);
    CHECK(r.index == 1);
  }
}

TEST_CASE("kd-tree queries equal brute force, including ties") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto pts = testutil::random_points(rng, 300 + 37 * trial);
    // Duplicate some points to force exact ties.
    for (int d = 0; d < 20; ++d) pts.push_back(pts[(d * 13) % pts.size()]);
    // Integer lattice gives many equidistant neighbours.
    for (int x = 0; x < 3; ++x)
      for (int y = 0; y < 3; ++y) pts.emplace_back(x, y, 0.0);
    const KdTree tree(pts, 8);
    auto queries = testutil::random_points(rng, 200);
    queries.emplace_back(1.0, 1.0, 0.5);
    queries.emplace_back(0.5, 0.5, 0.0);
    for (const Vec3& q : queries) {
      const auto bf = testutil::brute_nearest(q, pts);
      const auto nn = tree.nearest(q);
      CHECK(nn.dist2 == bf.dist2);
      CHECK(nn.index == bf.index);

      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec3 d = q - pts[i];
        all.emplace_back(d.x() * d.x() + d.y() * d.y() + d.z() * d.z(), i);
      }
      std::sort(all.begin(), all.end());
      const auto knn = tree.knn(q, 9);
      REQUIRE(knn.size() == 9);
      for (std::size_t r = 0; r < knn.size(); ++r) {
        CHECK(knn[r].index == all[r].second);
        CHECK(knn[r].dist2 == all[r].first);
      }
    }
  }
}

TEST_CASE("kd-tree handles degenerate inputs") {
  std::vector<Vec3> same(50, Vec3(1, 2, 3));
  const KdTree tree(same);
  CHECK(tree.nearest(Vec3::Zero()).index == 0);
  CHECK(tree.knn(Vec3::Zero(), 100).size() == 50);
  const KdTree empty{std::vector<Vec3>{}};
  CHECK(empty.knn(Vec3::Zero(), 3).empty());
}
