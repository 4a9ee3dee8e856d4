// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>
#include <vector>

#include "crowngen/error.hpp"
#include "crowngen/meshops.hpp"

namespace crowngen {

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3},
                                     {4, 5}, {5, 6}, {7, 6}, {4, 7},
                                     {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// Corner cycles per cube face and the face's outward normal.
constexpr int kFaceCorners[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                    {3, 7, 6, 2}, {0, 4, 7, 3}, {1, 2, 6, 5}};
constexpr int kFaceNormal[6][3] = {{0, 0, -1}, {0, 0, 1}, {0, -1, 0},
                                   {0, 1, 0},  {-1, 0, 0}, {1, 0, 0}};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    if ((kEdgeCorners[e][0] == a && kEdgeCorners[e][1] == b) ||
        (kEdgeCorners[e][0] == b && kEdgeCorners[e][1] == a)) {
      return e;
    }
  }
  return -1;
}

bool edges_share_face(int ea, int eb) {
  for (const auto& face : kFaceCorners) {
    int hits = 0;
    for (int m = 0; m < 4; ++m) {
      const int e = edge_between(face[m], face[(m + 1) % 4]);
      hits += (e == ea) + (e == eb);
    }
    if (hits == 2) return true;
  }
  return false;
}

Vec3 corner_pos(int c) { return Vec3(kCorner[c][0], kCorner[c][1], kCorner[c][2]); }

Vec3 edge_mid(int e) {
  return 0.5 * (corner_pos(kEdgeCorners[e][0]) + corner_pos(kEdgeCorners[e][1]));
}

// Polygons of one configuration: on each face, connect the crossed edges
// so that every inside corner is cut off on its own (ambiguous faces never
// join diagonal inside corners), orient each segment with the inside on a
// fixed side, then chain the segments into loops and fan them.
std::vector<std::array<int, 3>> triangulate_case(int mask) {
  auto inside = [mask](int c) { return ((mask >> c) & 1) != 0; };
  std::map<int, int> next;  // directed segment: from edge -> to edge
  for (int f = 0; f < 6; ++f) {
    const int* c = kFaceCorners[f];
    const Vec3 nf(kFaceNormal[f][0], kFaceNormal[f][1], kFaceNormal[f][2]);
    int crossed[4];
    int n_crossed = 0;
    for (int m = 0; m < 4; ++m) {
      if (inside(c[m]) != inside(c[(m + 1) % 4])) {
        crossed[n_crossed++] = m;
      }
    }
    std::vector<std::array<int, 2>> segs;
    std::vector<Vec3> refs;
    if (n_crossed == 2) {
      Vec3 ref = Vec3::Zero();
      int n_in = 0;
      for (int m = 0; m < 4; ++m) {
        if (inside(c[m])) {
          ref += corner_pos(c[m]);
          ++n_in;
        }
      }
      segs.push_back({edge_between(c[crossed[0]], c[(crossed[0] + 1) % 4]),
                      edge_between(c[crossed[1]], c[(crossed[1] + 1) % 4])});
      refs.push_back(ref / n_in);
    } else if (n_crossed == 4) {
      for (int m = 0; m < 4; ++m) {
        if (!inside(c[m])) continue;
        const int prev = (m + 3) % 4;
        segs.push_back({edge_between(c[prev], c[m]),
                        edge_between(c[m], c[(m + 1) % 4])});
        refs.push_back(corner_pos(c[m]));
      }
    }
    for (std::size_t s = 0; s < segs.size(); ++s) {
      auto [ea, eb] = segs[s];
      const Vec3 a = edge_mid(ea);
      const Vec3 b = edge_mid(eb);
      if ((b - a).cross(refs[s] - a).dot(nf) < 0.0) std::swap(ea, eb);
      next[ea] = eb;
    }
  }

  std::vector<std::array<int, 3>> tris;
  std::map<int, bool> used;
  for (const auto& [first, _] : next) {
    if (used[first]) continue;
    std::vector<int> loop;
    int e = first;
    while (!used[e]) {
      used[e] = true;
      loop.push_back(e);
      e = next.at(e);
    }
    // Fan from a vertex whose chords stay off the cube faces; a chord lying
    // in a face could be duplicated by the neighbouring cell.
    const std::size_t n = loop.size();
    std::size_t start = 0;
    for (std::size_t s = 0; s < n; ++s) {
      bool ok = true;
      for (std::size_t t = 2; t + 1 < n && ok; ++t) {
        ok = !edges_share_face(loop[s], loop[(s + t) % n]);
      }
      if (ok) {
        start = s;
        break;
      }
    }
    for (std::size_t t = 1; t + 1 < n; ++t) {
      tris.push_back({loop[start], loop[(start + t) % n], loop[(start + t + 1) % n]});
    }
  }
  return tris;
}

McTriangleTable build_table() {
  McTriangleTable table;
  std::vector<std::vector<std::array<int, 3>>> cases(256);
  for (int mask = 0; mask < 256; ++mask) cases[mask] = triangulate_case(mask);

  // Pick the winding so that normals leave the inside corners: in the
  // single-corner case the triangle must face away from corner 0.
  const auto& t = cases[1].front();
  const Vec3 normal =
      (edge_mid(t[1]) - edge_mid(t[0])).cross(edge_mid(t[2]) - edge_mid(t[0]));
  const bool flip = normal.dot(Vec3(1, 1, 1)) < 0.0;

  for (int mask = 0; mask < 256; ++mask) {
    auto& row = table[mask];
    row.fill(-1);
    int w = 0;
    for (auto tri : cases[mask]) {
      if (flip) std::swap(tri[1], tri[2]);
      for (int e : tri) row[w++] = static_cast<std::int8_t>(e);
    }
  }
  return table;
}

}  // namespace

const McTriangleTable& mc_triangle_table() {
  static const McTriangleTable table = build_table();
  return table;
}

Mesh marching_cubes(const VoxelVolume& volume, double iso) {
  const GridSpec& spec = volume.spec;
  spec.validate();
  if (volume.data.size() != spec.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "volume payload size != D*H*W");
  }
  const auto& table = mc_triangle_table();
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];

  // Vertex id per (lower node, axis) grid edge.
  std::vector<int> edge_vertex(3 * spec.voxel_count(), -1);
  Mesh mesh;

  auto vertex_on = [&](int i, int j, int k, int e) {
    const int c0 = kEdgeCorners[e][0];
    const int c1 = kEdgeCorners[e][1];
    const Index3 a{i + kCorner[c0][0], j + kCorner[c0][1], k + kCorner[c0][2]};
    const Index3 b{i + kCorner[c1][0], j + kCorner[c1][1], k + kCorner[c1][2]};
    const int axis = (b.i != a.i) ? 0 : (b.j != a.j) ? 1 : 2;
    int& slot = edge_vertex[3 * spec.flat(a.i, a.j, a.k) + axis];
    if (slot < 0) {
      const double fa = volume[a];
      const double fb = volume[b];
      const double t = (iso - fa) / (fb - fa);
      Vec3 p = spec.center(a);
      p[axis] += t * spec.spacing;
      slot = static_cast<int>(mesh.vertices.size());
      mesh.vertices.push_back(p);
    }
    return slot;
  };

  for (int i = 0; i + 1 < nx; ++i) {
    for (int j = 0; j + 1 < ny; ++j) {
      for (int k = 0; k + 1 < nz; ++k) {
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          const double v = volume.at(i + kCorner[c][0], j + kCorner[c][1],
                                     k + kCorner[c][2]);
          if (v < iso) mask |= 1 << c;
        }
        if (mask == 0 || mask == 255) continue;
        const auto& row = table[mask];
        for (int t = 0; t < 16 && row[t] >= 0; t += 3) {
          mesh.faces.push_back({vertex_on(i, j, k, row[t]),
                                vertex_on(i, j, k, row[t + 1]),
                                vertex_on(i, j, k, row[t + 2])});
        }
      }
    }
  }
  if (mesh.faces.empty()) {
    throw Error(ErrorCode::NoSurface, "field never crosses the iso level");
  }
  return mesh;
}

}  // namespace crowngen
