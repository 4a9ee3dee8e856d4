// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "crowngen/geometry.hpp"

namespace crowngen {

// --- marching cubes --------------------------------------------------------

/// Iso-surface of a scalar grid. Samples sit at voxel centres; vertices are
/// interpolated linearly along cell edges, shared between neighbouring
/// cells, and placed in physical coordinates. Triangles are wound so their
/// normals point toward increasing field values (out of the sub-iso
/// region). Throws NoSurface when the field never crosses iso.
Mesh marching_cubes(const VoxelVolume& volume, double iso = 0.0);

/// Triangle table for the 256 corner configurations, corner c set when its
/// value is below iso. Corners follow the usual numbering (0..3 on the k=0
/// face counter-clockwise from the origin, 4..7 above them); entries are
/// edge ids, -1 terminated.
using McTriangleTable = std::array<std::array<std::int8_t, 16>, 256>;
const McTriangleTable& mc_triangle_table();

// --- topology --------------------------------------------------------------

/// Undirected edges (a < b) with exactly one incident face.
std::vector<std::pair<int, int>> boundary_edges(const Mesh& mesh);

/// Margin line: vertices incident to boundary edges, deduplicated and
/// listed in increasing vertex index.
PointCloud extract_margin_line(const Mesh& mesh);

/// Vertex indices on the margin line, increasing.
std::vector<int> margin_vertex_indices(const Mesh& mesh);

/// Connected loops of the boundary edge graph (each loop as a vertex cycle).
std::vector<std::vector<int>> boundary_loops(const Mesh& mesh);

/// Area-weighted unit vertex normals (zero-area neighbourhoods get +z).
std::vector<Vec3> vertex_normals(const Mesh& mesh);

/// V - E + F over the unique undirected edges.
long euler_characteristic(const Mesh& mesh);

/// Signed enclosed volume (positive for outward-facing closed surfaces).
double signed_volume(const Mesh& mesh);

// --- point-set differential geometry ---------------------------------------

struct CurvatureField {
  std::vector<double> kappa;  // |mean curvature| in 1/mm, clamped
  int k_neighbors = 16;
  double kappa_max = 3.0;
};

inline constexpr int kDefaultCurvatureNeighbors = 16;
inline constexpr double kDefaultKappaMax = 3.0;

/// |mean curvature| per point from a quadric height-field fit over the k
/// nearest neighbours in the local PCA frame, clamped to kappa_max.
/// Requires k >= 5 and at least k + 1 points (TooFewPoints otherwise).
CurvatureField estimate_curvature(const PointCloud& cloud,
                                  int k = kDefaultCurvatureNeighbors,
                                  double kappa_max = kDefaultKappaMax);

/// Unit normals from the smallest-variance direction of each k-NN
/// neighbourhood, flipped to face away from the cloud centroid. Colinear
/// or coincident neighbourhoods get a finite fallback normal and
/// confidence 0 (written to `confidence` when non-null).
PointCloud estimate_normals(const PointCloud& cloud, int k = 16,
                            std::vector<double>* confidence = nullptr);

}  // namespace crowngen
