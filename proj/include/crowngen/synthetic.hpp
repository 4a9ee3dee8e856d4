// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural crown benchmark: superellipsoid crowns with cusp bumps keyed
// to the tooth type, a tapered preparation stump, and two neighbours, all
// cropped to a cube centred on the stump.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crowngen/geometry.hpp"
#include "crowngen/refiner.hpp"

namespace crowngen {

/// Anisotropic raised-cosine height bump on the occlusal surface.
struct Bump {
  double cx = 0.0, cy = 0.0;
  double rx = 1.0, ry = 1.0;
  double amp = 0.0;
};

/// Superellipsoid |x/a|^(2/e2) + |y/b|^(2/e2))^(e2/e1) + |z/c|^(2/e1) = 1,
/// kept above z_cut, with bumps added to the upper half.
struct CrownShape {
  ToothType type = ToothType::molar;
  double a = 5.0, b = 5.0, c = 3.5;
  double e1 = 0.5, e2 = 0.8;
  double z_cut = -2.0;
  std::vector<Bump> bumps;
};

CrownShape crown_shape(const FdiLabel& label, std::uint64_t seed);

/// Height of the crown's upper surface above (x, y); NaN outside the
/// footprint.
double occlusal_height(const CrownShape& shape, double x, double y);

/// Triangulated crown surface, open along the z_cut ring, wound so that
/// face normals point outward. Edges are at most about `spacing` long.
Mesh crown_mesh(const CrownShape& shape, double spacing);

struct SyntheticCase {
  PointCloud ios_cloud;  // stump and neighbours, cropped to the grid
  Mesh gt_crown_mesh;
  PointCloud gt_margin;
  FdiLabel label;
  std::uint64_t seed = 0;
};

inline constexpr double kDefaultSampleSpacing = 0.1;

/// Deterministic in (seed, label, grid, spacing). Throws OutOfBounds when
/// the crown does not fit inside `grid`.
SyntheticCase generate_synthetic_case(std::uint64_t seed, const FdiLabel& label, const GridSpec& grid,
                                      double spacing = kDefaultSampleSpacing);

/// Ground-truth point cloud: crown vertices with outward vertex normals.
PointCloud gt_points(const SyntheticCase& c);

/// Per-vertex margin membership of the crown mesh.
std::vector<std::uint8_t> gt_margin_mask(const SyntheticCase& c);

// --- datasets ----------------------------------------------------------------

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view s);

struct CaseRecord {
  std::string id;
  std::uint64_t seed = 0;
  FdiLabel label;
  Split split = Split::train;
};

/// n cases with uniformly drawn labels and a 7:1:1 split stratified by
/// tooth type.
std::vector<CaseRecord> make_manifest(int n, std::uint64_t seed);

/// Reassigns splits 7:1:1 within each tooth type.
void stratified_split(std::vector<CaseRecord>& records, std::uint64_t seed);

std::vector<CaseRecord> filter_split(const std::vector<CaseRecord>& records, Split split);

/// Writes manifest.json plus ios.ply, crown.ply and margin.ply per case.
void write_dataset(const std::filesystem::path& dir, const std::vector<CaseRecord>& records,
                   const GridSpec& grid, double spacing = kDefaultSampleSpacing);

std::vector<CaseRecord> read_manifest(const std::filesystem::path& dir);

SyntheticCase load_case(const std::filesystem::path& dir, const CaseRecord& record);

}  // namespace crowngen
