// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "crowngen/geometry.hpp"

namespace crowngen::io {

namespace fs = std::filesystem;

// XYZ text: one point per line, 3 columns (x y z) or 6 (x y z nx ny nz).
PointCloud read_xyz(const fs::path& path);
void write_xyz(const fs::path& path, const PointCloud& cloud);

// Binary little-endian PLY. Writers emit double-precision vertex properties
// so that dumps reload exactly; readers accept float or double.
PointCloud read_ply_cloud(const fs::path& path);
void write_ply_cloud(const fs::path& path, const PointCloud& cloud);
Mesh read_ply_mesh(const fs::path& path);
void write_ply_mesh(const fs::path& path, const Mesh& mesh);

// ASCII OBJ, v and f records only (1-based indices on disk).
Mesh read_obj(const fs::path& path);
void write_obj(const fs::path& path, const Mesh& mesh);

// Raw volume: u32 dims[3], f32 spacing, f32 origin[3], then D*H*W f32
// values in row-major (i-major) order. All little-endian.
VoxelVolume read_volume(const fs::path& path, VolumeKind kind);
void write_volume(const fs::path& path, const VoxelVolume& volume);

/// Dispatches on extension: .xyz, .ply.
PointCloud read_cloud(const fs::path& path);
void write_cloud(const fs::path& path, const PointCloud& cloud);
/// Dispatches on extension: .obj, .ply.
Mesh read_mesh(const fs::path& path);
void write_mesh(const fs::path& path, const Mesh& mesh);

}  // namespace crowngen::io
