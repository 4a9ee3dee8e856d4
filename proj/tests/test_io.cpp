// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <cstring>
#include <random>

#include "crowngen/error.hpp"
#include "crowngen/io.hpp"
#include "test_util.hpp"

using namespace crowngen;
namespace fs = std::filesystem;

namespace {
fs::path scratch_dir() {
  auto d = fs::temp_directory_path() / "crowngen_test_io";
  fs::create_directories(d);
  return d;
}
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}
}  // namespace

TEST_CASE("point clouds survive XYZ and PLY round trips exactly") {
  std::mt19937_64 rng(1);
  const auto d = scratch_dir();
  for (bool with_normals : {false, true}) {
    const auto c = testutil::random_cloud(rng, 257, -10, 10, with_normals);
    for (const char* name : {"c.xyz", "c.ply"}) {
      io::write_cloud(d / name, c);
      const auto back = io::read_cloud(d / name);
      CHECK(back.points == c.points);
      CHECK(back.has_normals() == with_normals);
      if (with_normals) CHECK(*back.normals == *c.normals);
    }
  }
}

TEST_CASE("meshes survive OBJ and PLY round trips") {
  Mesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1.25, 0, 0), Vec3(0, 1, 0.1), Vec3(1, 1, 1)};
  m.faces = {{0, 1, 2}, {1, 3, 2}};
  const auto d = scratch_dir();
  for (const char* name : {"m.obj", "m.ply"}) {
    io::write_mesh(d / name, m);
    const Mesh back = io::read_mesh(d / name);
    CHECK(back.vertices == m.vertices);
    CHECK(back.faces == m.faces);
  }
}

TEST_CASE("volume file layout is header plus row-major f32 payload") {
  GridSpec g;
  g.dims = {2, 3, 4};
  g.spacing = 0.5;
  g.origin = Vec3(1, -2, 3);
  VoxelVolume v(g, VolumeKind::logits);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = 0.25 * static_cast<double>(i) - 1.0;
  const auto p = scratch_dir() / "v.vol";
  io::write_volume(p, v);
  const std::string bytes = slurp(p);
  CHECK(bytes.size() == 3 * 4 + 4 + 3 * 4 + 24 * 4);
  std::uint32_t dims[3];
  std::memcpy(dims, bytes.data(), 12);
  CHECK(dims[0] == 2);
  CHECK(dims[2] == 4);
  float first_val, val_at_011;
  std::memcpy(&first_val, bytes.data() + 28, 4);
  std::memcpy(&val_at_011, bytes.data() + 28 + 4 * g.flat(0, 1, 1), 4);
  CHECK(first_val == -1.0f);
  CHECK(val_at_011 == static_cast<float>(v.at(0, 1, 1)));

  const auto back = io::read_volume(p, VolumeKind::logits);
  CHECK(back.spec == g);
  CHECK(back.data == v.data);
  io::write_volume(scratch_dir() / "v2.vol", back);
  CHECK(slurp(scratch_dir() / "v2.vol") == bytes);
}

TEST_CASE("IO errors") {
  CHECK_THROWS_AS(io::read_xyz("/nonexistent/file.xyz"), Error);
  const auto p = scratch_dir() / "bad.xyz";
  {
    std::ofstream out(p);
    out << "1 2\n";
  }
  CHECK_THROWS_AS(io::read_xyz(p), Error);
  CHECK_THROWS_AS(io::read_cloud(scratch_dir() / "x.abc"), Error);
}
