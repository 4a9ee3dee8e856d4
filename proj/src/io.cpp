// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "crowngen/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace crowngen::io {

namespace {

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = {}) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = {}) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::Io, "truncated file " + path.string());
  return v;
}

std::string lower_ext(const fs::path& path) {
  std::string e = path.extension().string();
  for (char& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

// --- PLY -------------------------------------------------------------------

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

PlyType parse_ply_type(const std::string& t, const fs::path& path) {
  if (t == "char" || t == "int8") return PlyType::i8;
  if (t == "uchar" || t == "uint8") return PlyType::u8;
  if (t == "short" || t == "int16") return PlyType::i16;
  if (t == "ushort" || t == "uint16") return PlyType::u16;
  if (t == "int" || t == "int32") return PlyType::i32;
  if (t == "uint" || t == "uint32") return PlyType::u32;
  if (t == "float" || t == "float32") return PlyType::f32;
  if (t == "double" || t == "float64") return PlyType::f64;
  throw Error(ErrorCode::Io, "unknown PLY type '" + t + "' in " + path.string());
}

double read_ply_value(std::istream& in, PlyType t, const fs::path& path) {
  switch (t) {
    case PlyType::i8: return get<std::int8_t>(in, path);
    case PlyType::u8: return get<std::uint8_t>(in, path);
    case PlyType::i16: return get<std::int16_t>(in, path);
    case PlyType::u16: return get<std::uint16_t>(in, path);
    case PlyType::i32: return get<std::int32_t>(in, path);
    case PlyType::u32: return get<std::uint32_t>(in, path);
    case PlyType::f32: return get<float>(in, path);
    case PlyType::f64: return get<double>(in, path);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

struct PlyData {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  bool has_normals = false;
  std::vector<Face> faces;
};

PlyData read_ply(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw Error(ErrorCode::Io, path.string() + " is not a PLY file");
  std::vector<PlyElement> elements;
  bool binary_le = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = (fmt == "binary_little_endian");
    } else if (word == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw Error(ErrorCode::Io, "property before element in " + path.string());
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = parse_ply_type(ct, path);
        p.type = parse_ply_type(it, path);
      } else {
        p.type = parse_ply_type(t, path);
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!binary_le) {
    throw Error(ErrorCode::Io, path.string() + ": only binary_little_endian PLY is supported");
  }

  PlyData data;
  for (const PlyElement& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
    for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
      const auto& n = e.props[p].name;
      if (n == "x") ix = p;
      if (n == "y") iy = p;
      if (n == "z") iz = p;
      if (n == "nx") inx = p;
      if (n == "ny") iny = p;
      if (n == "nz") inz = p;
    }
    if (is_vertex) {
      if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorCode::Io, "PLY vertex lacks x/y/z");
      data.has_normals = inx >= 0 && iny >= 0 && inz >= 0;
    }
    std::vector<double> vals(e.props.size());
    for (std::size_t r = 0; r < e.count; ++r) {
      for (std::size_t p = 0; p < e.props.size(); ++p) {
        const PlyProperty& prop = e.props[p];
        if (!prop.is_list) {
          vals[p] = read_ply_value(in, prop.type, path);
          continue;
        }
        const auto n = static_cast<std::size_t>(read_ply_value(in, prop.count_type, path));
        std::vector<int> idx(n);
        for (auto& v : idx) v = static_cast<int>(read_ply_value(in, prop.type, path));
        if (is_face && (prop.name == "vertex_indices" || prop.name == "vertex_index")) {
          for (std::size_t t = 1; t + 1 < n; ++t) data.faces.push_back({idx[0], idx[t], idx[t + 1]});
        }
      }
      if (is_vertex) {
        data.points.emplace_back(vals[ix], vals[iy], vals[iz]);
        if (data.has_normals) data.normals.emplace_back(vals[inx], vals[iny], vals[inz]);
      }
    }
  }
  return data;
}

void write_ply(const fs::path& path, const std::vector<Vec3>& points,
               const std::vector<Vec3>* normals, const std::vector<Face>* faces) {
  auto out = open_out(path, std::ios::binary);
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << points.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  if (normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
  if (faces) {
    out << "element face " << faces->size() << "\n";
    out << "property list uchar int vertex_indices\n";
  }
  out << "end_header\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int a = 0; a < 3; ++a) put<double>(out, points[i][a]);
    if (normals) {
      for (int a = 0; a < 3; ++a) put<double>(out, (*normals)[i][a]);
    }
  }
  if (faces) {
    for (const Face& f : *faces) {
      put<std::uint8_t>(out, 3);
      for (int v : f) put<std::int32_t>(out, v);
    }
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace

// --- XYZ -------------------------------------------------------------------

PointCloud read_xyz(const fs::path& path) {
  auto in = open_in(path);
  PointCloud cloud;
  std::vector<Vec3> normals;
  std::string line;
  int columns = -1;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (v.empty()) continue;
    if (v.size() != 3 && v.size() != 6) {
      throw Error(ErrorCode::Io, path.string() + ":" + std::to_string(lineno) +
                                     ": expected 3 or 6 columns");
    }
    if (columns < 0) columns = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != columns) {
      throw Error(ErrorCode::Io, path.string() + ":" + std::to_string(lineno) +
                                     ": inconsistent column count");
    }
    cloud.points.emplace_back(v[0], v[1], v[2]);
    if (columns == 6) normals.emplace_back(v[3], v[4], v[5]);
  }
  if (columns == 6) cloud.normals = std::move(normals);
  return cloud;
}

void write_xyz(const fs::path& path, const PointCloud& cloud) {
  auto out = open_out(path);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (cloud.normals) {
      const Vec3& n = (*cloud.normals)[i];
      out << ' ' << n.x() << ' ' << n.y() << ' ' << n.z();
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

PointCloud read_ply_cloud(const fs::path& path) {
  PlyData d = read_ply(path);
  PointCloud cloud;
  cloud.points = std::move(d.points);
  if (d.has_normals) cloud.normals = std::move(d.normals);
  return cloud;
}

void write_ply_cloud(const fs::path& path, const PointCloud& cloud) {
  write_ply(path, cloud.points, cloud.normals ? &*cloud.normals : nullptr, nullptr);
}

Mesh read_ply_mesh(const fs::path& path) {
  PlyData d = read_ply(path);
  Mesh mesh{std::move(d.points), std::move(d.faces)};
  mesh.validate();
  return mesh;
}

void write_ply_mesh(const fs::path& path, const Mesh& mesh) {
  write_ply(path, mesh.vertices, nullptr, &mesh.faces);
}

// --- OBJ -------------------------------------------------------------------

Mesh read_obj(const fs::path& path) {
  auto in = open_in(path);
  Mesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw Error(ErrorCode::Io, "bad vertex record in " + path.string());
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        // "v", "v/vt", "v//vn", "v/vt/vn"
        const int v = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(v > 0 ? v - 1 : static_cast<int>(mesh.vertices.size()) + v);
      }
      for (std::size_t t = 1; t + 1 < idx.size(); ++t) {
        mesh.faces.push_back({idx[0], idx[t], idx[t + 1]});
      }
    }
  }
  mesh.validate();
  return mesh;
}

void write_obj(const fs::path& path, const Mesh& mesh) {
  auto out = open_out(path);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const Face& f : mesh.faces) {
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

// --- volume ----------------------------------------------------------------

VoxelVolume read_volume(const fs::path& path, VolumeKind kind) {
  auto in = open_in(path, std::ios::binary);
  GridSpec spec;
  for (int a = 0; a < 3; ++a) spec.dims[a] = static_cast<int>(get<std::uint32_t>(in, path));
  spec.spacing = get<float>(in, path);
  for (int a = 0; a < 3; ++a) spec.origin[a] = get<float>(in, path);
  spec.validate();
  VoxelVolume vol(spec, kind);
  std::vector<float> buf(spec.voxel_count());
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw Error(ErrorCode::Io, "truncated volume payload in " + path.string());
  std::copy(buf.begin(), buf.end(), vol.data.begin());
  vol.validate();
  return vol;
}

void write_volume(const fs::path& path, const VoxelVolume& volume) {
  volume.validate();
  auto out = open_out(path, std::ios::binary);
  for (int a = 0; a < 3; ++a) put<std::uint32_t>(out, static_cast<std::uint32_t>(volume.spec.dims[a]));
  put<float>(out, static_cast<float>(volume.spec.spacing));
  for (int a = 0; a < 3; ++a) put<float>(out, static_cast<float>(volume.spec.origin[a]));
  std::vector<float> buf(volume.data.begin(), volume.data.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

PointCloud read_cloud(const fs::path& path) {
  const auto e = lower_ext(path);
  if (e == ".xyz" || e == ".txt") return read_xyz(path);
  if (e == ".ply") return read_ply_cloud(path);
  throw Error(ErrorCode::Io, "unsupported point cloud extension: " + path.string());
}

void write_cloud(const fs::path& path, const PointCloud& cloud) {
  const auto e = lower_ext(path);
  if (e == ".xyz" || e == ".txt") return write_xyz(path, cloud);
  if (e == ".ply") return write_ply_cloud(path, cloud);
  throw Error(ErrorCode::Io, "unsupported point cloud extension: " + path.string());
}

Mesh read_mesh(const fs::path& path) {
  const auto e = lower_ext(path);
  if (e == ".obj") return read_obj(path);
  if (e == ".ply") return read_ply_mesh(path);
  throw Error(ErrorCode::Io, "unsupported mesh extension: " + path.string());
}

void write_mesh(const fs::path& path, const Mesh& mesh) {
  const auto e = lower_ext(path);
  if (e == ".obj") return write_obj(path, mesh);
  if (e == ".ply") return write_ply_mesh(path, mesh);
  throw Error(ErrorCode::Io, "unsupported mesh extension: " + path.string());
}

}  // namespace crowngen::io
