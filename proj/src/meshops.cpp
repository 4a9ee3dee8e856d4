// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/meshops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <Eigen/Dense>

#include "crowngen/error.hpp"
#include "crowngen/kdtree.hpp"

namespace crowngen {

namespace {

std::map<std::pair<int, int>, int> edge_face_counts(const Mesh& mesh) {
  std::map<std::pair<int, int>, int> counts;
  for (const Face& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      int a = f[e], b = f[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      ++counts[{a, b}];
    }
  }
  return counts;
}

struct LocalFrame {
  Vec3 mean;
  Eigen::Matrix3d axes;  // columns sorted by increasing variance
  Vec3 variances;
};

LocalFrame pca(const std::vector<Vec3>& pts) {
  LocalFrame f;
  f.mean = Vec3::Zero();
  for (const Vec3& p : pts) f.mean += p;
  f.mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const Vec3& p : pts) {
    const Vec3 d = p - f.mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  f.axes = es.eigenvectors();
  f.variances = es.eigenvalues().cwiseMax(0.0);
  return f;
}

std::vector<Vec3> neighbourhood(const KdTree& tree, const PointCloud& cloud,
                                const Vec3& q, int k) {
  std::vector<Vec3> pts;
  for (const Neighbor& n : tree.knn(q, static_cast<std::size_t>(k) + 1)) {
    pts.push_back(cloud.points[n.index]);
  }
  return pts;
}

void require_points(const PointCloud& cloud, int k) {
  if (k < 5) throw Error(ErrorCode::InvalidArgument, "neighbourhood size k must be >= 5");
  if (cloud.size() < static_cast<std::size_t>(k) + 1) {
    throw Error(ErrorCode::TooFewPoints,
                "need at least k+1 = " + std::to_string(k + 1) + " points, got " +
                    std::to_string(cloud.size()));
  }
}

}  // namespace

std::vector<std::pair<int, int>> boundary_edges(const Mesh& mesh) {
  std::vector<std::pair<int, int>> out;
  for (const auto& [edge, count] : edge_face_counts(mesh)) {
    if (count == 1) out.push_back(edge);
  }
  return out;
}

std::vector<int> margin_vertex_indices(const Mesh& mesh) {
  std::set<int> verts;
  for (const auto& [a, b] : boundary_edges(mesh)) {
    verts.insert(a);
    verts.insert(b);
  }
  return {verts.begin(), verts.end()};
}

PointCloud extract_margin_line(const Mesh& mesh) {
  PointCloud out;
  for (int v : margin_vertex_indices(mesh)) out.points.push_back(mesh.vertices[v]);
  return out;
}

std::vector<std::vector<int>> boundary_loops(const Mesh& mesh) {
  std::map<int, std::vector<int>> adj;
  for (const auto& [a, b] : boundary_edges(mesh)) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::set<int> seen;
  std::vector<std::vector<int>> loops;
  for (const auto& [start, _] : adj) {
    if (seen.count(start)) continue;
    std::vector<int> loop;
    int prev = -1, cur = start;
    while (cur >= 0 && !seen.count(cur)) {
      seen.insert(cur);
      loop.push_back(cur);
      int nxt = -1;
      for (int n : adj[cur]) {
        if (n != prev && !seen.count(n)) {
          nxt = n;
          break;
        }
      }
      prev = cur;
      cur = nxt;
    }
    loops.push_back(std::move(loop));
  }
  return loops;
}

std::vector<Vec3> vertex_normals(const Mesh& mesh) {
  std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
  for (const Face& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3 n = (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a);
    for (int v : f) acc[v] += n;
  }
  for (Vec3& n : acc) {
    const double len = n.norm();
    n = len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
  }
  return acc;
}

long euler_characteristic(const Mesh& mesh) {
  const auto edges = edge_face_counts(mesh);
  return static_cast<long>(mesh.vertices.size()) - static_cast<long>(edges.size()) +
         static_cast<long>(mesh.faces.size());
}

double signed_volume(const Mesh& mesh) {
  double v = 0.0;
  for (const Face& f : mesh.faces) {
    v += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]]));
  }
  return v / 6.0;
}

CurvatureField estimate_curvature(const PointCloud& cloud, int k, double kappa_max) {
  require_points(cloud, k);
  const KdTree tree(cloud.points);
  CurvatureField field;
  field.k_neighbors = k;
  field.kappa_max = kappa_max;
  field.kappa.resize(cloud.size());

  Eigen::MatrixXd design(k + 1, 6);
  Eigen::VectorXd height(k + 1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const auto pts = neighbourhood(tree, cloud, p, k);
    const LocalFrame frame = pca(pts);
    const Vec3 n = frame.axes.col(0);
    const Vec3 t1 = frame.axes.col(2);
    const Vec3 t2 = frame.axes.col(1);
    if (frame.variances[1] <= 1e-12 * std::max(frame.variances[2], 1e-300)) {
      field.kappa[i] = 0.0;
      continue;
    }
    const auto rows = static_cast<int>(pts.size());
    design.resize(rows, 6);
    height.resize(rows);
    for (int r = 0; r < rows; ++r) {
      const Vec3 d = pts[r] - p;
      const double x = d.dot(t1), y = d.dot(t2);
      design.row(r) << x * x, x * y, y * y, x, y, 1.0;
      height[r] = d.dot(n);
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < 6) {
      field.kappa[i] = 0.0;
      continue;
    }
    const Eigen::VectorXd c = qr.solve(height);
    const double fxx = 2.0 * c[0], fxy = c[1], fyy = 2.0 * c[2];
    const double fx = c[3], fy = c[4];
    const double g = 1.0 + fx * fx + fy * fy;
    const double mean_curv =
        ((1.0 + fy * fy) * fxx - 2.0 * fx * fy * fxy + (1.0 + fx * fx) * fyy) /
        (2.0 * std::pow(g, 1.5));
    const double kappa = std::abs(mean_curv);
    field.kappa[i] = std::isfinite(kappa) ? std::min(kappa, kappa_max) : 0.0;
  }
  return field;
}

PointCloud estimate_normals(const PointCloud& cloud, int k,
                            std::vector<double>* confidence) {
  require_points(cloud, k);
  const KdTree tree(cloud.points);
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : cloud.points) centroid += p;
  centroid /= static_cast<double>(cloud.size());

  PointCloud out;
  out.points = cloud.points;
  std::vector<Vec3> normals(cloud.size());
  if (confidence) confidence->assign(cloud.size(), 0.0);

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    const LocalFrame frame = pca(neighbourhood(tree, cloud, p, k));
    const Vec3& var = frame.variances;
    Vec3 n;
    double conf = 0.0;
    if (var[1] <= 1e-12 * var[2] || var[2] <= 0.0) {
      // Colinear or coincident: any direction orthogonal to the main axis.
      const Vec3 axis = var[2] > 0.0 ? Vec3(frame.axes.col(2)) : Vec3::UnitX();
      Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
      n = axis.cross(helper).normalized();
    } else {
      n = frame.axes.col(0);
      conf = 1.0 - var[0] / var[1];
    }
    if ((p - centroid).dot(n) < 0.0) n = -n;
    normals[i] = n;
    if (confidence) (*confidence)[i] = conf;
  }
  out.normals = std::move(normals);
  return out;
}

}  // namespace crowngen
