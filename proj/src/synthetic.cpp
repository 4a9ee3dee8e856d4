// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

#include "crowngen/error.hpp"
#include "crowngen/io.hpp"
#include "crowngen/meshops.hpp"

namespace crowngen {

namespace {

constexpr double kPi = std::numbers::pi;

// Signed power used by the superquadric parametrisation.
double spow(double x, double e) { return std::copysign(std::pow(std::abs(x), e), x); }

double raised_cosine(double r) { return r >= 1.0 ? 0.0 : 0.5 * (1.0 + std::cos(kPi * r)); }

double displacement(const CrownShape& s, double x, double y) {
  double d = 0.0;
  for (const Bump& b : s.bumps) {
    const double dx = (x - b.cx) / b.rx;
    const double dy = (y - b.cy) / b.ry;
    d += b.amp * raised_cosine(std::sqrt(dx * dx + dy * dy));
  }
  return d;
}

double v_min(const CrownShape& s) {
  return -std::asin(std::pow(-s.z_cut / s.c, 1.0 / s.e1));
}

// Surface point at longitude u and latitude v; the bumps lift the upper
// half by D * sin^2 v so they vanish at the equator.
Vec3 surface(const CrownShape& s, double u, double v) {
  const double cv = spow(std::cos(v), s.e1);
  const double x = s.a * cv * spow(std::cos(u), s.e2);
  const double y = s.b * cv * spow(std::sin(u), s.e2);
  double z = s.c * spow(std::sin(v), s.e1);
  if (v > 0.0) {
    const double sv = std::sin(v);
    z += displacement(s, x, y) * sv * sv;
  }
  return {x, y, z};
}

// Inverts a monotone cumulative-length table at n + 1 equally spaced
// lengths, returning parameters in [t0, t1].
std::vector<double> equal_arc(const std::vector<double>& cum, double t0, double t1, int n) {
  const int m = static_cast<int>(cum.size()) - 1;
  std::vector<double> out(n + 1);
  int seg = 0;
  for (int i = 0; i <= n; ++i) {
    const double target = cum[m] * i / n;
    while (seg < m - 1 && cum[seg + 1] < target) ++seg;
    const double span = cum[seg + 1] - cum[seg];
    const double f = span > 0.0 ? std::clamp((target - cum[seg]) / span, 0.0, 1.0) : 0.0;
    out[i] = t0 + (t1 - t0) * (seg + f) / m;
  }
  out[0] = t0;
  out[n] = t1;
  return out;
}

// Sample parameters along one closed ring, equal in arc length, together
// with the arc-length fraction of each sample.
struct Ring {
  std::vector<int> ids;
  std::vector<double> t;  // fraction of the ring's length, in [0, 1)
};

constexpr int kFine = 2048;

}  // namespace

CrownShape crown_shape(const FdiLabel& label, std::uint64_t seed) {
  label.validate();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  auto size = [&](double v) { return v * (1.0 + 0.08 * jitter(rng)); };

  CrownShape s;
  s.type = label.type();
  switch (s.type) {
    case ToothType::molar: s.a = 5.0; s.b = 5.0; s.c = 3.5; break;
    case ToothType::premolar: s.a = 3.5; s.b = 4.5; s.c = 3.8; break;
    case ToothType::canine: s.a = 3.8; s.b = 4.0; s.c = 4.5; break;
    case ToothType::incisor: s.a = 4.2; s.b = 3.0; s.c = 4.5; break;
  }
  s.a = size(s.a);
  s.b = size(s.b);
  s.c = size(s.c);
  s.e1 = 0.5 + 0.05 * jitter(rng);
  s.e2 = 0.775 + 0.075 * jitter(rng);
  s.z_cut = -0.6 * s.c;

  auto amp = [&](double v) { return v * (1.0 + 0.15 * jitter(rng)); };
  const double a = s.a, b = s.b;
  switch (s.type) {
    case ToothType::molar:
      for (const double sx : {-1.0, 1.0}) {
        for (const double sy : {-1.0, 1.0}) {
          s.bumps.push_back({sx * 0.45 * a, sy * 0.45 * b, 0.7 * a, 0.7 * b, amp(1.2)});
        }
      }
      s.bumps.push_back({0.0, 0.0, 0.4 * a, 0.4 * b, -amp(0.6)});
      break;
    case ToothType::premolar:
      for (const double sy : {-1.0, 1.0}) {
        s.bumps.push_back({0.0, sy * 0.4 * b, 0.55 * a, 0.45 * b, amp(1.1)});
      }
      break;
    case ToothType::canine:
      s.bumps.push_back({0.0, 0.1 * b, 0.6 * a, 0.6 * b, amp(1.8)});
      s.bumps.push_back({0.0, -0.6 * b, 0.4 * a, 0.3 * b, amp(0.5)});
      break;
    case ToothType::incisor:
      s.bumps.push_back({0.0, 0.0, 1.2 * a, 0.35 * b, amp(1.0)});
      break;
  }
  return s;
}

double occlusal_height(const CrownShape& s, double x, double y) {
  const double rho = std::pow(std::pow(std::abs(x) / s.a, 2.0 / s.e2) + std::pow(std::abs(y) / s.b, 2.0 / s.e2),
                              s.e2 / s.e1);
  if (rho > 1.0) return std::numeric_limits<double>::quiet_NaN();
  const double z_base = s.c * std::pow(1.0 - rho, s.e1 / 2.0);
  return z_base + displacement(s, x, y) * std::pow(z_base / s.c, 2.0 / s.e1);
}

Mesh crown_mesh(const CrownShape& s, double spacing) {
  if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "sample spacing must be positive");
  const double step = 0.8 * spacing;
  const double v0 = v_min(s);
  const double v1 = kPi / 2.0;

  // Latitudes: equal steps of the worst-case meridian length.
  constexpr int kProbe = 64;
  std::vector<double> cum_v(kFine + 1, 0.0);
  std::array<Vec3, kProbe> prev;
  for (int p = 0; p < kProbe; ++p) prev[p] = surface(s, 2.0 * kPi * p / kProbe, v0);
  for (int i = 1; i <= kFine; ++i) {
    const double v = v0 + (v1 - v0) * i / kFine;
    double worst = 0.0;
    for (int p = 0; p < kProbe; ++p) {
      const Vec3 q = surface(s, 2.0 * kPi * p / kProbe, v);
      worst = std::max(worst, (q - prev[p]).norm());
      prev[p] = q;
    }
    cum_v[i] = cum_v[i - 1] + worst;
  }
  const int nv = std::max(2, static_cast<int>(std::ceil(cum_v[kFine] / step)));
  const std::vector<double> lat = equal_arc(cum_v, v0, v1, nv);

  Mesh mesh;
  std::vector<Ring> rings;
  rings.reserve(nv);
  for (int r = 0; r < nv; ++r) {  // lat[nv] is the apex
    std::vector<double> cum_u(kFine + 1, 0.0);
    Vec3 last = surface(s, 0.0, lat[r]);
    for (int i = 1; i <= kFine; ++i) {
      const Vec3 q = surface(s, 2.0 * kPi * i / kFine, lat[r]);
      cum_u[i] = cum_u[i - 1] + (q - last).norm();
      last = q;
    }
    const int nu = std::max(8, static_cast<int>(std::ceil(cum_u[kFine] / step)));
    const std::vector<double> lon = equal_arc(cum_u, 0.0, 2.0 * kPi, nu);
    Ring ring;
    for (int i = 0; i < nu; ++i) {
      ring.ids.push_back(static_cast<int>(mesh.vertices.size()));
      ring.t.push_back(static_cast<double>(i) / nu);
      mesh.vertices.push_back(surface(s, lon[i], lat[r]));
    }
    rings.push_back(std::move(ring));
  }
  const int apex = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back(surface(s, 0.0, v1));

  // Longitude runs counter-clockwise seen from +z and rings climb in z, so
  // (lower, lower next, upper) and (lower, upper next, upper) face outward.
  for (int r = 0; r + 1 < nv; ++r) {
    const Ring& lo = rings[r];
    const Ring& up = rings[r + 1];
    const int nl = static_cast<int>(lo.ids.size());
    const int nu = static_cast<int>(up.ids.size());
    int a = 0, b = 0;
    while (a < nl || b < nu) {
      const double ta = a < nl ? (a + 1 < nl ? lo.t[a + 1] : 1.0) : 2.0;
      const double tb = b < nu ? (b + 1 < nu ? up.t[b + 1] : 1.0) : 2.0;
      if (ta <= tb) {
        mesh.faces.push_back({lo.ids[a], lo.ids[(a + 1) % nl], up.ids[b % nu]});
        ++a;
      } else {
        mesh.faces.push_back({lo.ids[a % nl], up.ids[(b + 1) % nu], up.ids[b]});
        ++b;
      }
    }
  }
  const Ring& top = rings.back();
  const int nt = static_cast<int>(top.ids.size());
  for (int i = 0; i < nt; ++i) mesh.faces.push_back({top.ids[i], top.ids[(i + 1) % nt], apex});
  return mesh;
}

namespace {

// Elliptic band between two heights with linearly varying semi-axes,
// sampled at roughly `spacing`.
void sample_band(std::vector<Vec3>& out, const Vec3& centre, double z0, double z1, double a0, double b0,
                 double a1, double b1, double spacing) {
  const double slant = std::hypot(z1 - z0, std::max(std::abs(a1 - a0), std::abs(b1 - b0)));
  const int nz = std::max(1, static_cast<int>(std::ceil(slant / spacing)));
  for (int iz = 0; iz <= nz; ++iz) {
    const double f = static_cast<double>(iz) / nz;
    const double a = a0 + f * (a1 - a0);
    const double b = b0 + f * (b1 - b0);
    const double perim = kPi * (3.0 * (a + b) - std::sqrt((3.0 * a + b) * (a + 3.0 * b)));
    const int nu = std::max(8, static_cast<int>(std::ceil(perim / spacing)));
    for (int iu = 0; iu < nu; ++iu) {
      const double u = 2.0 * kPi * iu / nu;
      out.push_back(centre + Vec3(a * std::cos(u), b * std::sin(u), z0 + f * (z1 - z0)));
    }
  }
}

void sample_disk(std::vector<Vec3>& out, const Vec3& centre, double z, double a, double b, double spacing) {
  const int nr = std::max(1, static_cast<int>(std::ceil(std::max(a, b) / spacing)));
  out.push_back(centre + Vec3(0.0, 0.0, z));
  for (int ir = 1; ir <= nr; ++ir) {
    const double f = static_cast<double>(ir) / nr;
    const double perim = 2.0 * kPi * f * std::max(a, b);
    const int nu = std::max(6, static_cast<int>(std::ceil(perim / spacing)));
    for (int iu = 0; iu < nu; ++iu) {
      const double u = 2.0 * kPi * iu / nu;
      out.push_back(centre + Vec3(f * a * std::cos(u), f * b * std::sin(u), z));
    }
  }
}

// Semi-axes of the crown's cut ring.
std::pair<double, double> margin_axes(const CrownShape& s) {
  const double cv = std::pow(std::cos(v_min(s)), s.e1);
  return {s.a * cv, s.b * cv};
}

constexpr double kCollarDepth = 3.0;
constexpr double kNeighbourGap = 0.3;

}  // namespace

SyntheticCase generate_synthetic_case(std::uint64_t seed, const FdiLabel& label, const GridSpec& grid,
                                      double spacing) {
  grid.validate();
  const CrownShape shape = crown_shape(label, seed);
  const auto [ma, mb] = margin_axes(shape);

  // Stump: shoulder just inside the margin, tapering to a flat top well
  // below the occlusal surface; collar continues below the margin.
  const double stump_top = 0.35 * shape.c;
  const double z_low = shape.z_cut - kCollarDepth;
  const Vec3 shift(0.0, 0.0, -0.5 * (stump_top + z_low));

  SyntheticCase out;
  out.label = label;
  out.seed = seed;
  out.gt_crown_mesh = crown_mesh(shape, spacing);
  for (Vec3& v : out.gt_crown_mesh.vertices) v += shift;

  const Vec3 lo = grid.origin;
  const Vec3 hi = grid.origin + grid.extent();
  auto inside = [&](const Vec3& p) {
    return (p.array() > lo.array()).all() && (p.array() < hi.array()).all();
  };
  for (const Vec3& v : out.gt_crown_mesh.vertices) {
    if (!inside(v)) {
      throw Error(ErrorCode::OutOfBounds, "synthetic crown does not fit inside the grid");
    }
  }
  out.gt_margin = extract_margin_line(out.gt_crown_mesh);

  std::vector<Vec3> ios;
  const Vec3 base = shift;
  sample_band(ios, base, shape.z_cut, stump_top, 0.92 * ma, 0.92 * mb, 0.6 * ma, 0.6 * mb, spacing);
  sample_disk(ios, base, stump_top, 0.6 * ma, 0.6 * mb, spacing);
  sample_band(ios, base, z_low, shape.z_cut, 0.9 * ma, 0.9 * mb, ma, mb, spacing);

  // Neighbours in the same quadrant, one on each side along x.
  const int before = label.position > 1 ? label.position - 1 : 2;
  const int after = label.position < 8 ? label.position + 1 : 7;
  int side = -1;
  for (const int pos : {before, after}) {
    const FdiLabel nl{label.quadrant, pos};
    const CrownShape ns = crown_shape(nl, seed * 31 + static_cast<std::uint64_t>(pos));
    const auto [na, nb] = margin_axes(ns);
    const Vec3 offset = shift + Vec3(side * (shape.a + kNeighbourGap + ns.a), 0.0, 0.0);
    const Vec3 seat(0.0, 0.0, shape.z_cut - ns.z_cut);
    for (const Vec3& v : crown_mesh(ns, spacing).vertices) ios.push_back(v + offset + seat);
    sample_band(ios, offset, z_low, shape.z_cut, 0.9 * na, 0.9 * nb, na, nb, spacing);
    side = 1;
  }
  for (const Vec3& p : ios) {
    if (inside(p)) out.ios_cloud.points.push_back(p);
  }
  return out;
}

PointCloud gt_points(const SyntheticCase& c) {
  PointCloud pc;
  pc.points = c.gt_crown_mesh.vertices;
  pc.normals = vertex_normals(c.gt_crown_mesh);
  return pc;
}

std::vector<std::uint8_t> gt_margin_mask(const SyntheticCase& c) {
  std::vector<std::uint8_t> mask(c.gt_crown_mesh.vertices.size(), 0);
  for (const int i : margin_vertex_indices(c.gt_crown_mesh)) mask[i] = 1;
  return mask;
}

// --- datasets ------------------------------------------------------------------

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::Config, "unknown split '" + std::string(s) + "'");
}

std::vector<CaseRecord> make_manifest(int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::Config, "dataset needs at least one case");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, kNumToothClasses - 1);
  std::vector<CaseRecord> out(n);
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case_%04d", i);
    out[i].id = id;
    out[i].label = FdiLabel::from_class_index(cls(rng));
    out[i].seed = rng();
  }
  stratified_split(out, seed);
  return out;
}

void stratified_split(std::vector<CaseRecord>& records, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  for (const ToothType t : {ToothType::incisor, ToothType::canine, ToothType::premolar, ToothType::molar}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].label.type() == t) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto m = static_cast<double>(idx.size());
    const auto n_val = static_cast<std::size_t>(std::lround(m / 9.0));
    const auto n_test = static_cast<std::size_t>(std::lround(m / 9.0));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      records[idx[r]].split = r < n_val ? Split::val : r < n_val + n_test ? Split::test : Split::train;
    }
  }
}

std::vector<CaseRecord> filter_split(const std::vector<CaseRecord>& records, Split split) {
  std::vector<CaseRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [split](const CaseRecord& r) { return r.split == split; });
  return out;
}

namespace {

nlohmann::ordered_json grid_json(const GridSpec& g) {
  return {{"dims", g.dims}, {"spacing", g.spacing}, {"origin", {g.origin.x(), g.origin.y(), g.origin.z()}}};
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<CaseRecord>& records,
                   const GridSpec& grid, double spacing) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json cases = nlohmann::ordered_json::array();
  for (const CaseRecord& r : records) {
    const SyntheticCase c = generate_synthetic_case(r.seed, r.label, grid, spacing);
    const auto cdir = dir / r.id;
    std::filesystem::create_directories(cdir);
    io::write_cloud(cdir / "ios.ply", c.ios_cloud);
    io::write_mesh(cdir / "crown.ply", c.gt_crown_mesh);
    io::write_cloud(cdir / "margin.ply", c.gt_margin);
    cases.push_back({{"id", r.id}, {"seed", r.seed}, {"fdi", r.label.code()}, {"split", to_string(r.split)}});
  }
  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["grid"] = grid_json(grid);
  manifest["sample_spacing"] = spacing;
  manifest["cases"] = std::move(cases);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

std::vector<CaseRecord> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorCode::Io, "cannot open " + (dir / "manifest.json").string());
  std::vector<CaseRecord> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& c : j.at("cases")) {
      CaseRecord r;
      r.id = c.at("id").get<std::string>();
      r.seed = c.at("seed").get<std::uint64_t>();
      r.label = FdiLabel::from_code(c.at("fdi").get<int>());
      r.split = split_from_string(c.at("split").get<std::string>());
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, "malformed manifest: " + std::string(e.what()));
  }
  return out;
}

SyntheticCase load_case(const std::filesystem::path& dir, const CaseRecord& record) {
  SyntheticCase c;
  const auto cdir = dir / record.id;
  c.ios_cloud = io::read_cloud(cdir / "ios.ply");
  c.gt_crown_mesh = io::read_mesh(cdir / "crown.ply");
  c.gt_margin = io::read_cloud(cdir / "margin.ply");
  c.label = record.label;
  c.seed = record.seed;
  return c;
}

}  // namespace crowngen
