// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/dpsr.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include <fftw3.h>

#include "crowngen/error.hpp"

namespace crowngen {

namespace {

using Complex = std::complex<double>;

// Periodic trilinear stencil of one point: 8 flat indices, weights, and
// the weight gradients with respect to grid coordinates.
struct Stencil {
  std::array<std::size_t, 8> idx;
  std::array<double, 8> w;
  std::array<Vec3, 8> dw;
};

Stencil periodic_stencil(const GridSpec& spec, const Vec3& p) {
  const Vec3 rel = (p - spec.origin) / spec.spacing;
  for (int a = 0; a < 3; ++a) {
    if (!(rel[a] >= 0.0 && rel[a] < spec.dims[a])) {
      std::ostringstream msg;
      msg << "point (" << p.x() << ", " << p.y() << ", " << p.z()
          << ") lies outside the DPSR grid";
      throw Error(ErrorCode::PointOutsideGrid, msg.str());
    }
  }
  std::array<int, 3> lo{}, hi{};
  std::array<double, 3> f{};
  for (int a = 0; a < 3; ++a) {
    const double g = rel[a] - 0.5;
    const double fl = std::floor(g);
    f[a] = g - fl;
    const int n = spec.dims[a];
    lo[a] = ((static_cast<int>(fl) % n) + n) % n;
    hi[a] = (lo[a] + 1) % n;
  }
  Stencil s;
  int c = 0;
  for (int di = 0; di < 2; ++di) {
    const double wi = di ? f[0] : 1.0 - f[0];
    const double gi = di ? 1.0 : -1.0;
    for (int dj = 0; dj < 2; ++dj) {
      const double wj = dj ? f[1] : 1.0 - f[1];
      const double gj = dj ? 1.0 : -1.0;
      for (int dk = 0; dk < 2; ++dk) {
        const double wk = dk ? f[2] : 1.0 - f[2];
        const double gk = dk ? 1.0 : -1.0;
        s.idx[c] = spec.flat(di ? hi[0] : lo[0], dj ? hi[1] : lo[1],
                             dk ? hi[2] : lo[2]);
        s.w[c] = wi * wj * wk;
        s.dw[c] = Vec3(gi * wj * wk, wi * gj * wk, wi * wj * gk);
        ++c;
      }
    }
  }
  return s;
}

double sample(const Stencil& s, const std::vector<double>& grid) {
  double v = 0.0;
  for (int c = 0; c < 8; ++c) v += s.w[c] * grid[s.idx[c]];
  return v;
}

// Gradient in physical units (per mm).
Vec3 sample_grad(const Stencil& s, const std::vector<double>& grid, double spacing) {
  Vec3 g = Vec3::Zero();
  for (int c = 0; c < 8; ++c) g += s.dw[c] * grid[s.idx[c]];
  return g / spacing;
}

/// FFTW plans and the spectral derivative/solve filters for one grid.
class SpectralSolver {
 public:
  SpectralSolver(const GridSpec& spec, double sigma)
      : n_(spec.dims),
        real_count_(spec.voxel_count()),
        half_(static_cast<std::size_t>(n_[2] / 2 + 1)),
        complex_count_(static_cast<std::size_t>(n_[0]) * n_[1] * half_),
        real_(fftw_alloc_real(real_count_)),
        spec_(fftw_alloc_complex(complex_count_)) {
    // FFTW_ESTIMATE keeps plan selection (and therefore results) identical
    // from run to run.
    fwd_ = fftw_plan_dft_r2c_3d(n_[0], n_[1], n_[2], real_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_3d(n_[0], n_[1], n_[2], spec_, real_, FFTW_ESTIMATE);
    for (auto& h : filter_) h.assign(complex_count_, 0.0);
    const double two_pi = 2.0 * std::numbers::pi;
    for (int i = 0; i < n_[0]; ++i) {
      for (int j = 0; j < n_[1]; ++j) {
        for (std::size_t k = 0; k < half_; ++k) {
          const std::array<int, 3> idx{i, j, static_cast<int>(k)};
          std::array<double, 3> u{};
          std::array<bool, 3> nyquist{};
          double u2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            const int n = n_[a];
            const int freq = idx[a] <= n / 2 ? idx[a] : idx[a] - n;
            nyquist[a] = (n % 2 == 0) && (idx[a] == n / 2);
            u[a] = two_pi * freq / n;
            u2 += u[a] * u[a];
          }
          if (u2 == 0.0) continue;
          const double gauss = std::exp(-0.5 * sigma * sigma * u2);
          const std::size_t f = (static_cast<std::size_t>(i) * n_[1] + j) * half_ + k;
          for (int a = 0; a < 3; ++a) {
            // H_a = i * h_a with h_a = -g * u_a / |u|^2
            filter_[a][f] = nyquist[a] ? 0.0 : -gauss * u[a] / u2;
          }
        }
      }
    }
  }

  ~SpectralSolver() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  SpectralSolver(const SpectralSolver&) = delete;
  SpectralSolver& operator=(const SpectralSolver&) = delete;

  /// sum_a A_a v_a with A_a = F^-1 diag(i h_a) F.
  std::vector<double> solve(const std::array<std::vector<double>, 3>& v) {
    std::vector<Complex> acc(complex_count_, Complex(0.0, 0.0));
    for (int a = 0; a < 3; ++a) {
      forward(v[a]);
      for (std::size_t f = 0; f < complex_count_; ++f) {
        const Complex z(spec_[f][0], spec_[f][1]);
        acc[f] += Complex(0.0, filter_[a][f]) * z;
      }
    }
    return inverse(acc);
  }

  /// A_a^T g for each axis: F^-1 diag(-i h_a) F g.
  std::array<std::vector<double>, 3> adjoint(const std::vector<double>& g) {
    forward(g);
    std::vector<Complex> base(complex_count_);
    for (std::size_t f = 0; f < complex_count_; ++f) base[f] = Complex(spec_[f][0], spec_[f][1]);
    std::array<std::vector<double>, 3> out;
    std::vector<Complex> tmp(complex_count_);
    for (int a = 0; a < 3; ++a) {
      for (std::size_t f = 0; f < complex_count_; ++f) {
        tmp[f] = Complex(0.0, -filter_[a][f]) * base[f];
      }
      out[a] = inverse(tmp);
    }
    return out;
  }

 private:
  void forward(const std::vector<double>& x) {
    std::copy(x.begin(), x.end(), real_);
    fftw_execute(fwd_);
  }

  std::vector<double> inverse(const std::vector<Complex>& z) {
    for (std::size_t f = 0; f < complex_count_; ++f) {
      spec_[f][0] = z[f].real();
      spec_[f][1] = z[f].imag();
    }
    fftw_execute(inv_);
    std::vector<double> out(real_, real_ + real_count_);
    const double scale = 1.0 / static_cast<double>(real_count_);
    for (double& v : out) v *= scale;
    return out;
  }

  std::array<int, 3> n_;
  std::size_t real_count_;
  std::size_t half_;
  std::size_t complex_count_;
  double* real_;
  fftw_complex* spec_;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
  std::array<std::vector<double>, 3> filter_;
};

void check_inputs(const PointCloud& cloud, const DpsrConfig& cfg) {
  cfg.validate();
  if (!cloud.has_normals()) throw Error(ErrorCode::NormalsMissing, "DPSR needs oriented points");
  if (cloud.normals->size() != cloud.size()) {
    throw Error(ErrorCode::ShapeMismatch, "normal count != point count");
  }
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "DPSR on an empty cloud");
}

std::vector<Stencil> stencils(const PointCloud& cloud, const GridSpec& spec) {
  std::vector<Stencil> out;
  out.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.push_back(periodic_stencil(spec, p));
  return out;
}

std::vector<double> raw_indicator(const PointCloud& cloud, const DpsrConfig& cfg,
                                  const std::vector<Stencil>& st, SpectralSolver& solver) {
  std::array<std::vector<double>, 3> field;
  for (auto& f : field) f.assign(cfg.grid.voxel_count(), 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& n = (*cloud.normals)[i];
    for (int c = 0; c < 8; ++c) {
      for (int a = 0; a < 3; ++a) field[a][st[i].idx[c]] += st[i].w[c] * n[a];
    }
  }
  return solver.solve(field);
}

}  // namespace

void DpsrConfig::validate() const {
  grid.validate();
  if (!(smoothing_sigma >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "smoothing_sigma must be >= 0");
  }
}

VoxelVolume dpsr_forward(const PointCloud& cloud, const DpsrConfig& cfg) {
  check_inputs(cloud, cfg);
  const auto st = stencils(cloud, cfg.grid);
  SpectralSolver solver(cfg.grid, cfg.smoothing_sigma);
  VoxelVolume chi(cfg.grid, VolumeKind::indicator);
  chi.data = raw_indicator(cloud, cfg, st, solver);
  if (cfg.zero_mean_at_points) {
    double mean = 0.0;
    for (const Stencil& s : st) mean += sample(s, chi.data);
    mean /= static_cast<double>(st.size());
    for (double& v : chi.data) v -= mean;
  }
  return chi;
}

DpsrGradients dpsr_backward(const PointCloud& cloud, const DpsrConfig& cfg,
                            const VoxelVolume& upstream) {
  check_inputs(cloud, cfg);
  if (upstream.spec.dims != cfg.grid.dims || upstream.data.size() != cfg.grid.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "upstream gradient grid does not match DPSR grid");
  }
  const auto st = stencils(cloud, cfg.grid);
  SpectralSolver solver(cfg.grid, cfg.smoothing_sigma);
  const std::size_t np = cloud.size();
  const double s = cfg.grid.spacing;

  std::vector<double> g_raw = upstream.data;
  std::vector<double> chi_raw;
  double mean_weight = 0.0;  // dL/dc / |points| with c the subtracted mean
  if (cfg.zero_mean_at_points) {
    double total = 0.0;
    for (double v : upstream.data) total += v;
    mean_weight = -total / static_cast<double>(np);
    for (const Stencil& stc : st) {
      for (int c = 0; c < 8; ++c) g_raw[stc.idx[c]] += mean_weight * stc.w[c];
    }
    chi_raw = raw_indicator(cloud, cfg, st, solver);
  }

  const auto back = solver.adjoint(g_raw);
  DpsrGradients out;
  out.d_points.assign(np, Vec3::Zero());
  out.d_normals.assign(np, Vec3::Zero());
  for (std::size_t i = 0; i < np; ++i) {
    const Vec3& n = (*cloud.normals)[i];
    for (int a = 0; a < 3; ++a) {
      out.d_normals[i][a] = sample(st[i], back[a]);
      out.d_points[i] += n[a] * sample_grad(st[i], back[a], s);
    }
    if (cfg.zero_mean_at_points) {
      out.d_points[i] += mean_weight * sample_grad(st[i], chi_raw, s);
    }
  }
  return out;
}

std::vector<double> sample_trilinear(const VoxelVolume& volume,
                                     std::span<const Vec3> points) {
  const GridSpec& spec = volume.spec;
  std::vector<double> out;
  out.reserve(points.size());
  for (const Vec3& p : points) {
    const Vec3 g = (p - spec.origin) / spec.spacing - Vec3::Constant(0.5);
    std::array<int, 3> lo{};
    std::array<double, 3> f{};
    for (int a = 0; a < 3; ++a) {
      const int n = spec.dims[a];
      if (!(g[a] >= 0.0 && g[a] <= n - 1)) {
        throw Error(ErrorCode::PointOutsideGrid, "sample point outside the grid interior");
      }
      lo[a] = std::min(static_cast<int>(std::floor(g[a])), n - 2);
      f[a] = g[a] - lo[a];
    }
    double v = 0.0;
    for (int di = 0; di < 2; ++di) {
      for (int dj = 0; dj < 2; ++dj) {
        for (int dk = 0; dk < 2; ++dk) {
          const double w = (di ? f[0] : 1.0 - f[0]) * (dj ? f[1] : 1.0 - f[1]) *
                           (dk ? f[2] : 1.0 - f[2]);
          v += w * volume.at(lo[0] + di, lo[1] + dj, lo[2] + dk);
        }
      }
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace crowngen
