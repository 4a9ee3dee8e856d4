// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "crowngen/error.hpp"
#include "crowngen/losses.hpp"
#include "crowngen/refiner.hpp"
#include "crowngen/simd/kernels.hpp"
#include "crowngen/voxelgrid.hpp"

namespace crowngen {

namespace {

void require_occupancy(const VoxelVolume& v, const char* what) {
  v.spec.validate();
  if (v.data.size() != v.spec.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": payload size != D*H*W");
  }
}

std::vector<Index3> ball_offsets(int r) {
  std::vector<Index3> out;
  for (int a = -r; a <= r; ++a)
    for (int b = -r; b <= r; ++b)
      for (int c = -r; c <= r; ++c)
        if (a * a + b * b + c * c <= r * r) out.push_back({a, b, c});
  return out;
}

VoxelVolume dilate(const VoxelVolume& v, int r) {
  VoxelVolume out(v.spec, VolumeKind::occupancy);
  const auto offs = ball_offsets(r);
  const GridSpec& g = v.spec;
  for (std::size_t f = 0; f < v.data.size(); ++f) {
    if (v.data[f] == 0.0) continue;
    const Index3 c = g.unflat(f);
    for (const auto& o : offs) {
      const Index3 n{c.i + o.i, c.j + o.j, c.k + o.k};
      if (g.contains(n)) out[n] = 1.0;
    }
  }
  return out;
}

VoxelVolume erode(const VoxelVolume& v, int r) {
  VoxelVolume out(v.spec, VolumeKind::occupancy);
  const auto offs = ball_offsets(r);
  const GridSpec& g = v.spec;
  for (std::size_t f = 0; f < v.data.size(); ++f) {
    if (v.data[f] == 0.0) continue;
    const Index3 c = g.unflat(f);
    bool keep = true;
    for (const auto& o : offs) {
      const Index3 n{c.i + o.i, c.j + o.j, c.k + o.k};
      if (!g.contains(n) || v[n] == 0.0) {
        keep = false;
        break;
      }
    }
    if (keep) out.data[f] = 1.0;
  }
  return out;
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// "Same" 3x3x3 convolution over channel-major buffers. Weight column
// c * 27 + tap with tap = (a+1)*9 + (b+1)*3 + (d+1).
void conv3d_forward(const GridSpec& g, const std::vector<double>& in, int cin,
                    const Eigen::MatrixXd& w, const Eigen::MatrixXd& b, std::vector<double>& out) {
  const auto& kern = simd::active_kernels();
  const int cout = static_cast<int>(w.rows());
  const std::size_t nv = g.voxel_count();
  const int D = g.dims[0], H = g.dims[1], W = g.dims[2];
  out.assign(cout * nv, 0.0);
  for (int o = 0; o < cout; ++o) {
    double* y = out.data() + o * nv;
    std::fill(y, y + nv, b(o, 0));
    for (int c = 0; c < cin; ++c) {
      const double* x = in.data() + c * nv;
      for (int tap = 0; tap < 27; ++tap) {
        const double wt = w(o, c * 27 + tap);
        if (wt == 0.0) continue;
        const int a = tap / 9 - 1, bb = (tap / 3) % 3 - 1, d = tap % 3 - 1;
        const int k0 = std::max(0, -d), k1 = std::min(W, W - d);
        for (int i = std::max(0, -a); i < std::min(D, D - a); ++i) {
          for (int j = std::max(0, -bb); j < std::min(H, H - bb); ++j) {
            kern.axpy(wt, x + g.flat(i + a, j + bb, k0 + d), y + g.flat(i, j, k0),
                      static_cast<std::size_t>(k1 - k0));
          }
        }
      }
    }
  }
}

// Accumulates dw, db and (when d_in is non-null) the input gradient.
void conv3d_backward(const GridSpec& g, const std::vector<double>& in, int cin,
                     const Eigen::MatrixXd& w, const std::vector<double>& d_out,
                     Eigen::MatrixXd& dw, Eigen::MatrixXd& db, std::vector<double>* d_in) {
  const auto& kern = simd::active_kernels();
  const int cout = static_cast<int>(w.rows());
  const std::size_t nv = g.voxel_count();
  const int D = g.dims[0], H = g.dims[1], W = g.dims[2];
  if (d_in) d_in->assign(cin * nv, 0.0);
  for (int o = 0; o < cout; ++o) {
    const double* dy = d_out.data() + o * nv;
    db(o, 0) += Eigen::Map<const Eigen::VectorXd>(dy, static_cast<Eigen::Index>(nv)).sum();
    for (int c = 0; c < cin; ++c) {
      const double* x = in.data() + c * nv;
      for (int tap = 0; tap < 27; ++tap) {
        const int a = tap / 9 - 1, bb = (tap / 3) % 3 - 1, d = tap % 3 - 1;
        const int k0 = std::max(0, -d), k1 = std::min(W, W - d);
        const auto len = static_cast<Eigen::Index>(k1 - k0);
        const double wt = w(o, c * 27 + tap);
        double acc = 0.0;
        for (int i = std::max(0, -a); i < std::min(D, D - a); ++i) {
          for (int j = std::max(0, -bb); j < std::min(H, H - bb); ++j) {
            const double* xr = x + g.flat(i + a, j + bb, k0 + d);
            const double* dr = dy + g.flat(i, j, k0);
            acc += Eigen::Map<const Eigen::VectorXd>(xr, len).dot(
                Eigen::Map<const Eigen::VectorXd>(dr, len));
            if (d_in && wt != 0.0) {
              kern.axpy(wt, dr, d_in->data() + c * nv + g.flat(i + a, j + bb, k0 + d),
                        static_cast<std::size_t>(len));
            }
          }
        }
        dw(o, c * 27 + tap) += acc;
      }
    }
  }
}

}  // namespace

// --- labels ------------------------------------------------------------------

std::string_view to_string(ToothType type) {
  switch (type) {
    case ToothType::incisor: return "incisor";
    case ToothType::canine: return "canine";
    case ToothType::premolar: return "premolar";
    case ToothType::molar: return "molar";
  }
  return "unknown";
}

void FdiLabel::validate() const {
  if (quadrant < 1 || quadrant > 4 || position < 1 || position > 8) {
    throw Error(ErrorCode::UnknownLabel,
                "not a permanent FDI tooth: " + std::to_string(quadrant * 10 + position));
  }
}

FdiLabel FdiLabel::from_code(int code) {
  const FdiLabel l{code / 10, code % 10};
  if (code < 11 || code > 48) {
    throw Error(ErrorCode::UnknownLabel, "not a permanent FDI tooth: " + std::to_string(code));
  }
  l.validate();
  return l;
}

FdiLabel FdiLabel::from_class_index(int index) {
  if (index < 0 || index >= kNumToothClasses) {
    throw Error(ErrorCode::UnknownLabel, "tooth class index out of range: " + std::to_string(index));
  }
  return {index / 8 + 1, index % 8 + 1};
}

ToothType FdiLabel::type() const {
  validate();
  if (position <= 2) return ToothType::incisor;
  if (position == 3) return ToothType::canine;
  if (position <= 5) return ToothType::premolar;
  return ToothType::molar;
}

// --- feature volumes ---------------------------------------------------------

FeatureVolume::FeatureVolume(int c, GridSpec s, double fill)
    : channels(c), spec(s), data(static_cast<std::size_t>(c) * s.voxel_count(), fill) {}

void FeatureVolume::validate() const {
  spec.validate();
  if (channels <= 0 || data.size() != static_cast<std::size_t>(channels) * spec.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "feature payload size != C*D*H*W");
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite feature value");
  }
}

Eigen::VectorXd channel_mean(const FeatureVolume& f) {
  Eigen::VectorXd m(f.channels);
  const auto n = static_cast<Eigen::Index>(f.spec.voxel_count());
  for (int c = 0; c < f.channels; ++c) {
    m[c] = Eigen::Map<const Eigen::VectorXd>(f.channel(c), n).sum() / static_cast<double>(n);
  }
  return m;
}

Eigen::MatrixXd gather_features(const FeatureVolume& f, const VoxelVolume& mask) {
  if (!(f.spec.dims == mask.spec.dims) || mask.data.size() != f.spec.voxel_count()) {
    throw Error(ErrorCode::ShapeMismatch, "feature and mask grids differ");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] != 0.0) rows.push_back(i);
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyVolume, "mask selects no voxel");
  Eigen::MatrixXd e(static_cast<Eigen::Index>(rows.size()), f.channels);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int c = 0; c < f.channels; ++c) e(static_cast<Eigen::Index>(r), c) = f.at(c, rows[r]);
  }
  return e;
}

// --- oracle ------------------------------------------------------------------

VoxelVolume perturb_occupancy(const VoxelVolume& occupancy, const CoarseNoise& noise,
                              std::uint64_t seed) {
  require_occupancy(occupancy, "perturb_occupancy");
  if (noise.dilate_r < 0 || noise.erode_r < 0 || noise.flip_prob < 0.0 || noise.flip_prob > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "invalid coarse noise parameters");
  }
  VoxelVolume v = occupancy;
  v.kind = VolumeKind::occupancy;
  if (noise.dilate_r > 0) v = dilate(v, noise.dilate_r);
  if (noise.erode_r > 0) v = erode(v, noise.erode_r);
  if (noise.flip_prob > 0.0) {
    const GridSpec& g = v.spec;
    std::vector<std::uint8_t> band(v.data.size(), 0);
    for (std::size_t f = 0; f < v.data.size(); ++f) {
      if (v.data[f] == 0.0) continue;
      const Index3 c = g.unflat(f);
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
          for (int d = -1; d <= 1; ++d) {
            const Index3 n{c.i + a, c.j + b, c.k + d};
            if (g.contains(n) && v[n] == 0.0) {
              band[g.flat(n.i, n.j, n.k)] = 1;
              band[f] = 1;
            }
          }
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t f = 0; f < v.data.size(); ++f) {
      if (band[f] && u(rng) < noise.flip_prob) v.data[f] = 1.0 - v.data[f];
    }
  }
  return v;
}

OccupancyDescriptors::OccupancyDescriptors(const VoxelVolume& occupancy) : spec_(occupancy.spec) {
  require_occupancy(occupancy, "descriptors");
  const int D = spec_.dims[0], H = spec_.dims[1], W = spec_.dims[2];
  const std::size_t plane = static_cast<std::size_t>(D + 1) * (H + 1) * (W + 1);
  prefix_.assign(4 * plane, 0);
  occ_.assign(occupancy.data.size(), 0);
  Vec3 sum = Vec3::Zero();
  double count = 0.0;
  auto p = [&](int s, int i, int j, int k) -> std::int64_t& {
    return prefix_[s * plane + (static_cast<std::size_t>(i) * (H + 1) + j) * (W + 1) + k];
  };
  for (int i = 0; i < D; ++i) {
    for (int j = 0; j < H; ++j) {
      for (int k = 0; k < W; ++k) {
        const bool on = occupancy.at(i, j, k) != 0.0;
        occ_[spec_.flat(i, j, k)] = on;
        const std::int64_t v[4] = {on, on * i, on * j, on * k};
        if (on) {
          sum += Vec3(i, j, k);
          count += 1.0;
        }
        for (int s = 0; s < 4; ++s) {
          p(s, i + 1, j + 1, k + 1) = v[s] + p(s, i, j + 1, k + 1) + p(s, i + 1, j, k + 1) +
                                      p(s, i + 1, j + 1, k) - p(s, i, j, k + 1) -
                                      p(s, i, j + 1, k) - p(s, i + 1, j, k) + p(s, i, j, k);
        }
      }
    }
  }
  if (count > 0.0) centroid_ = sum / count;
}

std::int64_t OccupancyDescriptors::prefix(int plane, int i, int j, int k) const {
  const int H = spec_.dims[1], W = spec_.dims[2];
  const std::size_t n = static_cast<std::size_t>(spec_.dims[0] + 1) * (H + 1) * (W + 1);
  return prefix_[plane * n + (static_cast<std::size_t>(i) * (H + 1) + j) * (W + 1) + k];
}

OccupancyDescriptors::Window OccupancyDescriptors::window(const Index3& c, int r) const {
  const int i0 = std::clamp(c.i - r, 0, spec_.dims[0]), i1 = std::clamp(c.i + r + 1, 0, spec_.dims[0]);
  const int j0 = std::clamp(c.j - r, 0, spec_.dims[1]), j1 = std::clamp(c.j + r + 1, 0, spec_.dims[1]);
  const int k0 = std::clamp(c.k - r, 0, spec_.dims[2]), k1 = std::clamp(c.k + r + 1, 0, spec_.dims[2]);
  double s[4];
  for (int p = 0; p < 4; ++p) {
    s[p] = static_cast<double>(prefix(p, i1, j1, k1) - prefix(p, i0, j1, k1) - prefix(p, i1, j0, k1) -
                               prefix(p, i1, j1, k0) + prefix(p, i0, j0, k1) + prefix(p, i0, j1, k0) +
                               prefix(p, i1, j0, k0) - prefix(p, i0, j0, k0));
  }
  return {s[0], Vec3(s[1], s[2], s[3])};
}

double OccupancyDescriptors::fill(const Index3& c, int r) const {
  const double side = 2.0 * r + 1.0;
  return window(c, r).count / (side * side * side);
}

void OccupancyDescriptors::evaluate(const Index3& idx, double* out) const {
  std::fill(out, out + kCoarseChannels, 0.0);
  const Window w7 = window(idx, 3);
  if (w7.count == 0.0) return;
  const Vec3 c(idx.i, idx.j, idx.k);
  out[0] = occ_[spec_.flat(idx.i, idx.j, idx.k)];
  const Window w3 = window(idx, 1);
  if (w3.count > 0.0) {
    const Vec3 d = w3.sum / w3.count - c;
    out[1] = d.x(), out[2] = d.y(), out[3] = d.z();
  }
  const Vec3 d7 = w7.sum / w7.count - c;
  out[4] = d7.x(), out[5] = d7.y(), out[6] = d7.z();
  out[7] = w3.count / 27.0;
  out[8] = fill(idx, 2);
  out[9] = w7.count / 343.0;
  for (int a = 0; a < 3; ++a) {
    Index3 lo = idx, hi = idx;
    (a == 0 ? lo.i : a == 1 ? lo.j : lo.k) -= 1;
    (a == 0 ? hi.i : a == 1 ? hi.j : hi.k) += 1;
    out[10 + a] = 0.5 * (fill(hi, 2) - fill(lo, 2));
  }
  const Vec3 r = c - centroid_;
  const double n = r.norm();
  if (n > 1e-12) {
    out[13] = r.x() / n, out[14] = r.y() / n, out[15] = r.z() / n;
  }
}

FeatureVolume OccupancyDescriptors::dense() const {
  FeatureVolume f(kCoarseChannels, spec_);
  double buf[kCoarseChannels];
  for (std::size_t v = 0; v < spec_.voxel_count(); ++v) {
    evaluate(spec_.unflat(v), buf);
    for (int c = 0; c < kCoarseChannels; ++c) f.at(c, v) = buf[c];
  }
  return f;
}

Eigen::MatrixXd OccupancyDescriptors::rows(const std::vector<Index3>& indices) const {
  Eigen::MatrixXd e(static_cast<Eigen::Index>(indices.size()), kCoarseChannels);
  double buf[kCoarseChannels];
  for (std::size_t r = 0; r < indices.size(); ++r) {
    evaluate(indices[r], buf);
    for (int c = 0; c < kCoarseChannels; ++c) e(static_cast<Eigen::Index>(r), c) = buf[c];
  }
  return e;
}

Eigen::VectorXd OccupancyDescriptors::channel_mean() const {
  // Summed channel by channel in voxel order, like crowngen::channel_mean.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kCoarseChannels);
  double buf[kCoarseChannels];
  for (std::size_t v = 0; v < spec_.voxel_count(); ++v) {
    const Index3 idx = spec_.unflat(v);
    if (window(idx, 3).count == 0.0) continue;
    evaluate(idx, buf);
    for (int c = 0; c < kCoarseChannels; ++c) sum[c] += buf[c];
  }
  return sum / static_cast<double>(spec_.voxel_count());
}

CoarseOutput oracle_coarse(const VoxelVolume& v_gt, const CoarseNoise& noise, std::uint64_t seed) {
  const VoxelVolume occ = perturb_occupancy(v_gt, noise, seed);
  CoarseOutput out;
  out.logits = VoxelVolume(occ.spec, VolumeKind::logits);
  for (std::size_t i = 0; i < occ.data.size(); ++i) {
    out.logits.data[i] = occ.data[i] != 0.0 ? kOracleLogit : -kOracleLogit;
  }
  out.features = OccupancyDescriptors(occ).dense();
  return out;
}

// --- trainable stand-in ------------------------------------------------------

ConvPredictorParams init_conv_predictor(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](Eigen::Index r, Eigen::Index c, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
    return m;
  };
  ConvPredictorParams p;
  const double b1 = 1.0 / std::sqrt(27.0);
  const double b2 = 1.0 / std::sqrt(16.0 * 27.0);
  p.w1 = uniform(kCoarseChannels, 27, b1);
  p.b1 = uniform(kCoarseChannels, 1, b1);
  p.w2 = uniform(kCoarseChannels + 1, kCoarseChannels * 27, b2);
  p.b2 = uniform(kCoarseChannels + 1, 1, b2);
  return p;
}

namespace {

struct ConvForward {
  std::vector<double> h1_pre, h1, out;
};

ConvForward conv_forward(const ConvPredictorParams& p, const VoxelVolume& v_ios) {
  require_occupancy(v_ios, "conv_predict");
  ConvForward fw;
  conv3d_forward(v_ios.spec, v_ios.data, 1, p.w1, p.b1, fw.h1_pre);
  fw.h1.resize(fw.h1_pre.size());
  for (std::size_t i = 0; i < fw.h1.size(); ++i) fw.h1[i] = fw.h1_pre[i] * sigmoid(fw.h1_pre[i]);
  conv3d_forward(v_ios.spec, fw.h1, kCoarseChannels, p.w2, p.b2, fw.out);
  return fw;
}

}  // namespace

CoarseOutput conv_predict(const ConvPredictorParams& params, const VoxelVolume& v_ios) {
  ConvForward fw = conv_forward(params, v_ios);
  const std::size_t nv = v_ios.spec.voxel_count();
  CoarseOutput out;
  out.logits = VoxelVolume(v_ios.spec, VolumeKind::logits);
  std::copy(fw.out.begin() + kCoarseChannels * nv, fw.out.end(), out.logits.data.begin());
  out.features = FeatureVolume(kCoarseChannels, v_ios.spec);
  std::copy(fw.out.begin(), fw.out.begin() + kCoarseChannels * nv, out.features.data.begin());
  return out;
}

double conv_bce(const ConvPredictorParams& params, const VoxelVolume& v_ios,
                const VoxelVolume& target, ConvPredictorParams* grad) {
  ConvForward fw = conv_forward(params, v_ios);
  const std::size_t nv = v_ios.spec.voxel_count();
  VoxelVolume logits(v_ios.spec, VolumeKind::logits);
  std::copy(fw.out.begin() + kCoarseChannels * nv, fw.out.end(), logits.data.begin());
  const BceResult bce = bce_loss(logits, target);
  if (grad) {
    std::vector<double> d_out((kCoarseChannels + 1) * nv, 0.0);
    std::copy(bce.grad.data.begin(), bce.grad.data.end(), d_out.begin() + kCoarseChannels * nv);
    std::vector<double> d_h1;
    conv3d_backward(v_ios.spec, fw.h1, kCoarseChannels, params.w2, d_out, grad->w2, grad->b2, &d_h1);
    for (std::size_t i = 0; i < d_h1.size(); ++i) {
      const double s = sigmoid(fw.h1_pre[i]);
      d_h1[i] *= s * (1.0 + fw.h1_pre[i] * (1.0 - s));
    }
    conv3d_backward(v_ios.spec, v_ios.data, 1, params.w1, d_h1, grad->w1, grad->b1, nullptr);
  }
  return bce.loss;
}

}  // namespace crowngen
