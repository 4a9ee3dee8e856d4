// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/refiner.hpp"

#include <cmath>
#include <random>

#include "crowngen/error.hpp"
#include "crowngen/meshops.hpp"
#include "crowngen/voxelgrid.hpp"

namespace crowngen {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

MatrixXd silu(const MatrixXd& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

MatrixXd silu_grad(const MatrixXd& z) {
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

MatrixXd uniform(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

Mlp init_mlp(std::mt19937_64& rng, int in, bool zero_last) {
  Mlp m;
  const double b_in = 1.0 / std::sqrt(static_cast<double>(in));
  const double b_hid = 1.0 / std::sqrt(static_cast<double>(kHeadHidden));
  m.w1 = uniform(rng, kHeadHidden, in, b_in);
  m.b1 = uniform(rng, kHeadHidden, 1, b_in);
  m.w2 = uniform(rng, kHeadHidden, kHeadHidden, b_hid);
  m.b2 = uniform(rng, kHeadHidden, 1, b_hid);
  if (zero_last) {
    m.w3 = MatrixXd::Zero(3, kHeadHidden);
    m.b3 = MatrixXd::Zero(3, 1);
  } else {
    m.w3 = uniform(rng, 3, kHeadHidden, b_hid);
    m.b3 = uniform(rng, 3, 1, b_hid);
  }
  return m;
}

struct MlpCache {
  MatrixXd z1, h1, z2, h2, out;
};

MlpCache mlp_forward(const Mlp& m, const MatrixXd& x) {
  MlpCache c;
  c.z1 = (x * m.w1.transpose()).rowwise() + m.b1.col(0).transpose();
  c.h1 = silu(c.z1);
  c.z2 = (c.h1 * m.w2.transpose()).rowwise() + m.b2.col(0).transpose();
  c.h2 = silu(c.z2);
  c.out = (c.h2 * m.w3.transpose()).rowwise() + m.b3.col(0).transpose();
  return c;
}

// Accumulates parameter gradients into g and returns dL/dx.
MatrixXd mlp_backward(const Mlp& m, const MatrixXd& x, const MlpCache& c, const MatrixXd& d_out,
                      Mlp& g) {
  g.w3 += d_out.transpose() * c.h2;
  g.b3 += d_out.colwise().sum().transpose();
  const MatrixXd dz2 = (d_out * m.w3).cwiseProduct(silu_grad(c.z2));
  g.w2 += dz2.transpose() * c.h1;
  g.b2 += dz2.colwise().sum().transpose();
  const MatrixXd dz1 = (dz2 * m.w2).cwiseProduct(silu_grad(c.z1));
  g.w1 += dz1.transpose() * x;
  g.b1 += dz1.colwise().sum().transpose();
  return dz1 * m.w1;
}

struct FusionCache {
  int label_row = 0;
  VectorXd emb;   // 128
  VectorXd pool;  // C + 128
  VectorXd gate;  // C + 128
  MatrixXd a;     // C x C: feature block of the projection times the gate
};

MatrixXd fusion_forward(const MatrixXd& rows, const VectorXd& pooled, const FdiLabel& label,
                        const RefinerParams& p, const FusionOptions& opts, FusionCache* cache) {
  label.validate();
  const int c = p.channels();
  if (rows.cols() != c || pooled.size() != c) {
    throw Error(ErrorCode::ShapeMismatch, "feature channels do not match the refiner");
  }
  if (p.embedding.rows() != kNumToothClasses || p.embedding.cols() != kPromptDim) {
    throw Error(ErrorCode::UnknownLabel, "embedding table does not cover the permanent teeth");
  }
  const int k = c + kPromptDim;
  FusionCache fc;
  fc.label_row = label.class_index();
  fc.emb = opts.use_prompt ? VectorXd(p.embedding.row(fc.label_row).transpose())
                           : VectorXd(VectorXd::Zero(kPromptDim));
  fc.pool.resize(k);
  fc.pool << pooled, fc.emb;
  fc.gate.resize(k);
  for (int ch = 0; ch < k; ++ch) {
    double z = 0.0;
    for (int t = 0; t < kEcaKernel; ++t) {
      const int src = ch + t - kEcaKernel / 2;
      if (src >= 0 && src < k) z += p.eca(0, t) * fc.pool[src];
    }
    fc.gate[ch] = opts.force_unit_gate ? 1.0 : sigmoid(z);
  }
  fc.a = p.proj_w.leftCols(c) * fc.gate.head(c).asDiagonal();
  const VectorXd shift =
      p.proj_w.rightCols(kPromptDim) * fc.gate.tail(kPromptDim).cwiseProduct(fc.emb) +
      p.proj_b.col(0);
  MatrixXd out = (rows * fc.a.transpose()).rowwise() + shift.transpose();
  if (cache) *cache = std::move(fc);
  return out;
}

void fusion_backward(const MatrixXd& rows, const MatrixXd& d_out, const RefinerParams& p,
                     const FusionOptions& opts, const FusionCache& fc, RefinerParams& g) {
  const int c = p.channels();
  const int k = c + kPromptDim;
  const MatrixXd da = d_out.transpose() * rows;
  g.proj_w.leftCols(c) += da * fc.gate.head(c).asDiagonal();
  VectorXd d_gate(k);
  d_gate.head(c) = da.cwiseProduct(p.proj_w.leftCols(c)).colwise().sum().transpose();
  const VectorXd d_shift = d_out.colwise().sum().transpose();
  g.proj_b.col(0) += d_shift;
  const VectorXd gated_emb = fc.gate.tail(kPromptDim).cwiseProduct(fc.emb);
  g.proj_w.rightCols(kPromptDim) += d_shift * gated_emb.transpose();
  const VectorXd d_gated = p.proj_w.rightCols(kPromptDim).transpose() * d_shift;
  d_gate.tail(kPromptDim) = d_gated.cwiseProduct(fc.emb);
  VectorXd d_emb = d_gated.cwiseProduct(fc.gate.tail(kPromptDim));
  if (!opts.force_unit_gate) {
    VectorXd d_pool = VectorXd::Zero(k);
    for (int ch = 0; ch < k; ++ch) {
      const double dz = d_gate[ch] * fc.gate[ch] * (1.0 - fc.gate[ch]);
      for (int t = 0; t < kEcaKernel; ++t) {
        const int src = ch + t - kEcaKernel / 2;
        if (src < 0 || src >= k) continue;
        g.eca(0, t) += dz * fc.pool[src];
        d_pool[src] += dz * p.eca(0, t);
      }
    }
    d_emb += d_pool.tail(kPromptDim);
  }
  if (opts.use_prompt) g.embedding.row(fc.label_row) += d_emb.transpose();
}

struct NormalizeResult {
  std::vector<Vec3> unit;
  std::vector<double> length;
};

NormalizeResult normalize_rows(const MatrixXd& raw) {
  NormalizeResult r;
  r.unit.resize(raw.rows());
  r.length.resize(raw.rows());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const Vec3 v = raw.row(i).transpose();
    const double n = v.norm();
    r.length[i] = n;
    r.unit[i] = n > 1e-12 ? Vec3(v / n) : Vec3(0, 0, 1);
  }
  return r;
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::NonFiniteLoss, std::string("loss term '") + term + "' is not finite");
  }
}

void zero(MatrixXd& m) { m.setZero(); }

}  // namespace

// --- parameters --------------------------------------------------------------

RefinerParams init_refiner(int channels, std::uint64_t seed) {
  if (channels <= 0) throw Error(ErrorCode::InvalidArgument, "refiner needs at least one channel");
  std::mt19937_64 rng(seed);
  RefinerParams p;
  std::normal_distribution<double> nrm(0.0, 1.0);
  p.embedding.resize(kNumToothClasses, kPromptDim);
  for (Eigen::Index i = 0; i < p.embedding.size(); ++i) p.embedding.data()[i] = nrm(rng);
  p.eca = uniform(rng, 1, kEcaKernel, 1.0 / std::sqrt(double(kEcaKernel)));
  p.proj_w = MatrixXd::Zero(channels, channels + kPromptDim);
  p.proj_w.leftCols(channels).setIdentity();
  p.proj_w.rightCols(kPromptDim) = uniform(rng, channels, kPromptDim, 0.01);
  p.proj_b = MatrixXd::Zero(channels, 1);
  p.offset_head = init_mlp(rng, channels, true);
  p.normal_head = init_mlp(rng, channels, false);
  return p;
}

std::vector<NamedTensor> model_tensors(Model& model) {
  std::vector<NamedTensor> t;
  auto& r = model.refiner;
  t.push_back({"refiner.embedding", &r.embedding});
  t.push_back({"refiner.eca", &r.eca});
  t.push_back({"refiner.proj_w", &r.proj_w});
  t.push_back({"refiner.proj_b", &r.proj_b});
  for (auto [name, head] : {std::pair{"offset_head", &r.offset_head}, std::pair{"normal_head", &r.normal_head}}) {
    const std::string pre = std::string("refiner.") + name + ".";
    t.push_back({pre + "w1", &head->w1});
    t.push_back({pre + "b1", &head->b1});
    t.push_back({pre + "w2", &head->w2});
    t.push_back({pre + "b2", &head->b2});
    t.push_back({pre + "w3", &head->w3});
    t.push_back({pre + "b3", &head->b3});
  }
  if (model.predictor) {
    auto& c = *model.predictor;
    t.push_back({"predictor.w1", &c.w1});
    t.push_back({"predictor.b1", &c.b1});
    t.push_back({"predictor.w2", &c.w2});
    t.push_back({"predictor.b2", &c.b2});
  }
  return t;
}

Model zeros_like(const Model& model) {
  Model z = model;
  for (auto& t : model_tensors(z)) zero(*t.value);
  return z;
}

// --- fusion and heads --------------------------------------------------------

Eigen::MatrixXd fuse_rows(const Eigen::MatrixXd& rows, const Eigen::VectorXd& pooled,
                          const FdiLabel& label, const RefinerParams& params,
                          const FusionOptions& opts) {
  return fusion_forward(rows, pooled, label, params, opts, nullptr);
}

FeatureVolume fuse_tp_prompt(const FeatureVolume& bottleneck, const FdiLabel& label,
                             const RefinerParams& params, const FusionOptions& opts) {
  bottleneck.validate();
  const std::size_t nv = bottleneck.spec.voxel_count();
  MatrixXd rows(static_cast<Eigen::Index>(nv), bottleneck.channels);
  for (int c = 0; c < bottleneck.channels; ++c) {
    rows.col(c) = Eigen::Map<const VectorXd>(bottleneck.channel(c), static_cast<Eigen::Index>(nv));
  }
  const MatrixXd fused = fuse_rows(rows, channel_mean(bottleneck), label, params, opts);
  FeatureVolume out(params.channels(), bottleneck.spec);
  for (int c = 0; c < out.channels; ++c) {
    Eigen::Map<VectorXd>(out.channel(c), static_cast<Eigen::Index>(nv)) = fused.col(c);
  }
  return out;
}

PointCloud refine(const PointCloud& coarse, const Eigen::MatrixXd& e, const RefinerParams& params) {
  if (static_cast<std::size_t>(e.rows()) != coarse.size() || e.cols() != params.channels()) {
    throw Error(ErrorCode::ShapeMismatch, "embedding rows do not align with the coarse points");
  }
  if (coarse.empty()) throw Error(ErrorCode::EmptyCloud, "refine on an empty point cloud");
  const MlpCache off = mlp_forward(params.offset_head, e);
  const MlpCache nrm = mlp_forward(params.normal_head, e);
  PointCloud out;
  out.points.resize(coarse.size());
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    out.points[i] = coarse.points[i] + off.out.row(static_cast<Eigen::Index>(i)).transpose();
  }
  out.normals = normalize_rows(nrm.out).unit;
  return out;
}

// --- losses and training -----------------------------------------------------

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::cmpl: return "cmpl";
    case LossKind::cpl: return "cpl";
    case LossKind::chamfer: return "chamfer";
  }
  return "unknown";
}

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "cmpl") return LossKind::cmpl;
  if (s == "cpl") return LossKind::cpl;
  if (s == "chamfer") return LossKind::chamfer;
  throw Error(ErrorCode::Config, "unknown loss '" + std::string(s) + "' (cmpl, cpl, chamfer)");
}

CmplWeights loss_weights(const PointCloud& pred, const RefineSample& sample, const TrainConfig& cfg) {
  const std::size_t np = pred.size(), nq = sample.gt.size();
  if (cfg.loss == LossKind::chamfer) {
    return {std::vector<double>(np, 1.0), std::vector<double>(nq, 1.0)};
  }
  if (sample.gt_kappa.size() != nq || sample.gt_margin.size() != nq) {
    throw Error(ErrorCode::WeightLengthMismatch, "ground-truth curvature or margin size mismatch");
  }
  std::vector<double> kp(np, 0.0);
  if (np >= static_cast<std::size_t>(cfg.curvature_k) + 1) {
    kp = estimate_curvature(pred, cfg.curvature_k, cfg.kappa_max).kappa;
  }
  std::vector<std::uint8_t> mp(np, 0), mq(nq, 0);
  if (cfg.loss == LossKind::cmpl) {
    mp = margin_membership(pred, sample.gt, sample.gt_margin);
    mq = sample.gt_margin;
  }
  return make_cmpl_weights(kp, mp, sample.gt_kappa, mq);
}

LossBreakdown refiner_loss(const RefineSample& sample, const RefinerParams& params,
                           const TrainConfig& cfg, RefinerParams* grad,
                           const FrozenTargets* frozen, FrozenTargets* used) {
  if (static_cast<std::size_t>(sample.features.rows()) != sample.coarse.size()) {
    throw Error(ErrorCode::ShapeMismatch, "feature rows do not align with the coarse points");
  }
  if (sample.coarse.empty()) throw Error(ErrorCode::EmptyCloud, "sample has no coarse points");
  const FusionOptions opts{cfg.use_tp_prompt, false};
  FusionCache fc;
  const MatrixXd e = fusion_forward(sample.features, sample.pooled, sample.label, params, opts, &fc);
  const MlpCache off = mlp_forward(params.offset_head, e);
  const MlpCache nrm = mlp_forward(params.normal_head, e);
  const NormalizeResult unit = normalize_rows(nrm.out);

  PointCloud pred;
  pred.points.resize(sample.coarse.size());
  for (std::size_t i = 0; i < pred.points.size(); ++i) {
    pred.points[i] = sample.coarse.points[i] + off.out.row(static_cast<Eigen::Index>(i)).transpose();
  }
  pred.normals = unit.unit;

  FrozenTargets targets;
  if (frozen) {
    targets = *frozen;
  } else {
    targets.match = match_clouds(pred, sample.gt);
    targets.weights = loss_weights(pred, sample, cfg);
  }
  const PointLoss cm = cmpl_frozen(pred, sample.gt, targets.weights, targets.match);
  const PointLoss nl = normals_loss_matched(pred, sample.gt, targets.match.pred_to_gt);

  LossBreakdown lb;
  lb.bce = sample.coarse_bce;
  lb.cmpl = cm.value;
  lb.normals = nl.value;
  check_finite(lb.cmpl, "cmpl");
  check_finite(lb.normals, "normals");
  lb.total = total_loss(lb.bce, lb.cmpl, lb.normals, 2);
  if (used) *used = std::move(targets);
  if (!grad) return lb;

  const auto n = static_cast<Eigen::Index>(pred.size());
  MatrixXd d_off(n, 3), d_nrm(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    d_off.row(i) = cm.grad[i].transpose();
    const Vec3& u = unit.unit[i];
    const Vec3& dn = nl.grad[i];
    const double len = unit.length[i];
    const Vec3 d = len > 1e-12 ? Vec3((dn - u * u.dot(dn)) / len) : Vec3::Zero();
    d_nrm.row(i) = d.transpose();
  }
  MatrixXd d_e = mlp_backward(params.offset_head, e, off, d_off, grad->offset_head);
  d_e += mlp_backward(params.normal_head, e, nrm, d_nrm, grad->normal_head);
  fusion_backward(sample.features, d_e, params, opts, fc, *grad);
  return lb;
}

RefineSample make_refine_sample(const VoxelVolume& coarse_occupancy, const PointCloud& gt,
                                std::vector<std::uint8_t> gt_margin, const FdiLabel& label,
                                const TrainConfig& cfg) {
  if (!gt.has_normals()) throw Error(ErrorCode::NormalsMissing, "ground truth needs normals");
  if (gt_margin.size() != gt.size()) {
    throw Error(ErrorCode::WeightLengthMismatch, "margin mask does not match ground truth size");
  }
  RefineSample s;
  s.coarse = devoxelize(coarse_occupancy);
  const OccupancyDescriptors desc(coarse_occupancy);
  s.features = desc.rows(occupied_indices(coarse_occupancy));
  s.pooled = desc.channel_mean();
  s.label = label;
  s.gt = gt;
  s.gt_kappa = estimate_curvature(gt, cfg.curvature_k, cfg.kappa_max).kappa;
  s.gt_margin = std::move(gt_margin);
  return s;
}

AdamWState init_adamw(const Model& model) {
  AdamWState s;
  s.m = zeros_like(model);
  s.v = zeros_like(model);
  return s;
}

LossBreakdown train_step(const std::vector<RefineSample>& batch, Model& model, AdamWState& opt,
                         int stage, const TrainConfig& cfg) {
  if (stage != 1 && stage != 2) throw Error(ErrorCode::InvalidArgument, "training stage must be 1 or 2");
  if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "empty training batch");
  Model grad = zeros_like(model);
  LossBreakdown mean;
  bool predictor_trained = false;
  for (const RefineSample& s : batch) {
    LossBreakdown lb;
    if (model.predictor && s.ios_occupancy && s.gt_occupancy) {
      lb.bce = conv_bce(*model.predictor, *s.ios_occupancy, *s.gt_occupancy, &*grad.predictor);
      predictor_trained = true;
    } else {
      lb.bce = s.coarse_bce;
    }
    check_finite(lb.bce, "bce");
    if (stage == 2) {
      const LossBreakdown r = refiner_loss(s, model.refiner, cfg, &grad.refiner);
      lb.cmpl = r.cmpl;
      lb.normals = r.normals;
    }
    lb.total = total_loss(lb.bce, lb.cmpl, lb.normals, stage);
    check_finite(lb.total, "total");
    mean.bce += lb.bce;
    mean.cmpl += lb.cmpl;
    mean.normals += lb.normals;
    mean.total += lb.total;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.bce *= inv;
  mean.cmpl *= inv;
  mean.normals *= inv;
  mean.total *= inv;

  auto params = model_tensors(model);
  auto grads = model_tensors(grad);
  auto ms = model_tensors(opt.m);
  auto vs = model_tensors(opt.v);
  if (ms.size() != params.size() || vs.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the model");
  }
  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    const bool is_predictor = params[t].name.rfind("predictor.", 0) == 0;
    if (is_predictor ? !predictor_trained : stage == 1) continue;
    MatrixXd& p = *params[t].value;
    const MatrixXd g = *grads[t].value * inv;
    MatrixXd& m = *ms[t].value;
    MatrixXd& v = *vs[t].value;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    p *= 1.0 - cfg.learning_rate * cfg.weight_decay;
    p.array() -= cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
  return mean;
}

}  // namespace crowngen
