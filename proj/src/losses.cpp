// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/losses.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "crowngen/error.hpp"
#include "crowngen/kdtree.hpp"

namespace crowngen {

namespace {

void require_nonempty(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyCloud, "loss on an empty point cloud");
}

std::vector<Neighbor> nearest_in(const PointCloud& target, const PointCloud& queries) {
  const KdTree tree(target.points);
  return tree.nearest_all(queries.points);
}

}  // namespace

BceResult bce_loss(const VoxelVolume& logits, const VoxelVolume& target) {
  if (logits.spec.dims != target.spec.dims || logits.data.size() != target.data.size()) {
    throw Error(ErrorCode::ShapeMismatch, "logits and target grids differ");
  }
  const auto n = static_cast<double>(logits.data.size());
  BceResult out;
  out.grad = VoxelVolume(logits.spec, VolumeKind::logits);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double l = logits.data[i];
    const double t = target.data[i];
    sum += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
    const double sig = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
    out.grad.data[i] = (sig - t) / n;
  }
  out.loss = sum / n;
  return out;
}

CmplWeights make_cmpl_weights(const std::vector<double>& pred_kappa,
                              const std::vector<std::uint8_t>& pred_margin,
                              const std::vector<double>& gt_kappa,
                              const std::vector<std::uint8_t>& gt_margin) {
  if (pred_kappa.size() != pred_margin.size() || gt_kappa.size() != gt_margin.size()) {
    throw Error(ErrorCode::WeightLengthMismatch, "curvature and margin vectors differ in length");
  }
  CmplWeights w;
  w.pred_weights.resize(pred_kappa.size());
  w.gt_weights.resize(gt_kappa.size());
  for (std::size_t i = 0; i < pred_kappa.size(); ++i) {
    w.pred_weights[i] = std::exp(std::abs(pred_kappa[i])) + (pred_margin[i] ? 1.0 : 0.0);
  }
  for (std::size_t i = 0; i < gt_kappa.size(); ++i) {
    w.gt_weights[i] = std::exp(std::abs(gt_kappa[i])) + (gt_margin[i] ? 1.0 : 0.0);
  }
  return w;
}

Correspondences match_clouds(const PointCloud& pred, const PointCloud& gt) {
  require_nonempty(pred, gt);
  Correspondences m;
  for (const Neighbor& n : nearest_in(gt, pred)) m.pred_to_gt.push_back(n.index);
  for (const Neighbor& n : nearest_in(pred, gt)) m.gt_to_pred.push_back(n.index);
  return m;
}

PointLoss cmpl_frozen(const PointCloud& pred, const PointCloud& gt,
                      const CmplWeights& weights, const Correspondences& match) {
  require_nonempty(pred, gt);
  if (weights.pred_weights.size() != pred.size() || weights.gt_weights.size() != gt.size()) {
    throw Error(ErrorCode::WeightLengthMismatch, "CMPL weights do not match cloud sizes");
  }
  if (match.pred_to_gt.size() != pred.size() || match.gt_to_pred.size() != gt.size()) {
    throw Error(ErrorCode::ShapeMismatch, "correspondences do not match cloud sizes");
  }
  const double inv_p = 1.0 / static_cast<double>(pred.size());
  const double inv_q = 1.0 / static_cast<double>(gt.size());
  PointLoss out;
  out.grad.assign(pred.size(), Vec3::Zero());
  double sum_p = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3 d = pred.points[i] - gt.points[match.pred_to_gt[i]];
    const double dist = std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
    sum_p += weights.pred_weights[i] * dist;
    if (dist > 0.0) out.grad[i] += (inv_p * weights.pred_weights[i] / dist) * d;
  }
  double sum_q = 0.0;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const std::size_t i = match.gt_to_pred[j];
    const Vec3 d = pred.points[i] - gt.points[j];
    const double dist = std::sqrt(d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
    sum_q += weights.gt_weights[j] * dist;
    if (dist > 0.0) out.grad[i] += (inv_q * weights.gt_weights[j] / dist) * d;
  }
  out.value = sum_p * inv_p + sum_q * inv_q;
  return out;
}

PointLoss cmpl(const PointCloud& pred, const PointCloud& gt, const CmplWeights& weights) {
  require_nonempty(pred, gt);
  if (weights.pred_weights.size() != pred.size() || weights.gt_weights.size() != gt.size()) {
    throw Error(ErrorCode::WeightLengthMismatch, "CMPL weights do not match cloud sizes");
  }
  return cmpl_frozen(pred, gt, weights, match_clouds(pred, gt));
}

PointLoss normals_loss(const PointCloud& pred, const PointCloud& gt) {
  if (!pred.has_normals() || !gt.has_normals()) {
    throw Error(ErrorCode::NormalsMissing, "normals loss needs normals on both clouds");
  }
  require_nonempty(pred, gt);
  std::vector<std::size_t> match;
  for (const Neighbor& n : nearest_in(gt, pred)) match.push_back(n.index);
  return normals_loss_matched(pred, gt, match);
}

PointLoss normals_loss_matched(const PointCloud& pred, const PointCloud& gt,
                               const std::vector<std::size_t>& pred_to_gt) {
  if (!pred.has_normals() || !gt.has_normals()) {
    throw Error(ErrorCode::NormalsMissing, "normals loss needs normals on both clouds");
  }
  require_nonempty(pred, gt);
  if (pred_to_gt.size() != pred.size()) {
    throw Error(ErrorCode::ShapeMismatch, "correspondences do not match cloud size");
  }
  const double scale = 1.0 / (3.0 * static_cast<double>(pred.size()));
  PointLoss out;
  out.grad.resize(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3 diff = (*pred.normals)[i] - (*gt.normals)[pred_to_gt[i]];
    sum += diff.x() * diff.x() + diff.y() * diff.y() + diff.z() * diff.z();
    out.grad[i] = 2.0 * scale * diff;
  }
  out.value = sum * scale;
  return out;
}

double total_loss(double bce, double cmpl_value, double normals, int stage) {
  if (stage == 1) return bce;
  if (stage == 2) return bce + cmpl_value + normals;
  throw Error(ErrorCode::InvalidArgument, "training stage must be 1 or 2");
}

double chamfer_l2(const PointCloud& pred, const PointCloud& gt) {
  require_nonempty(pred, gt);
  double a = 0.0, b = 0.0;
  for (const Neighbor& n : nearest_in(gt, pred)) a += n.dist2;
  for (const Neighbor& n : nearest_in(pred, gt)) b += n.dist2;
  return a / static_cast<double>(pred.size()) + b / static_cast<double>(gt.size());
}

double fidelity(const PointCloud& pred, const PointCloud& gt, FidelityDirection dir) {
  require_nonempty(pred, gt);
  const PointCloud& from = dir == FidelityDirection::pred_to_gt ? pred : gt;
  const PointCloud& to = dir == FidelityDirection::pred_to_gt ? gt : pred;
  double sum = 0.0;
  for (const Neighbor& n : nearest_in(to, from)) sum += std::sqrt(n.dist2);
  return sum / static_cast<double>(from.size());
}

double f_score(const PointCloud& pred, const PointCloud& gt, double tau) {
  require_nonempty(pred, gt);
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "F-score threshold must be positive");
  const double tau2 = tau * tau;
  std::size_t hit_p = 0, hit_q = 0;
  for (const Neighbor& n : nearest_in(gt, pred)) hit_p += n.dist2 <= tau2;
  for (const Neighbor& n : nearest_in(pred, gt)) hit_q += n.dist2 <= tau2;
  const double precision = static_cast<double>(hit_p) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(hit_q) / static_cast<double>(gt.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<std::uint8_t> margin_membership(const PointCloud& pred, const PointCloud& gt,
                                            const std::vector<std::uint8_t>& gt_margin) {
  require_nonempty(pred, gt);
  if (gt_margin.size() != gt.size()) {
    throw Error(ErrorCode::WeightLengthMismatch, "margin mask does not match ground truth size");
  }
  std::vector<std::uint8_t> out(pred.size());
  const auto nn = nearest_in(gt, pred);
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = gt_margin[nn[i].index];
  return out;
}

double margin_distance(const PointCloud& pred, const PointCloud& gt,
                       const std::vector<std::uint8_t>& gt_margin) {
  const auto member = margin_membership(pred, gt, gt_margin);
  PointCloud margin;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    if (gt_margin[j]) margin.points.push_back(gt.points[j]);
  }
  if (margin.empty()) return 0.0;
  const KdTree tree(margin.points);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!member[i]) continue;
    sum += std::sqrt(tree.nearest(pred.points[i]).dist2);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

MetricReport evaluate_metrics(const PointCloud& pred, const PointCloud& gt, double tau,
                              FidelityDirection dir) {
  MetricReport r;
  r.cd_l2_mm2 = chamfer_l2(pred, gt);
  r.fidelity_mm = fidelity(pred, gt, dir);
  r.f_score = f_score(pred, gt, tau);
  r.tau_mm = tau;
  r.n_pred = pred.size();
  r.n_gt = gt.size();
  return r;
}

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["cd_l2_mm2"] = r.cd_l2_mm2;
  j["fidelity_mm"] = r.fidelity_mm;
  j["f_score"] = r.f_score;
  j["tau_mm"] = r.tau_mm;
  j["n_pred"] = r.n_pred;
  j["n_gt"] = r.n_gt;
  return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.cd_l2_mm2 = j.at("cd_l2_mm2").get<double>();
  r.fidelity_mm = j.at("fidelity_mm").get<double>();
  r.f_score = j.at("f_score").get<double>();
  r.tau_mm = j.at("tau_mm").get<double>();
  r.n_pred = j.at("n_pred").get<std::size_t>();
  r.n_gt = j.at("n_gt").get<std::size_t>();
  return r;
}

std::string metric_csv_header() { return "cd_l2_mm2,fidelity_mm,f_score,tau_mm,n_pred,n_gt"; }

std::string to_csv_row(const MetricReport& r) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << r.cd_l2_mm2 << ','
      << r.fidelity_mm << ',' << r.f_score << ',' << r.tau_mm << ',' << r.n_pred << ','
      << r.n_gt;
  return out.str();
}

}  // namespace crowngen
