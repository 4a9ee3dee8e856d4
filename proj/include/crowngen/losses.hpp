// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "crowngen/geometry.hpp"

namespace crowngen {

// --- training losses -------------------------------------------------------

struct BceResult {
  double loss = 0.0;
  VoxelVolume grad;  // dL/dlogit per voxel (already divided by voxel count)
};

/// Mean binary cross-entropy between logits and a binary target, in the
/// log-sum-exp form max(l,0) - l*t + log1p(exp(-|l|)).
BceResult bce_loss(const VoxelVolume& logits, const VoxelVolume& target);

/// Per-point weights for the curvature/margin penalty:
/// w(x) = exp(|kappa(x)|) + [x on the margin line].
struct CmplWeights {
  std::vector<double> pred_weights;
  std::vector<double> gt_weights;
};

CmplWeights make_cmpl_weights(const std::vector<double>& pred_kappa,
                              const std::vector<std::uint8_t>& pred_margin,
                              const std::vector<double>& gt_kappa,
                              const std::vector<std::uint8_t>& gt_margin);

/// Nearest-neighbour correspondences in both directions (ties to the
/// lowest index).
struct Correspondences {
  std::vector<std::size_t> pred_to_gt;
  std::vector<std::size_t> gt_to_pred;
};

Correspondences match_clouds(const PointCloud& pred, const PointCloud& gt);

struct PointLoss {
  double value = 0.0;
  std::vector<Vec3> grad;  // per predicted point (positions or normals)
};

/// Weighted two-sided mean of unsquared nearest-neighbour distances:
///   1/|P| sum_p w(p) min_q |p-q| + 1/|Q| sum_q w(q) min_p |p-q|.
/// The gradient is taken with the correspondences and weights frozen.
PointLoss cmpl(const PointCloud& pred, const PointCloud& gt, const CmplWeights& weights);

/// Same loss evaluated on caller-supplied correspondences.
PointLoss cmpl_frozen(const PointCloud& pred, const PointCloud& gt,
                      const CmplWeights& weights, const Correspondences& match);

/// Mean over predicted points and components of (n_pred - n_target)^2,
/// where the target is the normal of the nearest ground-truth point.
/// Gradient is with respect to the predicted normals.
PointLoss normals_loss(const PointCloud& pred, const PointCloud& gt);

/// normals_loss with the nearest ground-truth index of each predicted point
/// supplied by the caller.
PointLoss normals_loss_matched(const PointCloud& pred, const PointCloud& gt,
                               const std::vector<std::size_t>& pred_to_gt);

/// Stage 1 uses BCE alone; stage 2 sums all three terms with unit weights.
double total_loss(double bce, double cmpl_value, double normals, int stage);

// --- evaluation metrics ----------------------------------------------------

/// 1/|P| sum min |p-q|^2 + 1/|Q| sum min |p-q|^2, in mm^2.
double chamfer_l2(const PointCloud& pred, const PointCloud& gt);

enum class FidelityDirection { pred_to_gt, gt_to_pred };

/// Mean nearest-neighbour distance (mm) from one cloud to the other.
double fidelity(const PointCloud& pred, const PointCloud& gt,
                FidelityDirection dir = FidelityDirection::pred_to_gt);

/// Harmonic mean of precision (pred within tau of gt) and recall (gt
/// within tau of pred); 0 when both are 0.
double f_score(const PointCloud& pred, const PointCloud& gt, double tau);

/// Predicted points whose nearest ground-truth point is a margin point.
std::vector<std::uint8_t> margin_membership(const PointCloud& pred, const PointCloud& gt,
                                            const std::vector<std::uint8_t>& gt_margin);

/// Mean distance from the predicted margin points (see margin_membership)
/// to the ground-truth margin set. 0 when no predicted point qualifies.
double margin_distance(const PointCloud& pred, const PointCloud& gt,
                       const std::vector<std::uint8_t>& gt_margin);

inline constexpr double kDefaultFScoreTau = 0.3;

struct MetricReport {
  double cd_l2_mm2 = 0.0;
  double fidelity_mm = 0.0;
  double f_score = 0.0;
  double tau_mm = kDefaultFScoreTau;
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;
};

MetricReport evaluate_metrics(const PointCloud& pred, const PointCloud& gt,
                              double tau = kDefaultFScoreTau,
                              FidelityDirection dir = FidelityDirection::pred_to_gt);

nlohmann::ordered_json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);
std::string metric_csv_header();
std::string to_csv_row(const MetricReport& r);

}  // namespace crowngen
