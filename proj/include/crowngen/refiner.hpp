// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

// Coarse prediction and point refinement.
//
// The coarse stage is a pluggable contract: given the scan occupancy it
// produces voxel logits and a per-voxel feature volume. Two implementations
// ship here: an oracle that perturbs the ground-truth occupancy and
// describes it with local occupancy statistics, and a small trainable
// convolutional stand-in.
//
// The refinement stage fuses a learned tooth-position embedding into the
// features with channel attention, gathers one feature row per occupied
// coarse voxel, and regresses per-point offsets and normals with two MLPs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "crowngen/geometry.hpp"
#include "crowngen/losses.hpp"

namespace crowngen {

// --- tooth labels ------------------------------------------------------------

enum class ToothType { incisor, canine, premolar, molar };

std::string_view to_string(ToothType type);

inline constexpr int kNumToothClasses = 32;

/// Permanent-dentition FDI code: quadrant 1..4, position 1..8.
struct FdiLabel {
  int quadrant = 1;
  int position = 1;

  /// Two-digit code, e.g. 36 -> quadrant 3, position 6. Throws UnknownLabel.
  static FdiLabel from_code(int code);
  static FdiLabel from_class_index(int index);

  int code() const noexcept { return quadrant * 10 + position; }
  int class_index() const noexcept { return (quadrant - 1) * 8 + (position - 1); }
  ToothType type() const;
  void validate() const;

  friend bool operator==(const FdiLabel&, const FdiLabel&) = default;
};

// --- feature volumes ---------------------------------------------------------

/// Dense C x D x H x W grid, channel-major: data[c * voxel_count + flat].
struct FeatureVolume {
  int channels = 0;
  GridSpec spec;
  std::vector<double> data;

  FeatureVolume() = default;
  FeatureVolume(int channels, GridSpec spec, double fill = 0.0);

  double& at(int c, std::size_t flat) { return data[c * spec.voxel_count() + flat]; }
  double at(int c, std::size_t flat) const { return data[c * spec.voxel_count() + flat]; }
  double* channel(int c) { return data.data() + c * spec.voxel_count(); }
  const double* channel(int c) const { return data.data() + c * spec.voxel_count(); }

  void validate() const;
};

/// Per-channel mean over every voxel (the global average pool).
Eigen::VectorXd channel_mean(const FeatureVolume& f);

/// One row per occupied voxel of `mask`, in devoxelize order.
Eigen::MatrixXd gather_features(const FeatureVolume& f, const VoxelVolume& mask);

// --- coarse predictors -------------------------------------------------------

inline constexpr int kCoarseChannels = 16;
inline constexpr double kOracleLogit = 5.0;

struct CoarseNoise {
  int dilate_r = 0;
  int erode_r = 0;
  double flip_prob = 0.0;
};

struct CoarseOutput {
  VoxelVolume logits;
  FeatureVolume features;
};

/// Ball dilation, then ball erosion, then independent flips restricted to
/// the band of voxels whose 3x3x3 neighbourhood is mixed.
VoxelVolume perturb_occupancy(const VoxelVolume& occupancy, const CoarseNoise& noise,
                              std::uint64_t seed);

/// Local occupancy statistics, evaluated from 3-d prefix sums. Channels:
///   0      occupancy
///   1-3    centroid offset of the 3^3 window (voxels)
///   4-6    centroid offset of the 7^3 window (voxels)
///   7-9    fill fraction of the 3^3, 5^3, 7^3 windows
///   10-12  central-difference gradient of the 5^3 fill fraction
///   13-15  unit direction from the centroid of all occupied voxels
/// Every channel is zero where the 7^3 window is empty.
class OccupancyDescriptors {
 public:
  explicit OccupancyDescriptors(const VoxelVolume& occupancy);

  void evaluate(const Index3& idx, double* out) const;
  FeatureVolume dense() const;
  Eigen::MatrixXd rows(const std::vector<Index3>& indices) const;
  /// Equals channel_mean(dense()) without materialising the volume.
  Eigen::VectorXd channel_mean() const;

 private:
  struct Window {
    double count;
    Vec3 sum;
  };
  Window window(const Index3& c, int r) const;
  double fill(const Index3& c, int r) const;
  std::int64_t prefix(int plane, int i, int j, int k) const;

  GridSpec spec_;
  std::vector<std::int64_t> prefix_;  // 4 planes of (D+1)(H+1)(W+1): count, sum i, sum j, sum k
  Vec3 centroid_ = Vec3::Zero();
  std::vector<std::uint8_t> occ_;
};

/// logits = +alpha on the perturbed occupancy, -alpha elsewhere; features
/// are the occupancy descriptors of the perturbed set.
CoarseOutput oracle_coarse(const VoxelVolume& v_gt, const CoarseNoise& noise,
                           std::uint64_t seed);

/// Two 3x3x3 "same" convolutions: 1 -> 16 with SiLU, then 16 -> 17 where
/// channels 0-15 are features and channel 16 is the logit.
struct ConvPredictorParams {
  Eigen::MatrixXd w1;  // 16 x 27
  Eigen::MatrixXd b1;  // 16 x 1
  Eigen::MatrixXd w2;  // 17 x (16 * 27)
  Eigen::MatrixXd b2;  // 17 x 1
};

ConvPredictorParams init_conv_predictor(std::uint64_t seed);

CoarseOutput conv_predict(const ConvPredictorParams& params, const VoxelVolume& v_ios);

/// BCE of the stand-in's logits against `target`; accumulates into `grad`
/// when non-null.
double conv_bce(const ConvPredictorParams& params, const VoxelVolume& v_ios,
                const VoxelVolume& target, ConvPredictorParams* grad);

// --- refiner -----------------------------------------------------------------

inline constexpr int kPromptDim = 128;
inline constexpr int kHeadHidden = 64;
inline constexpr int kEcaKernel = 3;

/// C -> 64 -> 64 -> 3 with SiLU after the hidden layers.
struct Mlp {
  Eigen::MatrixXd w1, b1, w2, b2, w3, b3;
};

struct RefinerParams {
  Eigen::MatrixXd embedding;  // 32 x 128
  Eigen::MatrixXd eca;        // 1 x 3
  Eigen::MatrixXd proj_w;     // C x (C + 128)
  Eigen::MatrixXd proj_b;     // C x 1
  Mlp offset_head;
  Mlp normal_head;

  int channels() const { return static_cast<int>(proj_b.rows()); }
};

/// Offset head's last layer starts at zero so refinement is the identity.
RefinerParams init_refiner(int channels, std::uint64_t seed);

struct FusionOptions {
  bool use_prompt = true;        // false feeds a zero embedding
  bool force_unit_gate = false;  // bypass the attention gate
};

FeatureVolume fuse_tp_prompt(const FeatureVolume& bottleneck, const FdiLabel& label,
                             const RefinerParams& params, const FusionOptions& opts = {});

/// fuse_tp_prompt applied to gathered rows; `pooled` is the channel mean of
/// the full feature volume.
Eigen::MatrixXd fuse_rows(const Eigen::MatrixXd& rows, const Eigen::VectorXd& pooled,
                          const FdiLabel& label, const RefinerParams& params,
                          const FusionOptions& opts = {});

/// P + MLP1(e) and normalize(MLP2(e)).
PointCloud refine(const PointCloud& coarse, const Eigen::MatrixXd& e, const RefinerParams& params);

// --- training ----------------------------------------------------------------

struct Model {
  RefinerParams refiner;
  std::optional<ConvPredictorParams> predictor;
};

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd* value;
};

/// Stable, documented order; used by the optimizer and checkpoints.
std::vector<NamedTensor> model_tensors(Model& model);
Model zeros_like(const Model& model);

enum class LossKind { cmpl, cpl, chamfer };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view s);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  LossKind loss = LossKind::cmpl;
  bool use_tp_prompt = true;
  int curvature_k = 16;
  double kappa_max = 3.0;
};

/// One refinement training example. Feature rows align with `coarse`.
struct RefineSample {
  PointCloud coarse;
  Eigen::MatrixXd features;
  Eigen::VectorXd pooled;
  FdiLabel label;
  PointCloud gt;  // with normals
  std::vector<double> gt_kappa;
  std::vector<std::uint8_t> gt_margin;
  double coarse_bce = 0.0;  // BCE of a fixed coarse prediction
  // Occupancy pair for training the trainable predictor (stage 1).
  std::optional<VoxelVolume> ios_occupancy;
  std::optional<VoxelVolume> gt_occupancy;
};

/// Sample whose coarse points are the centres of `coarse_occupancy` and
/// whose features are its occupancy descriptors. Ground-truth curvature
/// is estimated with cfg.curvature_k neighbours.
RefineSample make_refine_sample(const VoxelVolume& coarse_occupancy, const PointCloud& gt,
                                std::vector<std::uint8_t> gt_margin, const FdiLabel& label,
                                const TrainConfig& cfg);

struct LossBreakdown {
  double bce = 0.0;
  double cmpl = 0.0;
  double normals = 0.0;
  double total = 0.0;
};

/// Correspondences and weights held fixed during differentiation.
struct FrozenTargets {
  Correspondences match;
  CmplWeights weights;
};

CmplWeights loss_weights(const PointCloud& pred, const RefineSample& sample, const TrainConfig& cfg);

/// Stage-2 point losses of one sample and, when `grad` is non-null, their
/// gradient with respect to the refiner parameters (accumulated). When
/// `frozen` is given its targets are used instead of fresh ones; `used`
/// receives the targets of this evaluation.
LossBreakdown refiner_loss(const RefineSample& sample, const RefinerParams& params,
                           const TrainConfig& cfg, RefinerParams* grad,
                           const FrozenTargets* frozen = nullptr, FrozenTargets* used = nullptr);

struct AdamWState {
  long step = 0;
  Model m;
  Model v;
};

AdamWState init_adamw(const Model& model);

/// One optimizer update on the batch mean of the stage's loss. Throws
/// NonFiniteLoss naming the offending term; parameters are then untouched.
LossBreakdown train_step(const std::vector<RefineSample>& batch, Model& model, AdamWState& opt,
                         int stage, const TrainConfig& cfg);

// --- checkpoints -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& metadata);
Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

}  // namespace crowngen
