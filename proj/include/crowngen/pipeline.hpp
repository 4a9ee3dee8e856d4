// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end orchestration: configuration, case preparation, two-stage
// training, inference (voxelize, coarse, threshold, devoxelize, gather,
// refine, reconstruct), evaluation and ablation tables.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crowngen/geometry.hpp"
#include "crowngen/losses.hpp"
#include "crowngen/meshops.hpp"
#include "crowngen/refiner.hpp"
#include "crowngen/synthetic.hpp"

namespace crowngen {

enum class PredictorKind { oracle, trainable };

std::string_view to_string(PredictorKind kind);
PredictorKind predictor_kind_from_string(std::string_view s);

/// Every tunable of a run. Keys in the text form are "section.name", e.g.
/// "grid.spacing" or "train.steps"; see config_keys().
struct PipelineConfig {
  // [grid] cube centred on the prepared tooth
  std::array<int, 3> grid_dims{128, 128, 128};
  double grid_spacing = 0.15;

  // [data]
  int num_cases = 200;
  std::uint64_t data_seed = 7;
  double sample_spacing = kDefaultSampleSpacing;

  // [coarse]
  PredictorKind predictor = PredictorKind::oracle;
  int dilate_r = 1;
  int erode_r = 0;
  double flip_prob = 0.05;
  std::uint64_t noise_seed = 11;

  // [model]
  bool use_refiner = true;
  bool use_tp_prompt = true;
  LossKind loss = LossKind::cmpl;

  // [train]
  int steps = 3000;
  int stage_boundary = 1000;  // steps before refinement losses switch on
  int batch_size = 2;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  double patch_radius_mm = 3.0;
  int predictor_crop = 24;  // voxels per side of stage-1 training crops
  int curvature_k = kDefaultCurvatureNeighbors;
  double kappa_max = kDefaultKappaMax;
  std::uint64_t train_seed = 1;

  // [eval]
  double tau_mm = kDefaultFScoreTau;
  bool reconstruct = true;
  double dpsr_sigma = 2.0;

  /// Origin at -extent/2 so the grid is centred on the stump.
  GridSpec grid() const;
  TrainConfig train_config() const;
  CoarseNoise noise() const;
  /// Throws Config on out-of-range values.
  void validate() const;
};

/// All keys accepted by set_config_value, in snapshot order.
std::vector<std::string> config_keys();

/// Parses `values` (one entry, or one per array element) into `key`.
/// Throws Config on unknown keys or unparsable values.
void set_config_value(PipelineConfig& cfg, const std::string& key, const std::vector<std::string>& values);

/// "key=value" override; arrays as comma-separated values.
void apply_override(PipelineConfig& cfg, const std::string& assignment);

/// Applies a TOML-style file ([section] headers, key = value lines).
void apply_config_file(PipelineConfig& cfg, const std::filesystem::path& path);

nlohmann::ordered_json to_json(const PipelineConfig& cfg);
/// TOML-style text that apply_config_file reads back to the same config.
std::string to_toml(const PipelineConfig& cfg);
/// Hex digest of the canonical JSON form.
std::string config_hash(const PipelineConfig& cfg);

// --- datasets ----------------------------------------------------------------

/// Case records plus where to get their geometry: a directory written by
/// write_dataset, or regeneration from the seeds.
struct Dataset {
  std::vector<CaseRecord> records;
  std::optional<std::filesystem::path> dir;

  static Dataset generate(const PipelineConfig& cfg);
  static Dataset open(const std::filesystem::path& dir);

  SyntheticCase load(const CaseRecord& record, const PipelineConfig& cfg) const;
  const CaseRecord& find(const std::string& id) const;
};

// --- preparation and training ------------------------------------------------

struct PreparedCase {
  std::string id;
  RefineSample sample;
};

/// Seed of the oracle perturbation for one case.
std::uint64_t case_noise_seed(const PipelineConfig& cfg, std::uint64_t case_seed);

/// Coarse prediction for a case, returned as its occupancy plus one
/// feature row per occupied voxel. Uses the trainable predictor of `model`
/// when cfg.predictor is trainable.
struct CoarseStage {
  VoxelVolume logits;
  VoxelVolume occupancy;
  PointCloud points;
  Eigen::MatrixXd features;
  Eigen::VectorXd pooled;
};

CoarseStage run_coarse(const SyntheticCase& c, const Model& model, const PipelineConfig& cfg);

PreparedCase prepare_case(const SyntheticCase& c, const std::string& id, const Model& model,
                          const PipelineConfig& cfg);

/// Coarse rows and ground-truth points within `radius` of `centre`.
RefineSample extract_patch(const RefineSample& sample, const Vec3& centre, double radius);

Model init_model(const PipelineConfig& cfg);

struct StepLog {
  int step = 0;
  int stage = 1;
  LossBreakdown loss;
};

using StepCallback = std::function<void(const StepLog&)>;

/// Stage 1: trains the trainable predictor on random crops of the scan
/// and ground-truth occupancy. A no-op for the oracle.
void train_stage1(const Dataset& data, const std::vector<CaseRecord>& cases, Model& model,
                  const PipelineConfig& cfg, const StepCallback& log = {});

/// Stage 2: refiner training on random patches of prepared cases.
void train_stage2(const std::vector<PreparedCase>& prepared, Model& model, const PipelineConfig& cfg,
                  const StepCallback& log = {});

/// Initialise, stage 1, prepare the cases with the trained predictor,
/// stage 2.
Model train_model(const Dataset& data, const std::vector<CaseRecord>& cases, const PipelineConfig& cfg,
                  const StepCallback& log = {});

nlohmann::json checkpoint_metadata(const PipelineConfig& cfg);

// --- inference and evaluation ------------------------------------------------

struct InferenceOptions {
  std::optional<std::filesystem::path> dump_dir;
};

struct InferenceResult {
  PointCloud coarse;
  PointCloud refined;
  std::optional<Mesh> mesh;
  MetricReport metrics;
  double margin_distance_mm = 0.0;
  std::map<std::string, double> timing_ms;
};

/// Errors are re-raised tagged with the stage that failed.
InferenceResult run_inference(const SyntheticCase& c, const Model& model, const PipelineConfig& cfg,
                              const InferenceOptions& opts = {});

/// Deterministic report for one case (no timings).
nlohmann::ordered_json metrics_json(const std::string& case_id, const SyntheticCase& c,
                                    const InferenceResult& r, const PipelineConfig& cfg);

struct CaseEvaluation {
  std::string id;
  FdiLabel label;
  MetricReport metrics;
  double margin_distance_mm = 0.0;
};

struct EvaluationSummary {
  std::vector<CaseEvaluation> cases;
  MetricReport mean;
  double mean_margin_distance_mm = 0.0;
  std::map<std::string, MetricReport> per_type;
};

/// Cases run in record order; reconstruction is skipped.
EvaluationSummary evaluate(const Dataset& data, const std::vector<CaseRecord>& cases, const Model& model,
                           const PipelineConfig& cfg);

nlohmann::ordered_json to_json(const EvaluationSummary& s);
std::string to_csv(const EvaluationSummary& s);

// --- ablation ----------------------------------------------------------------

struct AblationRow {
  bool use_refiner = true;
  bool use_tp_prompt = true;
  LossKind loss = LossKind::cmpl;
};

/// Coarse only, then refinement without prompt / CMPL, up to the full model.
std::vector<AblationRow> default_ablation_rows();

struct AblationResult {
  AblationRow row;
  std::optional<EvaluationSummary> summary;
  std::string error;  // set when the row failed
};

/// Trains on the train split and evaluates on the test split for every
/// row. A failing row is reported and does not stop the others. Throws
/// Config when fewer than two rows are given.
std::vector<AblationResult> run_ablation(const Dataset& data, const PipelineConfig& base,
                                         const std::vector<AblationRow>& rows,
                                         const StepCallback& log = {});

/// Columns: PCR, TP Prompt, CMPL, CD-L2, Fidelity, F-Score, Margin.
std::string ablation_csv(const std::vector<AblationResult>& results);
std::string ablation_markdown(const std::vector<AblationResult>& results);
nlohmann::ordered_json to_json(const std::vector<AblationResult>& results);

}  // namespace crowngen
