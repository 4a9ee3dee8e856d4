// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include "crowngen/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "crowngen/dpsr.hpp"
#include "crowngen/error.hpp"
#include "crowngen/io.hpp"
#include "crowngen/meshops.hpp"
#include "crowngen/voxelgrid.hpp"

namespace crowngen {

using Eigen::MatrixXd;
using nlohmann::ordered_json;

std::string_view to_string(PredictorKind kind) {
  return kind == PredictorKind::oracle ? "oracle" : "trainable";
}

PredictorKind predictor_kind_from_string(std::string_view s) {
  if (s == "oracle") return PredictorKind::oracle;
  if (s == "trainable") return PredictorKind::trainable;
  throw Error(ErrorCode::Config, "unknown predictor '" + std::string(s) + "'");
}

GridSpec PipelineConfig::grid() const {
  GridSpec g;
  g.dims = grid_dims;
  g.spacing = grid_spacing;
  g.origin = -0.5 * g.extent();
  return g;
}

TrainConfig PipelineConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = learning_rate;
  t.weight_decay = weight_decay;
  t.loss = loss;
  t.use_tp_prompt = use_tp_prompt;
  t.curvature_k = curvature_k;
  t.kappa_max = kappa_max;
  return t;
}

CoarseNoise PipelineConfig::noise() const { return {dilate_r, erode_r, flip_prob}; }

void PipelineConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::Config, what);
  };
  for (const int d : grid_dims) require(d >= 8, "grid.dims must be at least 8");
  require(grid_spacing > 0.0, "grid.spacing must be positive");
  require(num_cases >= 1, "data.num_cases must be at least 1");
  require(sample_spacing > 0.0, "data.sample_spacing must be positive");
  require(dilate_r >= 0 && erode_r >= 0, "coarse radii must be non-negative");
  require(flip_prob >= 0.0 && flip_prob <= 1.0, "coarse.flip_prob must lie in [0, 1]");
  require(steps >= 0, "train.steps must be non-negative");
  require(stage_boundary >= 0 && stage_boundary <= steps, "train.stage_boundary must lie in [0, steps]");
  require(batch_size >= 1, "train.batch_size must be at least 1");
  require(learning_rate >= 0.0 && weight_decay >= 0.0, "learning rate and weight decay must be non-negative");
  require(patch_radius_mm > 0.0, "train.patch_radius_mm must be positive");
  require(predictor_crop >= 4, "train.predictor_crop must be at least 4");
  require(curvature_k >= 5, "train.curvature_k must be at least 5");
  require(kappa_max > 0.0, "train.kappa_max must be positive");
  require(tau_mm > 0.0, "eval.tau_mm must be positive");
  require(dpsr_sigma > 0.0, "eval.dpsr_sigma must be positive");
}

// --- configuration text ------------------------------------------------------------

namespace {

using Values = std::vector<std::string>;

const std::string& single(const std::string& key, const Values& v) {
  if (v.size() != 1) throw Error(ErrorCode::Config, key + " takes exactly one value");
  return v[0];
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T out{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::Config, "invalid value '" + s + "' for " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw Error(ErrorCode::Config, "invalid boolean '" + s + "' for " + key);
}

struct Field {
  std::string key;
  std::function<void(PipelineConfig&, const std::string&, const Values&)> set;
  std::function<ordered_json(const PipelineConfig&)> get;
};

template <typename T>
Field number_field(std::string key, T PipelineConfig::*member) {
  return {std::move(key),
          [member](PipelineConfig& c, const std::string& k, const Values& v) {
            c.*member = parse_number<T>(k, single(k, v));
          },
          [member](const PipelineConfig& c) { return ordered_json(c.*member); }};
}

Field bool_field(std::string key, bool PipelineConfig::*member) {
  return {std::move(key),
          [member](PipelineConfig& c, const std::string& k, const Values& v) {
            c.*member = parse_bool(k, single(k, v));
          },
          [member](const PipelineConfig& c) { return ordered_json(c.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"grid.dims",
                 [](PipelineConfig& c, const std::string& k, const Values& v) {
                   if (v.size() == 1) {
                     c.grid_dims.fill(parse_number<int>(k, v[0]));
                   } else if (v.size() == 3) {
                     for (int a = 0; a < 3; ++a) c.grid_dims[a] = parse_number<int>(k, v[a]);
                   } else {
                     throw Error(ErrorCode::Config, k + " takes one or three values");
                   }
                 },
                 [](const PipelineConfig& c) { return ordered_json(c.grid_dims); }});
    f.push_back(number_field("grid.spacing", &PipelineConfig::grid_spacing));
    f.push_back(number_field("data.num_cases", &PipelineConfig::num_cases));
    f.push_back(number_field("data.seed", &PipelineConfig::data_seed));
    f.push_back(number_field("data.sample_spacing", &PipelineConfig::sample_spacing));
    f.push_back({"coarse.predictor",
                 [](PipelineConfig& c, const std::string& k, const Values& v) {
                   c.predictor = predictor_kind_from_string(single(k, v));
                 },
                 [](const PipelineConfig& c) { return ordered_json(std::string(to_string(c.predictor))); }});
    f.push_back(number_field("coarse.dilate_r", &PipelineConfig::dilate_r));
    f.push_back(number_field("coarse.erode_r", &PipelineConfig::erode_r));
    f.push_back(number_field("coarse.flip_prob", &PipelineConfig::flip_prob));
    f.push_back(number_field("coarse.seed", &PipelineConfig::noise_seed));
    f.push_back(bool_field("model.use_refiner", &PipelineConfig::use_refiner));
    f.push_back(bool_field("model.use_tp_prompt", &PipelineConfig::use_tp_prompt));
    f.push_back({"model.loss",
                 [](PipelineConfig& c, const std::string& k, const Values& v) {
                   c.loss = loss_kind_from_string(single(k, v));
                 },
                 [](const PipelineConfig& c) { return ordered_json(std::string(to_string(c.loss))); }});
    f.push_back(number_field("train.steps", &PipelineConfig::steps));
    f.push_back(number_field("train.stage_boundary", &PipelineConfig::stage_boundary));
    f.push_back(number_field("train.batch_size", &PipelineConfig::batch_size));
    f.push_back(number_field("train.learning_rate", &PipelineConfig::learning_rate));
    f.push_back(number_field("train.weight_decay", &PipelineConfig::weight_decay));
    f.push_back(number_field("train.patch_radius_mm", &PipelineConfig::patch_radius_mm));
    f.push_back(number_field("train.predictor_crop", &PipelineConfig::predictor_crop));
    f.push_back(number_field("train.curvature_k", &PipelineConfig::curvature_k));
    f.push_back(number_field("train.kappa_max", &PipelineConfig::kappa_max));
    f.push_back(number_field("train.seed", &PipelineConfig::train_seed));
    f.push_back(number_field("eval.tau_mm", &PipelineConfig::tau_mm));
    f.push_back(bool_field("eval.reconstruct", &PipelineConfig::reconstruct));
    f.push_back(number_field("eval.dpsr_sigma", &PipelineConfig::dpsr_sigma));
    return f;
  }();
  return table;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

void set_config_value(PipelineConfig& cfg, const std::string& key, const std::vector<std::string>& values) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      Values clean;
      for (const auto& v : values) clean.push_back(unquote(trim(v)));
      f.set(cfg, key, clean);
      return;
    }
  }
  throw Error(ErrorCode::Config, "unknown configuration key '" + key + "'");
}

void apply_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw Error(ErrorCode::Config, "override '" + assignment + "' is not of the form key=value");
  }
  Values values;
  std::stringstream rest(assignment.substr(eq + 1));
  for (std::string item; std::getline(rest, item, ',');) values.push_back(item);
  if (values.empty()) values.emplace_back();
  set_config_value(cfg, trim(assignment.substr(0, eq)), values);
}

void apply_config_file(PipelineConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot open config file " + path.string());
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw Error(ErrorCode::Config, path.string() + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    set_config_value(cfg, item.fullname(), item.inputs);
  }
}

ordered_json to_json(const PipelineConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    j[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(cfg);
  }
  return j;
}

std::string to_toml(const PipelineConfig& cfg) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    const auto dot = f.key.find('.');
    if (f.key.compare(0, dot, section) != 0 || section.size() != dot) {
      section = f.key.substr(0, dot);
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg).dump() + "\n";
  }
  return out;
}

std::string config_hash(const PipelineConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016zx", std::hash<std::string>{}(to_json(cfg).dump()));
  return buf;
}

// --- datasets ------------------------------------------------------------------------

Dataset Dataset::generate(const PipelineConfig& cfg) {
  Dataset d;
  d.records = make_manifest(cfg.num_cases, cfg.data_seed);
  return d;
}

Dataset Dataset::open(const std::filesystem::path& dir) {
  Dataset d;
  d.records = read_manifest(dir);
  d.dir = dir;
  return d;
}

SyntheticCase Dataset::load(const CaseRecord& record, const PipelineConfig& cfg) const {
  if (dir) return load_case(*dir, record);
  return generate_synthetic_case(record.seed, record.label, cfg.grid(), cfg.sample_spacing);
}

const CaseRecord& Dataset::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw Error(ErrorCode::Config, "no case named '" + id + "' in the dataset");
}

// --- preparation -----------------------------------------------------------------------

namespace {

template <typename F>
auto staged(const char* stage, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (!e.stage().empty()) throw;
    throw e.with_stage(stage);
  }
}

}  // namespace

std::uint64_t case_noise_seed(const PipelineConfig& cfg, std::uint64_t case_seed) {
  return cfg.noise_seed ^ (case_seed * 0x9e3779b97f4a7c15ULL);
}

CoarseStage run_coarse(const SyntheticCase& c, const Model& model, const PipelineConfig& cfg) {
  const GridSpec grid = cfg.grid();
  CoarseStage out;
  std::optional<FeatureVolume> dense;
  if (cfg.predictor == PredictorKind::oracle) {
    const VoxelVolume v_gt = staged("voxelize", [&] { return voxelize(gt_points(c), grid); });
    out.logits = staged("coarse", [&] {
      const VoxelVolume occ = perturb_occupancy(v_gt, cfg.noise(), case_noise_seed(cfg, c.seed));
      VoxelVolume logits(grid, VolumeKind::logits, -kOracleLogit);
      for (std::size_t f = 0; f < occ.data.size(); ++f) {
        if (occ.data[f] != 0.0) logits.data[f] = kOracleLogit;
      }
      return logits;
    });
  } else {
    if (!model.predictor) {
      throw Error(ErrorCode::Config, "trainable predictor selected but the model has none", "coarse");
    }
    const VoxelVolume v_ios =
        staged("voxelize", [&] { return voxelize(c.ios_cloud, grid, BoundsPolicy::drop); });
    CoarseOutput pred = staged("coarse", [&] { return conv_predict(*model.predictor, v_ios); });
    out.logits = std::move(pred.logits);
    dense = std::move(pred.features);
  }
  out.occupancy = staged("threshold", [&] { return threshold_logits(out.logits); });
  out.points = staged("devoxelize", [&] { return devoxelize(out.occupancy); });
  staged("gather", [&] {
    if (dense) {
      out.features = gather_features(*dense, out.occupancy);
      out.pooled = channel_mean(*dense);
    } else {
      // The oracle's features are the descriptors of its own occupancy.
      const OccupancyDescriptors desc(out.occupancy);
      out.features = desc.rows(occupied_indices(out.occupancy));
      out.pooled = desc.channel_mean();
    }
    return 0;
  });
  return out;
}

PreparedCase prepare_case(const SyntheticCase& c, const std::string& id, const Model& model,
                          const PipelineConfig& cfg) {
  CoarseStage cs = run_coarse(c, model, cfg);
  PreparedCase p;
  p.id = id;
  RefineSample& s = p.sample;
  s.gt = gt_points(c);
  s.gt_margin = gt_margin_mask(c);
  s.gt_kappa = estimate_curvature(s.gt, cfg.curvature_k, cfg.kappa_max).kappa;
  s.coarse_bce = bce_loss(cs.logits, voxelize(s.gt, cfg.grid())).loss;
  s.coarse = std::move(cs.points);
  s.features = std::move(cs.features);
  s.pooled = std::move(cs.pooled);
  s.label = c.label;
  return p;
}

RefineSample extract_patch(const RefineSample& sample, const Vec3& centre, double radius) {
  const double r2 = radius * radius;
  RefineSample out;
  out.label = sample.label;
  out.pooled = sample.pooled;
  out.coarse_bce = sample.coarse_bce;

  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < sample.coarse.size(); ++i) {
    if ((sample.coarse.points[i] - centre).squaredNorm() <= r2) {
      rows.push_back(static_cast<Eigen::Index>(i));
      out.coarse.points.push_back(sample.coarse.points[i]);
    }
  }
  out.features = sample.features(rows, Eigen::all);

  out.gt.normals.emplace();
  for (std::size_t i = 0; i < sample.gt.size(); ++i) {
    if ((sample.gt.points[i] - centre).squaredNorm() <= r2) {
      out.gt.points.push_back(sample.gt.points[i]);
      out.gt.normals->push_back((*sample.gt.normals)[i]);
      out.gt_kappa.push_back(sample.gt_kappa[i]);
      out.gt_margin.push_back(sample.gt_margin[i]);
    }
  }
  return out;
}

Model init_model(const PipelineConfig& cfg) {
  Model m;
  m.refiner = init_refiner(kCoarseChannels, cfg.train_seed);
  if (cfg.predictor == PredictorKind::trainable) m.predictor = init_conv_predictor(cfg.train_seed + 1);
  return m;
}

// --- training ---------------------------------------------------------------------------

namespace {

struct OccupancyLists {
  std::vector<Index3> ios;
  std::vector<Index3> gt;
};

VoxelVolume crop_volume(const std::vector<Index3>& occupied, const GridSpec& grid, const Index3& lo, int n) {
  GridSpec spec;
  spec.dims = {n, n, n};
  spec.spacing = grid.spacing;
  spec.origin = grid.origin + grid.spacing * Vec3(lo.i, lo.j, lo.k);
  VoxelVolume v(spec, VolumeKind::occupancy);
  for (const Index3& x : occupied) {
    const Index3 local{x.i - lo.i, x.j - lo.j, x.k - lo.k};
    if (spec.contains(local)) v[local] = 1.0;
  }
  return v;
}

}  // namespace

void train_stage1(const Dataset& data, const std::vector<CaseRecord>& cases, Model& model,
                  const PipelineConfig& cfg, const StepCallback& log) {
  if (cfg.predictor != PredictorKind::trainable || !model.predictor || cfg.stage_boundary == 0) return;
  if (cases.empty()) throw Error(ErrorCode::InvalidArgument, "no training cases");
  const GridSpec grid = cfg.grid();
  std::vector<OccupancyLists> lists;
  for (const CaseRecord& r : cases) {
    const SyntheticCase c = data.load(r, cfg);
    lists.push_back({occupied_indices(voxelize(c.ios_cloud, grid, BoundsPolicy::drop)),
                     occupied_indices(voxelize(gt_points(c), grid))});
  }
  const int n = std::min({cfg.predictor_crop, grid.dims[0], grid.dims[1], grid.dims[2]});
  const TrainConfig tc = cfg.train_config();
  AdamWState opt = init_adamw(model);
  std::mt19937_64 rng(cfg.train_seed ^ 0x51ULL);
  for (int step = 0; step < cfg.stage_boundary; ++step) {
    std::vector<RefineSample> batch(cfg.batch_size);
    for (RefineSample& s : batch) {
      const OccupancyLists& l = lists[std::uniform_int_distribution<std::size_t>(0, lists.size() - 1)(rng)];
      const Index3 c = l.gt[std::uniform_int_distribution<std::size_t>(0, l.gt.size() - 1)(rng)];
      auto start = [&](int v, int a) { return std::clamp(v - n / 2, 0, grid.dims[a] - n); };
      const Index3 lo{start(c.i, 0), start(c.j, 1), start(c.k, 2)};
      s.ios_occupancy = crop_volume(l.ios, grid, lo, n);
      s.gt_occupancy = crop_volume(l.gt, grid, lo, n);
    }
    const LossBreakdown lb = train_step(batch, model, opt, 1, tc);
    if (log) log({step, 1, lb});
  }
}

void train_stage2(const std::vector<PreparedCase>& prepared, Model& model, const PipelineConfig& cfg,
                  const StepCallback& log) {
  const int n_steps = cfg.steps - cfg.stage_boundary;
  if (!cfg.use_refiner || n_steps <= 0) return;
  if (prepared.empty()) throw Error(ErrorCode::InvalidArgument, "no training cases");
  const TrainConfig tc = cfg.train_config();
  AdamWState opt = init_adamw(model);
  std::mt19937_64 rng(cfg.train_seed ^ 0x52ULL);
  std::uniform_int_distribution<std::size_t> pick_case(0, prepared.size() - 1);
  for (int step = 0; step < n_steps; ++step) {
    std::vector<RefineSample> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const RefineSample& s = prepared[pick_case(rng)].sample;
      std::uniform_int_distribution<std::size_t> pick_point(0, s.gt.size() - 1);
      RefineSample patch;
      for (int attempt = 0; attempt < 16 && patch.coarse.empty(); ++attempt) {
        patch = extract_patch(s, s.gt.points[pick_point(rng)], cfg.patch_radius_mm);
      }
      batch.push_back(patch.coarse.empty() ? s : std::move(patch));
    }
    const LossBreakdown lb = train_step(batch, model, opt, 2, tc);
    if (log) log({cfg.stage_boundary + step, 2, lb});
  }
}

Model train_model(const Dataset& data, const std::vector<CaseRecord>& cases, const PipelineConfig& cfg,
                  const StepCallback& log) {
  cfg.validate();
  Model model = init_model(cfg);
  train_stage1(data, cases, model, cfg, log);
  if (!cfg.use_refiner || cfg.steps == cfg.stage_boundary) return model;
  std::vector<PreparedCase> prepared;
  prepared.reserve(cases.size());
  for (const CaseRecord& r : cases) prepared.push_back(prepare_case(data.load(r, cfg), r.id, model, cfg));
  train_stage2(prepared, model, cfg, log);
  return model;
}

nlohmann::json checkpoint_metadata(const PipelineConfig& cfg) {
  nlohmann::json j;
  j["stage"] = cfg.use_refiner && cfg.steps > cfg.stage_boundary ? 2 : 1;
  j["iteration"] = cfg.steps;
  j["seed"] = cfg.train_seed;
  j["config_hash"] = config_hash(cfg);
  j["config"] = to_json(cfg);
  return j;
}

// --- inference ----------------------------------------------------------------------------

namespace {

class StageTimer {
 public:
  explicit StageTimer(std::map<std::string, double>& out) : out_(out) {}
  template <typename F>
  auto operator()(const char* stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = staged(stage, std::forward<F>(f));
    out_[stage] += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
  }

 private:
  std::map<std::string, double>& out_;
};

}  // namespace

InferenceResult run_inference(const SyntheticCase& c, const Model& model, const PipelineConfig& cfg,
                              const InferenceOptions& opts) {
  cfg.validate();
  InferenceResult r;
  StageTimer timed(r.timing_ms);
  const CoarseStage cs = timed("coarse", [&] { return run_coarse(c, model, cfg); });
  r.coarse = cs.points;
  if (cfg.use_refiner) {
    r.refined = timed("refine", [&] {
      const MatrixXd e = fuse_rows(cs.features, cs.pooled, c.label, model.refiner,
                                   FusionOptions{cfg.use_tp_prompt, false});
      return refine(cs.points, e, model.refiner);
    });
  } else {
    r.refined = cs.points;
    if (cfg.reconstruct) r.refined = timed("normals", [&] { return estimate_normals(cs.points); });
  }

  const PointCloud gt = gt_points(c);
  const std::vector<std::uint8_t> mask = gt_margin_mask(c);
  timed("metrics", [&] {
    r.metrics = evaluate_metrics(r.refined, gt, cfg.tau_mm);
    r.margin_distance_mm = margin_distance(r.refined, gt, mask);
    return 0;
  });

  std::optional<VoxelVolume> indicator;
  if (cfg.reconstruct) {
    DpsrConfig dc;
    dc.grid = cfg.grid();
    dc.smoothing_sigma = cfg.dpsr_sigma;
    indicator = timed("dpsr", [&] { return dpsr_forward(r.refined, dc); });
    r.mesh = timed("marching_cubes", [&] { return marching_cubes(*indicator, 0.0); });
  }

  if (opts.dump_dir) {
    staged("dump", [&] {
      const auto& d = *opts.dump_dir;
      std::filesystem::create_directories(d);
      io::write_cloud(d / "ios.ply", c.ios_cloud);
      io::write_volume(d / "coarse_logits.vol", cs.logits);
      io::write_volume(d / "coarse_occupancy.vol", cs.occupancy);
      io::write_cloud(d / "coarse.ply", cs.points);
      io::write_cloud(d / "refined.ply", r.refined);
      if (indicator) io::write_volume(d / "indicator.vol", *indicator);
      if (r.mesh) io::write_mesh(d / "mesh.ply", *r.mesh);
      return 0;
    });
  }
  return r;
}

ordered_json metrics_json(const std::string& case_id, const SyntheticCase& c, const InferenceResult& r,
                          const PipelineConfig& cfg) {
  ordered_json j;
  j["case"] = case_id;
  j["fdi"] = c.label.code();
  j["tooth_type"] = std::string(to_string(c.label.type()));
  j["config_hash"] = config_hash(cfg);
  j["metrics"] = to_json(r.metrics);
  j["margin_distance_mm"] = r.margin_distance_mm;
  if (r.mesh) {
    j["mesh_vertices"] = r.mesh->vertices.size();
    j["mesh_faces"] = r.mesh->faces.size();
  }
  return j;
}

// --- evaluation -------------------------------------------------------------------------------

namespace {

MetricReport mean_report(const std::vector<const CaseEvaluation*>& cases, double tau) {
  MetricReport m;
  m.tau_mm = tau;
  if (cases.empty()) return m;
  for (const CaseEvaluation* c : cases) {
    m.cd_l2_mm2 += c->metrics.cd_l2_mm2;
    m.fidelity_mm += c->metrics.fidelity_mm;
    m.f_score += c->metrics.f_score;
    m.n_pred += c->metrics.n_pred;
    m.n_gt += c->metrics.n_gt;
  }
  const double inv = 1.0 / static_cast<double>(cases.size());
  m.cd_l2_mm2 *= inv;
  m.fidelity_mm *= inv;
  m.f_score *= inv;
  return m;
}

}  // namespace

EvaluationSummary evaluate(const Dataset& data, const std::vector<CaseRecord>& cases, const Model& model,
                           const PipelineConfig& cfg) {
  if (cases.empty()) throw Error(ErrorCode::InvalidArgument, "no evaluation cases");
  PipelineConfig ecfg = cfg;
  ecfg.reconstruct = false;
  EvaluationSummary s;
  for (const CaseRecord& rec : cases) {
    const InferenceResult r = run_inference(data.load(rec, ecfg), model, ecfg);
    s.cases.push_back({rec.id, rec.label, r.metrics, r.margin_distance_mm});
  }
  std::vector<const CaseEvaluation*> all;
  std::map<std::string, std::vector<const CaseEvaluation*>> by_type;
  for (const CaseEvaluation& c : s.cases) {
    all.push_back(&c);
    by_type[std::string(to_string(c.label.type()))].push_back(&c);
    s.mean_margin_distance_mm += c.margin_distance_mm;
  }
  s.mean = mean_report(all, cfg.tau_mm);
  s.mean_margin_distance_mm /= static_cast<double>(s.cases.size());
  for (const auto& [type, members] : by_type) s.per_type[type] = mean_report(members, cfg.tau_mm);
  return s;
}

ordered_json to_json(const EvaluationSummary& s) {
  ordered_json j;
  j["mean"] = to_json(s.mean);
  j["mean_margin_distance_mm"] = s.mean_margin_distance_mm;
  ordered_json types = ordered_json::object();
  for (const auto& [type, m] : s.per_type) types[type] = to_json(m);
  j["per_type"] = std::move(types);
  ordered_json cases = ordered_json::array();
  for (const CaseEvaluation& c : s.cases) {
    cases.push_back({{"case", c.id},
                     {"fdi", c.label.code()},
                     {"metrics", to_json(c.metrics)},
                     {"margin_distance_mm", c.margin_distance_mm}});
  }
  j["cases"] = std::move(cases);
  return j;
}

std::string to_csv(const EvaluationSummary& s) {
  std::string out = "case,fdi," + metric_csv_header() + ",margin_distance_mm\n";
  char buf[64];
  for (const CaseEvaluation& c : s.cases) {
    std::snprintf(buf, sizeof buf, ",%.17g\n", c.margin_distance_mm);
    out += c.id + "," + std::to_string(c.label.code()) + "," + to_csv_row(c.metrics) + buf;
  }
  return out;
}

// --- ablation ----------------------------------------------------------------------------------

std::vector<AblationRow> default_ablation_rows() {
  return {
      {false, false, LossKind::chamfer},
      {true, false, LossKind::chamfer},
      {true, true, LossKind::chamfer},
      {true, true, LossKind::cpl},
      {true, false, LossKind::cmpl},
      {true, true, LossKind::cmpl},
  };
}

std::vector<AblationResult> run_ablation(const Dataset& data, const PipelineConfig& base,
                                         const std::vector<AblationRow>& rows, const StepCallback& log) {
  if (rows.size() < 2) throw Error(ErrorCode::Config, "an ablation needs at least two rows");
  base.validate();
  const auto train = filter_split(data.records, Split::train);
  const auto test = filter_split(data.records, Split::test);
  if (train.empty() || test.empty()) {
    throw Error(ErrorCode::Config, "ablation needs non-empty train and test splits");
  }

  // The oracle's coarse output does not depend on the row, so the prepared
  // training set is shared.
  std::optional<std::vector<PreparedCase>> shared;
  auto prepared = [&]() -> const std::vector<PreparedCase>& {
    if (!shared) {
      shared.emplace();
      const Model m = init_model(base);
      for (const CaseRecord& r : train) shared->push_back(prepare_case(data.load(r, base), r.id, m, base));
    }
    return *shared;
  };

  std::vector<AblationResult> out;
  for (const AblationRow& row : rows) {
    AblationResult res;
    res.row = row;
    PipelineConfig cfg = base;
    cfg.use_refiner = row.use_refiner;
    cfg.use_tp_prompt = row.use_tp_prompt;
    cfg.loss = row.loss;
    try {
      Model model = init_model(cfg);
      if (cfg.predictor == PredictorKind::oracle) {
        if (cfg.use_refiner) train_stage2(prepared(), model, cfg, log);
      } else {
        model = train_model(data, train, cfg, log);
      }
      res.summary = evaluate(data, test, model, cfg);
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    out.push_back(std::move(res));
  }
  return out;
}

namespace {

std::string yes_no(bool b) { return b ? "yes" : "no"; }

std::string loss_column(const AblationRow& r) {
  if (!r.use_refiner) return "-";
  switch (r.loss) {
    case LossKind::cmpl: return "CMPL";
    case LossKind::cpl: return "CPL";
    case LossKind::chamfer: return "no";
  }
  return "-";
}

}  // namespace

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::string out = "PCR,TP Prompt,CMPL,CD-L2,Fidelity,F-Score,Margin,error\n";
  char buf[160];
  for (const AblationResult& r : results) {
    out += yes_no(r.row.use_refiner) + "," + yes_no(r.row.use_tp_prompt && r.row.use_refiner) + "," +
           loss_column(r.row) + ",";
    if (r.summary) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,", r.summary->mean.cd_l2_mm2,
                    r.summary->mean.fidelity_mm, r.summary->mean.f_score, r.summary->mean_margin_distance_mm);
      out += buf;
    } else {
      out += ",,,,";
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    out += err + "\n";
  }
  return out;
}

std::string ablation_markdown(const std::vector<AblationResult>& results) {
  std::string out =
      "| PCR | TP Prompt | CMPL | CD-L2 (mm^2) | Fidelity (mm) | F-Score | Margin (mm) |\n"
      "|-----|-----------|------|--------------|---------------|---------|-------------|\n";
  char buf[160];
  for (const AblationResult& r : results) {
    out += "| " + yes_no(r.row.use_refiner) + " | " + yes_no(r.row.use_tp_prompt && r.row.use_refiner) +
           " | " + loss_column(r.row) + " | ";
    if (r.summary) {
      std::snprintf(buf, sizeof buf, "%.4f | %.4f | %.4f | %.4f |\n", r.summary->mean.cd_l2_mm2,
                    r.summary->mean.fidelity_mm, r.summary->mean.f_score, r.summary->mean_margin_distance_mm);
      out += buf;
    } else {
      out += "failed: " + r.error + " | | | |\n";
    }
  }
  if (!results.empty() && results.front().summary) {
    std::snprintf(buf, sizeof buf, "\nF-Score threshold tau = %.3g mm\n", results.front().summary->mean.tau_mm);
    out += buf;
  }
  return out;
}

ordered_json to_json(const std::vector<AblationResult>& results) {
  ordered_json rows = ordered_json::array();
  for (const AblationResult& r : results) {
    ordered_json j;
    j["use_refiner"] = r.row.use_refiner;
    j["use_tp_prompt"] = r.row.use_tp_prompt;
    j["loss"] = std::string(to_string(r.row.loss));
    if (r.summary) {
      j["mean"] = to_json(r.summary->mean);
      j["mean_margin_distance_mm"] = r.summary->mean_margin_distance_mm;
    } else {
      j["error"] = r.error;
    }
    rows.push_back(std::move(j));
  }
  return rows;
}

}  // namespace crowngen
