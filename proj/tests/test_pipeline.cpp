// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "crowngen/error.hpp"
#include "crowngen/io.hpp"
#include "crowngen/meshops.hpp"
#include "crowngen/pipeline.hpp"
#include "crowngen/voxelgrid.hpp"
#include "test_util.hpp"

using namespace crowngen;
namespace fs = std::filesystem;

namespace {

GridSpec default_grid() { return PipelineConfig{}.grid(); }

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crowngen_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Strict 8-neighbour maxima of the occlusal height field. The sampling is
// anisotropic so that shapes symmetric in (x/a, y/b) do not produce ties.
int count_occlusal_maxima(const CrownShape& s) {
  constexpr int nx = 201, ny = 197;
  std::vector<double> h(nx * ny);
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      h[i * ny + j] = occlusal_height(s, -s.a + 2.0 * s.a * (i + 0.5) / nx, -s.b + 2.0 * s.b * (j + 0.5) / ny);
    }
  }
  int maxima = 0;
  for (int i = 1; i + 1 < nx; ++i) {
    for (int j = 1; j + 1 < ny; ++j) {
      const double v = h[i * ny + j];
      if (std::isnan(v)) continue;
      bool is_max = true;
      for (int di = -1; di <= 1 && is_max; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const double w = h[(i + di) * ny + (j + dj)];
          if (std::isnan(w) || w >= v) {
            is_max = false;
            break;
          }
        }
      }
      maxima += is_max;
    }
  }
  return maxima;
}

bool same_points(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

// Small, fast configuration: 64^3 at 0.3 mm still spans 19.2 mm.
PipelineConfig small_config() {
  PipelineConfig cfg;
  cfg.grid_dims = {64, 64, 64};
  cfg.grid_spacing = 0.3;
  cfg.sample_spacing = 0.2;
  cfg.num_cases = 18;
  cfg.steps = 6;
  cfg.stage_boundary = 0;
  cfg.batch_size = 1;
  cfg.reconstruct = false;
  return cfg;
}

}  // namespace

TEST_CASE("synthetic case is deterministic in its seed") {
  const GridSpec g = default_grid();
  const FdiLabel label = FdiLabel::from_code(36);
  const SyntheticCase a = generate_synthetic_case(5, label, g);
  const SyntheticCase b = generate_synthetic_case(5, label, g);
  CHECK(same_points(a.ios_cloud.points, b.ios_cloud.points));
  CHECK(same_points(a.gt_crown_mesh.vertices, b.gt_crown_mesh.vertices));
  CHECK(a.gt_crown_mesh.faces == b.gt_crown_mesh.faces);
  CHECK(same_points(a.gt_margin.points, b.gt_margin.points));
  const SyntheticCase c = generate_synthetic_case(6, label, g);
  CHECK_FALSE(same_points(a.gt_crown_mesh.vertices, c.gt_crown_mesh.vertices));
}

TEST_CASE("crown mesh is an open surface with one planar margin loop") {
  const GridSpec g = default_grid();
  for (const int code : {11, 13, 24, 36, 47}) {
    CAPTURE(code);
    const SyntheticCase c = generate_synthetic_case(static_cast<std::uint64_t>(code), FdiLabel::from_code(code), g);
    const auto loops = boundary_loops(c.gt_crown_mesh);
    REQUIRE(loops.size() == 1);
    CHECK(loops[0].size() >= 3);
    CHECK(euler_characteristic(c.gt_crown_mesh) == 1);  // a disk
    REQUIRE_FALSE(c.gt_margin.empty());
    CHECK(c.gt_margin.size() == loops[0].size());
    const double z0 = c.gt_margin.points.front().z();
    for (const Vec3& p : c.gt_margin.points) CHECK(std::abs(p.z() - z0) < 1e-9);
    for (const Vec3& v : c.gt_crown_mesh.vertices) CHECK(v.z() >= z0 - 1e-9);
  }
}

TEST_CASE("all geometry lies inside the grid and the crown must fit") {
  const GridSpec g = default_grid();
  const SyntheticCase c = generate_synthetic_case(3, FdiLabel::from_code(16), g);
  const Vec3 lo = g.origin, hi = g.origin + g.extent();
  for (const auto* pts : {&c.ios_cloud.points, &c.gt_crown_mesh.vertices}) {
    for (const Vec3& p : *pts) {
      CHECK(((p.array() > lo.array()).all() && (p.array() < hi.array()).all()));
    }
  }
  CHECK_FALSE(c.ios_cloud.empty());
  GridSpec tiny = g;
  tiny.dims = {32, 32, 32};
  tiny.origin = -0.5 * tiny.extent();
  CHECK_THROWS_AS(generate_synthetic_case(3, FdiLabel::from_code(16), tiny), Error);
}

TEST_CASE("vertex normals of the crown point outward") {
  const SyntheticCase c = generate_synthetic_case(9, FdiLabel::from_code(25), default_grid());
  const PointCloud gt = gt_points(c);
  REQUIRE(gt.has_normals());
  gt.validate();
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : gt.points) centroid += p;
  centroid /= static_cast<double>(gt.size());
  std::size_t inward = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) inward += (gt.points[i] - centroid).dot((*gt.normals)[i]) <= 0.0;
  CHECK(inward == 0);
}

TEST_CASE("molar occlusal surface has four cusps") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    CHECK(count_occlusal_maxima(crown_shape(FdiLabel::from_code(46), seed)) == 4);
  }
  CHECK(count_occlusal_maxima(crown_shape(FdiLabel::from_code(15), 1)) == 2);
  CHECK(count_occlusal_maxima(crown_shape(FdiLabel::from_code(21), 1)) == 1);
}

TEST_CASE("occlusal height matches the mesh top") {
  const CrownShape s = crown_shape(FdiLabel::from_code(26), 4);
  const Mesh m = crown_mesh(s, 0.1);
  double top = -1e9;
  for (const Vec3& v : m.vertices) top = std::max(top, v.z());
  double field_top = -1e9;
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 200; ++j) {
      const double h = occlusal_height(s, -s.a + 2 * s.a * (i + 0.5) / 200, -s.b + 2 * s.b * (j + 0.5) / 200);
      if (!std::isnan(h)) field_top = std::max(field_top, h);
    }
  }
  CHECK(std::abs(top - field_top) < 0.05);
  CHECK(std::isnan(occlusal_height(s, 2.0 * s.a, 0.0)));
}

TEST_CASE("stratified split keeps per-type 7:1:1 proportions within one case") {
  const auto records = make_manifest(200, 42);
  REQUIRE(records.size() == 200);
  std::map<ToothType, std::map<Split, int>> counts;
  std::map<ToothType, int> totals;
  for (const auto& r : records) {
    counts[r.label.type()][r.split]++;
    totals[r.label.type()]++;
  }
  for (const auto& [type, total] : totals) {
    CAPTURE(to_string(type));
    CHECK(std::abs(counts[type][Split::train] - 7.0 * total / 9.0) <= 1.0);
    CHECK(std::abs(counts[type][Split::val] - total / 9.0) <= 1.0);
    CHECK(std::abs(counts[type][Split::test] - total / 9.0) <= 1.0);
  }
  const auto again = make_manifest(200, 42);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].seed == again[i].seed);
    CHECK(records[i].split == again[i].split);
    CHECK(records[i].label == again[i].label);
  }
}

TEST_CASE("dataset round-trips through disk") {
  const fs::path dir = scratch_dir("dataset");
  PipelineConfig cfg = small_config();
  cfg.num_cases = 3;
  const auto records = make_manifest(cfg.num_cases, 3);
  write_dataset(dir, records, cfg.grid(), cfg.sample_spacing);
  const Dataset disk = Dataset::open(dir);
  REQUIRE(disk.records.size() == records.size());
  const Dataset mem{records, std::nullopt};
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(disk.records[i].id == records[i].id);
    CHECK(disk.records[i].seed == records[i].seed);
    CHECK(disk.records[i].label == records[i].label);
    CHECK(disk.records[i].split == records[i].split);
    const SyntheticCase a = disk.load(disk.records[i], cfg);
    const SyntheticCase b = mem.load(records[i], cfg);
    CHECK(same_points(a.ios_cloud.points, b.ios_cloud.points));
    CHECK(same_points(a.gt_crown_mesh.vertices, b.gt_crown_mesh.vertices));
    CHECK(a.gt_crown_mesh.faces == b.gt_crown_mesh.faces);
    CHECK(same_points(a.gt_margin.points, b.gt_margin.points));
  }
  CHECK_THROWS_AS(disk.find("nope"), Error);
  fs::remove_all(dir);
}

TEST_CASE("config text round-trips and rejects bad input") {
  PipelineConfig cfg;
  cfg.grid_dims = {96, 80, 64};
  cfg.grid_spacing = 0.2;
  cfg.loss = LossKind::cpl;
  cfg.use_tp_prompt = false;
  cfg.predictor = PredictorKind::trainable;
  cfg.data_seed = 123456789012345ULL;
  cfg.learning_rate = 3.5e-4;

  const fs::path dir = scratch_dir("config");
  {
    std::ofstream out(dir / "run.toml");
    out << to_toml(cfg);
  }
  PipelineConfig back;
  apply_config_file(back, dir / "run.toml");
  CHECK(to_json(back) == to_json(cfg));
  CHECK(config_hash(back) == config_hash(cfg));

  PipelineConfig o;
  apply_override(o, "train.steps=17");
  apply_override(o, "grid.dims=32,40,48");
  apply_override(o, "model.loss=chamfer");
  apply_override(o, "model.use_refiner=false");
  CHECK(o.steps == 17);
  CHECK(o.grid_dims == std::array<int, 3>{32, 40, 48});
  CHECK(o.loss == LossKind::chamfer);
  CHECK_FALSE(o.use_refiner);
  CHECK(config_hash(o) != config_hash(PipelineConfig{}));

  auto code_of = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  CHECK(code_of([&] { apply_override(o, "train.nope=1"); }) == ErrorCode::Config);
  CHECK(code_of([&] { apply_override(o, "train.steps=abc"); }) == ErrorCode::Config);
  CHECK(code_of([&] { apply_override(o, "train.steps"); }) == ErrorCode::Config);
  CHECK(code_of([&] { apply_override(o, "model.loss=l1"); }) == ErrorCode::Config);
  CHECK(code_of([&] { apply_config_file(o, dir / "missing.toml"); }) == ErrorCode::Config);
  {
    std::ofstream out(dir / "bad.toml");
    out << "[train]\nsteps = 10\nbogus = 3\n";
  }
  CHECK(code_of([&] { apply_config_file(o, dir / "bad.toml"); }) == ErrorCode::Config);

  PipelineConfig v;
  v.stage_boundary = v.steps + 1;
  CHECK(code_of([&] { v.validate(); }) == ErrorCode::Config);
  v = PipelineConfig{};
  v.flip_prob = 1.5;
  CHECK(code_of([&] { v.validate(); }) == ErrorCode::Config);
  CHECK(exit_code_for(ErrorCode::Config) == 2);
  fs::remove_all(dir);
}

TEST_CASE("grid is centred on the origin") {
  const GridSpec g = PipelineConfig{}.grid();
  CHECK(g.dims == std::array<int, 3>{128, 128, 128});
  CHECK(g.spacing == 0.15);
  CHECK((g.origin + 0.5 * g.extent()).norm() < 1e-12);
}

TEST_CASE("extract_patch keeps rows aligned with their points") {
  PipelineConfig cfg = small_config();
  const Dataset data = Dataset::generate(cfg);
  const SyntheticCase c = data.load(data.records[0], cfg);
  const PreparedCase p = prepare_case(c, data.records[0].id, init_model(cfg), cfg);
  const RefineSample& s = p.sample;
  REQUIRE(static_cast<std::size_t>(s.features.rows()) == s.coarse.size());
  const Vec3 centre = s.gt.points[s.gt.size() / 2];
  const double radius = 2.5;
  const RefineSample patch = extract_patch(s, centre, radius);
  std::size_t n_coarse = 0, n_gt = 0;
  for (const Vec3& q : s.coarse.points) n_coarse += (q - centre).norm() <= radius;
  for (const Vec3& q : s.gt.points) n_gt += (q - centre).norm() <= radius;
  CHECK(patch.coarse.size() == n_coarse);
  CHECK(patch.gt.size() == n_gt);
  CHECK(patch.gt_kappa.size() == n_gt);
  CHECK(patch.gt_margin.size() == n_gt);
  REQUIRE(static_cast<std::size_t>(patch.features.rows()) == n_coarse);
  std::size_t r = 0;
  for (std::size_t i = 0; i < s.coarse.size(); ++i) {
    if ((s.coarse.points[i] - centre).norm() > radius) continue;
    CHECK(patch.coarse.points[r] == s.coarse.points[i]);
    CHECK(patch.features.row(static_cast<Eigen::Index>(r)) == s.features.row(static_cast<Eigen::Index>(i)));
    ++r;
  }
  CHECK(patch.pooled == s.pooled);
}

TEST_CASE("zero-noise oracle with identity refiner is within the quantisation bound") {
  PipelineConfig cfg;
  cfg.dilate_r = 0;
  cfg.flip_prob = 0.0;
  cfg.reconstruct = false;
  const Model model = init_model(cfg);
  const double s = cfg.grid_spacing;
  for (const int code : {11, 23, 34, 46}) {
    CAPTURE(code);
    const SyntheticCase c = generate_synthetic_case(static_cast<std::uint64_t>(code) * 7, FdiLabel::from_code(code), cfg.grid());
    const InferenceResult r = run_inference(c, model, cfg);
    CHECK(r.metrics.cd_l2_mm2 <= 3.0 * s * s);
    // Identity refiner: refined points are the voxel centres.
    CHECK(same_points(r.refined.points, r.coarse.points));
  }
}

TEST_CASE("empty coarse prediction fails with a stage-tagged EmptyVolume") {
  PipelineConfig cfg = small_config();
  cfg.dilate_r = 0;
  cfg.erode_r = 4;
  cfg.flip_prob = 0.0;
  const Dataset data = Dataset::generate(cfg);
  const SyntheticCase c = data.load(data.records[0], cfg);
  try {
    run_inference(c, init_model(cfg), cfg);
    FAIL("expected EmptyVolume");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyVolume);
    CHECK(e.stage() == "devoxelize");
    CHECK(exit_code_for(e.code()) != 0);
  }
}

TEST_CASE("inference is deterministic and dumps reload losslessly") {
  PipelineConfig cfg = small_config();
  cfg.reconstruct = true;
  cfg.steps = 4;
  const Dataset data = Dataset::generate(cfg);
  const auto train = filter_split(data.records, Split::train);
  const Model model = train_model(data, {train.begin(), train.begin() + 2}, cfg);
  const CaseRecord& rec = data.records.back();
  const SyntheticCase c = data.load(rec, cfg);

  const fs::path dir = scratch_dir("dump");
  const InferenceResult a = run_inference(c, model, cfg, {dir});
  const InferenceResult b = run_inference(c, model, cfg);
  CHECK(metrics_json(rec.id, c, a, cfg).dump() == metrics_json(rec.id, c, b, cfg).dump());
  REQUIRE(a.mesh);
  CHECK_FALSE(a.mesh->faces.empty());

  CHECK(same_points(io::read_cloud(dir / "ios.ply").points, c.ios_cloud.points));
  CHECK(same_points(io::read_cloud(dir / "coarse.ply").points, a.coarse.points));
  const PointCloud refined = io::read_cloud(dir / "refined.ply");
  CHECK(same_points(refined.points, a.refined.points));
  REQUIRE(refined.has_normals());
  CHECK(same_points(*refined.normals, *a.refined.normals));
  const Mesh mesh = io::read_mesh(dir / "mesh.ply");
  CHECK(same_points(mesh.vertices, a.mesh->vertices));
  CHECK(mesh.faces == a.mesh->faces);

  // Volumes are stored as f32; a reload re-saves byte-identically and
  // matches the f32 rounding of the values.
  for (const char* name : {"coarse_logits.vol", "coarse_occupancy.vol", "indicator.vol"}) {
    CAPTURE(name);
    const VoxelVolume v = io::read_volume(dir / name, VolumeKind::logits);
    io::write_volume(dir / "resaved.vol", v);
    std::ifstream f1(dir / name, std::ios::binary), f2(dir / "resaved.vol", std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
  }
  const VoxelVolume occ = io::read_volume(dir / "coarse_occupancy.vol", VolumeKind::occupancy);
  CHECK(occ.data == threshold_logits(io::read_volume(dir / "coarse_logits.vol", VolumeKind::logits)).data);
  CHECK(devoxelize(occ).size() == a.coarse.size());
  fs::remove_all(dir);
}

TEST_CASE("ablation rows are isolated and reproducible") {
  PipelineConfig cfg = small_config();
  const Dataset data = Dataset::generate(cfg);
  REQUIRE_FALSE(filter_split(data.records, Split::test).empty());

  const AblationRow full{true, true, LossKind::cmpl};
  const AblationRow coarse{false, false, LossKind::chamfer};
  const auto results = run_ablation(data, cfg, {full, full, coarse});
  REQUIRE(results.size() == 3);
  for (const auto& r : results) REQUIRE(r.summary);
  CHECK(to_json(results[0].summary->mean) == to_json(results[1].summary->mean));

  PipelineConfig coarse_cfg = cfg;
  coarse_cfg.use_refiner = false;
  const EvaluationSummary direct =
      evaluate(data, filter_split(data.records, Split::test), init_model(coarse_cfg), coarse_cfg);
  CHECK(to_json(results[2].summary->mean) == to_json(direct.mean));
  CHECK(results[2].summary->mean_margin_distance_mm == direct.mean_margin_distance_mm);

  const std::string csv = ablation_csv(results);
  CHECK(csv.rfind("PCR,TP Prompt,CMPL,CD-L2,Fidelity,F-Score", 0) == 0);
  CHECK(ablation_markdown(results).find("| PCR | TP Prompt | CMPL |") != std::string::npos);

  CHECK_THROWS_AS(run_ablation(data, cfg, {full}), Error);

  PipelineConfig broken = cfg;
  broken.dilate_r = 0;
  broken.erode_r = 4;
  const auto failed = run_ablation(data, broken, {full, coarse});
  REQUIRE(failed.size() == 2);
  for (const auto& r : failed) {
    CHECK_FALSE(r.summary);
    CHECK(r.error.find("EmptyVolume") != std::string::npos);
  }
}

TEST_CASE("trainable predictor trains in stage 1 and feeds stage 2") {
  PipelineConfig cfg = small_config();
  cfg.grid_dims = {32, 32, 32};
  cfg.grid_spacing = 0.6;
  cfg.predictor = PredictorKind::trainable;
  cfg.steps = 4;
  cfg.stage_boundary = 2;
  cfg.predictor_crop = 12;
  const Dataset data = Dataset::generate(cfg);
  const auto train = filter_split(data.records, Split::train);
  const std::vector<CaseRecord> few(train.begin(), train.begin() + 2);

  const Model init = init_model(cfg);
  REQUIRE(init.predictor);
  std::vector<StepLog> logs;
  const Model model = train_model(data, few, cfg, [&](const StepLog& s) { logs.push_back(s); });
  REQUIRE(logs.size() == 4);
  CHECK(logs[0].stage == 1);
  CHECK(logs[1].stage == 1);
  CHECK(logs[2].stage == 2);
  CHECK(logs[3].stage == 2);
  REQUIRE(model.predictor);
  CHECK(model.predictor->w1 != init.predictor->w1);
  CHECK(model.refiner.offset_head.w3 != init.refiner.offset_head.w3);

  // Coarse output now comes from the network; all-negative logits would be
  // an empty prediction, which run_coarse reports as a tagged error.
  try {
    const CoarseStage cs = run_coarse(data.load(data.records[0], cfg), model, cfg);
    CHECK(static_cast<std::size_t>(cs.features.rows()) == cs.points.size());
    CHECK(cs.features.cols() == kCoarseChannels);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyVolume);
    CHECK(e.stage() == "devoxelize");
  }

  PipelineConfig oracle = cfg;
  oracle.predictor = PredictorKind::oracle;
  CHECK_FALSE(init_model(oracle).predictor);
  PipelineConfig missing = cfg;
  Model no_pred = init_model(oracle);
  CHECK_THROWS_AS(run_coarse(data.load(data.records[0], missing), no_pred, missing), Error);
}

TEST_CASE("checkpoint metadata records the run") {
  PipelineConfig cfg;
  const auto meta = checkpoint_metadata(cfg);
  CHECK(meta.at("stage") == 2);
  CHECK(meta.at("iteration") == cfg.steps);
  CHECK(meta.at("seed") == cfg.train_seed);
  CHECK(meta.at("config_hash") == config_hash(cfg));
}
