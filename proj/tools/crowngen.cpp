// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Every subcommand writes its outputs plus a
// resolved configuration snapshot (config.resolved.toml) into --out.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crowngen/dpsr.hpp"
#include "crowngen/error.hpp"
#include "crowngen/io.hpp"
#include "crowngen/meshops.hpp"
#include "crowngen/pipeline.hpp"
#include "crowngen/voxelgrid.hpp"

namespace fs = std::filesystem;
using namespace crowngen;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out;
  std::string data;
  std::string checkpoint;
};

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg;
  if (!c.config_file.empty()) apply_config_file(cfg, c.config_file);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

fs::path prepare_out(const Common& c, const PipelineConfig& cfg) {
  const fs::path out(c.out);
  fs::create_directories(out);
  write_text(out / "config.resolved.toml", to_toml(cfg));
  return out;
}

Dataset open_data(const Common& c, const PipelineConfig& cfg) {
  return c.data.empty() ? Dataset::generate(cfg) : Dataset::open(c.data);
}

Model load_model(const Common& c, const PipelineConfig& cfg) {
  if (c.checkpoint.empty()) return init_model(cfg);
  return load_checkpoint(c.checkpoint);
}

void add_common(CLI::App* sub, Common& c, bool data, bool checkpoint) {
  sub->add_option("--config", c.config_file, "TOML-style config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.overrides, "Override, e.g. --set train.steps=500 (repeatable)");
  sub->add_option("--out", c.out, "Output directory")->required();
  if (data) sub->add_option("--data", c.data, "Dataset directory (default: regenerate from data.seed)");
  if (checkpoint) sub->add_option("--checkpoint", c.checkpoint, "Model checkpoint");
}

void log_step(const StepLog& s) {
  if (s.step % 100 == 0) {
    std::fprintf(stderr, "step %d stage %d bce %.5f cmpl %.5f normals %.5f total %.5f\n", s.step, s.stage,
                 s.loss.bce, s.loss.cmpl, s.loss.normals, s.loss.total);
  }
}

AblationRow parse_row(const std::string& spec) {
  AblationRow row;
  std::stringstream ss(spec);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Config, "ablation row item '" + item + "' lacks '='");
    const std::string k = item.substr(0, eq), v = item.substr(eq + 1);
    auto flag = [&] {
      if (v == "1" || v == "true" || v == "yes") return true;
      if (v == "0" || v == "false" || v == "no") return false;
      throw Error(ErrorCode::Config, "invalid ablation flag '" + v + "'");
    };
    if (k == "pcr") {
      row.use_refiner = flag();
    } else if (k == "prompt") {
      row.use_tp_prompt = flag();
    } else if (k == "loss") {
      row.loss = loss_kind_from_string(v);
    } else {
      throw Error(ErrorCode::Config, "unknown ablation row key '" + k + "'");
    }
  }
  return row;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crowngen: coarse-to-fine dental crown generation"};
  app.require_subcommand(1);

  Common c;

  std::string in_path, policy = "reject";
  auto* vox = app.add_subcommand("voxelize", "Point cloud to occupancy volume");
  add_common(vox, c, false, false);
  vox->add_option("--in", in_path, "Input cloud (.ply/.xyz)")->required()->check(CLI::ExistingFile);
  vox->add_option("--policy", policy, "Out-of-grid points: reject, clamp or drop")
      ->check(CLI::IsMember({"reject", "clamp", "drop"}));

  bool dump = false;
  auto* rec = app.add_subcommand("reconstruct", "Oriented points to mesh via DPSR and marching cubes");
  add_common(rec, c, false, false);
  rec->add_option("--in", in_path, "Input cloud with normals (.ply/.xyz)")->required()->check(CLI::ExistingFile);
  rec->add_flag("--dump", dump, "Also write the indicator volume");

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic crown dataset");
  add_common(gen, c, false, false);

  auto* train = app.add_subcommand("train", "Two-stage training on the train split");
  add_common(train, c, true, false);

  std::string case_id;
  auto* infer = app.add_subcommand("infer", "Run the full pipeline on one case");
  add_common(infer, c, true, true);
  infer->add_option("--case", case_id, "Case id (default: first test case)");
  infer->add_flag("--dump", dump, "Write every intermediate artifact");

  std::string split = "test";
  auto* eval = app.add_subcommand("evaluate", "Metrics over a dataset split");
  add_common(eval, c, true, true);
  eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  std::vector<std::string> rows;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate toggle combinations");
  add_common(ablate, c, true, false);
  ablate->add_option("--row", rows, "Row spec, e.g. pcr=1,prompt=0,loss=cmpl (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const PipelineConfig cfg = resolve(c);
    const fs::path out = prepare_out(c, cfg);

    if (*vox) {
      const BoundsPolicy p = policy == "clamp" ? BoundsPolicy::clamp
                             : policy == "drop" ? BoundsPolicy::drop
                                                : BoundsPolicy::reject;
      const VoxelVolume v = voxelize(io::read_cloud(in_path), cfg.grid(), p);
      io::write_volume(out / "volume.vol", v);
      std::printf("%zu occupied voxels\n", v.count_nonzero());
    } else if (*rec) {
      const PointCloud cloud = io::read_cloud(in_path);
      DpsrConfig dc;
      dc.grid = cfg.grid();
      dc.smoothing_sigma = cfg.dpsr_sigma;
      const VoxelVolume chi = dpsr_forward(cloud, dc);
      const Mesh mesh = marching_cubes(chi, 0.0);
      io::write_mesh(out / "mesh.ply", mesh);
      if (dump) io::write_volume(out / "indicator.vol", chi);
      std::printf("%zu vertices, %zu faces\n", mesh.vertices.size(), mesh.faces.size());
    } else if (*gen) {
      const auto records = make_manifest(cfg.num_cases, cfg.data_seed);
      write_dataset(out, records, cfg.grid(), cfg.sample_spacing);
      std::printf("wrote %zu cases to %s\n", records.size(), out.string().c_str());
    } else if (*train) {
      const Dataset data = open_data(c, cfg);
      const auto cases = filter_split(data.records, Split::train);
      std::ofstream log(out / "train_log.csv");
      log << "step,stage,bce,cmpl,normals,total\n";
      log.precision(17);
      const Model model = train_model(data, cases, cfg, [&](const StepLog& s) {
        log << s.step << ',' << s.stage << ',' << s.loss.bce << ',' << s.loss.cmpl << ',' << s.loss.normals
            << ',' << s.loss.total << '\n';
        log_step(s);
      });
      save_checkpoint(out / "model.ckpt", model, checkpoint_metadata(cfg));
      std::printf("trained on %zu cases, checkpoint %s\n", cases.size(), (out / "model.ckpt").string().c_str());
    } else if (*infer) {
      const Dataset data = open_data(c, cfg);
      const Model model = load_model(c, cfg);
      CaseRecord record;
      if (case_id.empty()) {
        const auto test = filter_split(data.records, Split::test);
        if (test.empty()) throw Error(ErrorCode::Config, "dataset has no test cases");
        record = test.front();
      } else {
        record = data.find(case_id);
      }
      const SyntheticCase sc = data.load(record, cfg);
      InferenceOptions opts;
      if (dump) opts.dump_dir = out / "dump";
      const InferenceResult r = run_inference(sc, model, cfg, opts);
      write_text(out / "metrics.json", metrics_json(record.id, sc, r, cfg).dump(2) + "\n");
      write_text(out / "timing.json", nlohmann::json(r.timing_ms).dump(2) + "\n");
      if (r.mesh) io::write_mesh(out / "mesh.ply", *r.mesh);
      std::printf("%s: CD-L2 %.5f mm^2, fidelity %.4f mm, F-score %.4f (tau %.3g mm)\n", record.id.c_str(),
                  r.metrics.cd_l2_mm2, r.metrics.fidelity_mm, r.metrics.f_score, r.metrics.tau_mm);
    } else if (*eval) {
      const Dataset data = open_data(c, cfg);
      const Model model = load_model(c, cfg);
      const auto cases = filter_split(data.records, split_from_string(split));
      const EvaluationSummary s = evaluate(data, cases, model, cfg);
      write_text(out / "evaluation.json", to_json(s).dump(2) + "\n");
      write_text(out / "evaluation.csv", to_csv(s));
      std::printf("%zu cases: CD-L2 %.5f mm^2, fidelity %.4f mm, F-score %.4f (tau %.3g mm)\n", s.cases.size(),
                  s.mean.cd_l2_mm2, s.mean.fidelity_mm, s.mean.f_score, s.mean.tau_mm);
    } else if (*ablate) {
      const Dataset data = open_data(c, cfg);
      std::vector<AblationRow> table;
      for (const auto& r : rows) table.push_back(parse_row(r));
      if (table.empty()) table = default_ablation_rows();
      const auto results = run_ablation(data, cfg, table, log_step);
      write_text(out / "ablation.csv", ablation_csv(results));
      write_text(out / "ablation.md", ablation_markdown(results));
      write_text(out / "ablation.json", to_json(results).dump(2) + "\n");
      std::printf("%s", ablation_markdown(results).c_str());
    }
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
