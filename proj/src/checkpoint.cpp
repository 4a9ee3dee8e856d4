// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

// Layout (little-endian):
//   "CRWNCKPT" u32 version u32 tensor_count
//   per tensor: u32 name_len, name, u32 ndim (=2), u32 rows, u32 cols, f32[rows*cols] row-major
//   u32 json_len, UTF-8 JSON metadata

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "crowngen/error.hpp"
#include "crowngen/refiner.hpp"

namespace crowngen {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'R', 'W', 'N', 'C', 'K', 'P', 'T'};

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::ifstream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw Error(ErrorCode::Io, "truncated checkpoint " + path.string());
  return v;
}

void check_shapes(const Model& m) {
  const auto& r = m.refiner;
  const auto c = r.proj_b.rows();
  auto expect = [](const Eigen::MatrixXd& t, Eigen::Index rows, Eigen::Index cols, const char* name) {
    if (t.rows() != rows || t.cols() != cols) {
      throw Error(ErrorCode::ShapeMismatch, std::string("checkpoint tensor ") + name + " has the wrong shape");
    }
  };
  expect(r.embedding, kNumToothClasses, kPromptDim, "refiner.embedding");
  expect(r.eca, 1, kEcaKernel, "refiner.eca");
  expect(r.proj_w, c, c + kPromptDim, "refiner.proj_w");
  for (const Mlp* h : {&r.offset_head, &r.normal_head}) {
    expect(h->w1, kHeadHidden, c, "w1");
    expect(h->b1, kHeadHidden, 1, "b1");
    expect(h->w2, kHeadHidden, kHeadHidden, "w2");
    expect(h->b2, kHeadHidden, 1, "b2");
    expect(h->w3, 3, kHeadHidden, "w3");
    expect(h->b3, 3, 1, "b3");
  }
  if (m.predictor) {
    expect(m.predictor->w1, kCoarseChannels, 27, "predictor.w1");
    expect(m.predictor->b1, kCoarseChannels, 1, "predictor.b1");
    expect(m.predictor->w2, kCoarseChannels + 1, kCoarseChannels * 27, "predictor.w2");
    expect(m.predictor->b2, kCoarseChannels + 1, 1, "predictor.b2");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& metadata) {
  Model copy = model;
  check_shapes(copy);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u32(out, kCheckpointVersion);
  const auto tensors = model_tensors(copy);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(t.value->rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value->cols()));
    for (Eigen::Index i = 0; i < t.value->rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value->cols(); ++j) {
        const auto f = static_cast<float>((*t.value)(i, j));
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
  }
  const std::string meta = metadata.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::Io, path.string() + " is not a crowngen checkpoint");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::Io, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in, path);
  std::map<std::string, Eigen::MatrixXd> loaded;
  for (std::uint32_t n = 0; n < count; ++n) {
    std::string name(get_u32(in, path), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (get_u32(in, path) != 2) throw Error(ErrorCode::Io, "tensor " + name + " is not 2-d");
    const std::uint32_t rows = get_u32(in, path);
    const std::uint32_t cols = get_u32(in, path);
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) {
        float f = 0.0F;
        in.read(reinterpret_cast<char*>(&f), 4);
        m(i, j) = f;
      }
    }
    if (!in) throw Error(ErrorCode::Io, "truncated checkpoint " + path.string());
    loaded[name] = std::move(m);
  }
  std::string meta(get_u32(in, path), '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!in) throw Error(ErrorCode::Io, "truncated checkpoint " + path.string());

  Model model;
  if (loaded.count("predictor.w1")) model.predictor.emplace();
  for (auto& t : model_tensors(model)) {
    auto it = loaded.find(t.name);
    if (it == loaded.end()) throw Error(ErrorCode::Io, "checkpoint lacks tensor " + t.name);
    *t.value = std::move(it->second);
    loaded.erase(it);
  }
  if (!loaded.empty()) {
    throw Error(ErrorCode::Io, "checkpoint has unknown tensor " + loaded.begin()->first);
  }
  check_shapes(model);
  if (metadata) *metadata = nlohmann::json::parse(meta);
  return model;
}

}  // namespace crowngen
