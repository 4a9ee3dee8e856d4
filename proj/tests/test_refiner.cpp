// Copyright 2026 The crowngen Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "crowngen/error.hpp"
#include "crowngen/meshops.hpp"
#include "crowngen/refiner.hpp"
#include "crowngen/voxelgrid.hpp"
#include "test_util.hpp"

using namespace crowngen;
using testutil::rel_err;

namespace {

GridSpec cube_grid(int n, double s = 0.15, const Vec3& origin = Vec3::Zero()) {
  GridSpec g;
  g.dims = {n, n, n};
  g.spacing = s;
  g.origin = origin;
  return g;
}

VoxelVolume random_occupancy(std::mt19937_64& rng, const GridSpec& g, double p) {
  std::bernoulli_distribution bit(p);
  VoxelVolume v(g, VolumeKind::occupancy);
  for (auto& x : v.data) x = bit(rng) ? 1.0 : 0.0;
  return v;
}

// Direct window loops; shares nothing with the prefix-sum implementation.
std::vector<double> brute_descriptor(const VoxelVolume& v, const Index3& c) {
  const GridSpec& g = v.spec;
  auto win = [&](const Index3& at, int r, double& count, Vec3& sum) {
    count = 0.0;
    sum.setZero();
    for (int a = -r; a <= r; ++a)
      for (int b = -r; b <= r; ++b)
        for (int d = -r; d <= r; ++d) {
          const Index3 n{at.i + a, at.j + b, at.k + d};
          if (g.contains(n) && v[n] != 0.0) {
            count += 1.0;
            sum += Vec3(n.i, n.j, n.k);
          }
        }
  };
  std::vector<double> out(kCoarseChannels, 0.0);
  double n7, n3, n5;
  Vec3 s7, s3, s5;
  win(c, 3, n7, s7);
  if (n7 == 0.0) return out;
  const Vec3 p(c.i, c.j, c.k);
  out[0] = v[c];
  win(c, 1, n3, s3);
  if (n3 > 0) {
    const Vec3 d = s3 / n3 - p;
    out[1] = d.x(), out[2] = d.y(), out[3] = d.z();
  }
  const Vec3 d7 = s7 / n7 - p;
  out[4] = d7.x(), out[5] = d7.y(), out[6] = d7.z();
  win(c, 2, n5, s5);
  out[7] = n3 / 27.0, out[8] = n5 / 125.0, out[9] = n7 / 343.0;
  for (int a = 0; a < 3; ++a) {
    Index3 lo = c, hi = c;
    (a == 0 ? lo.i : a == 1 ? lo.j : lo.k) -= 1;
    (a == 0 ? hi.i : a == 1 ? hi.j : hi.k) += 1;
    double nl, nh;
    Vec3 tmp;
    win(lo, 2, nl, tmp);
    win(hi, 2, nh, tmp);
    out[10 + a] = 0.5 * (nh - nl) / 125.0;
  }
  Vec3 centroid = Vec3::Zero();
  double total = 0.0;
  for (std::size_t f = 0; f < v.data.size(); ++f) {
    if (v.data[f] == 0.0) continue;
    const Index3 q = g.unflat(f);
    centroid += Vec3(q.i, q.j, q.k);
    total += 1.0;
  }
  const Vec3 r = p - centroid / total;
  if (r.norm() > 1e-12) {
    out[13] = r.x() / r.norm(), out[14] = r.y() / r.norm(), out[15] = r.z() / r.norm();
  }
  return out;
}

// Naive "same" convolution used as the oracle for the stand-in.
std::vector<double> brute_conv(const GridSpec& g, const std::vector<double>& in, int cin,
                               const Eigen::MatrixXd& w, const Eigen::MatrixXd& b) {
  const std::size_t nv = g.voxel_count();
  std::vector<double> out(w.rows() * nv);
  for (int o = 0; o < w.rows(); ++o)
    for (std::size_t f = 0; f < nv; ++f) {
      const Index3 c = g.unflat(f);
      double acc = b(o, 0);
      for (int ch = 0; ch < cin; ++ch)
        for (int tap = 0; tap < 27; ++tap) {
          const Index3 n{c.i + tap / 9 - 1, c.j + (tap / 3) % 3 - 1, c.k + tap % 3 - 1};
          if (g.contains(n)) acc += w(o, ch * 27 + tap) * in[ch * nv + g.flat(n.i, n.j, n.k)];
        }
      out[o * nv + f] = acc;
    }
  return out;
}

FeatureVolume random_features(std::mt19937_64& rng, int c, const GridSpec& g) {
  std::normal_distribution<double> nrm;
  FeatureVolume f(c, g);
  for (auto& x : f.data) x = nrm(rng);
  return f;
}

// A sphere shell of radius 1.2 mm on a 24^3 grid, supervised by dense
// sphere samples with outward normals.
RefineSample sphere_sample(const CoarseNoise& noise, std::uint64_t seed, const TrainConfig& cfg) {
  const GridSpec g = cube_grid(24, 0.15, Vec3::Constant(-1.8));
  const PointCloud gt = testutil::sphere_cloud(1500, 1.2, Vec3::Zero());
  const VoxelVolume v_gt = voxelize(gt, g);
  const VoxelVolume occ = perturb_occupancy(v_gt, noise, seed);
  std::vector<std::uint8_t> margin(gt.size(), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) margin[i] = std::abs(gt.points[i].y()) < 0.05;
  return make_refine_sample(occ, gt, margin, FdiLabel::from_code(36), cfg);
}

double max_abs_diff(const Model& a, const Model& b) {
  Model x = a, y = b;
  auto ta = model_tensors(x), tb = model_tensors(y);
  double m = 0.0;
  for (std::size_t t = 0; t < ta.size(); ++t) {
    m = std::max(m, (*ta[t].value - *tb[t].value).cwiseAbs().maxCoeff());
  }
  return m;
}

}  // namespace

TEST_CASE("FDI labels") {
  std::vector<int> seen(kNumToothClasses, 0);
  for (int q = 1; q <= 4; ++q)
    for (int p = 1; p <= 8; ++p) {
      const auto l = FdiLabel::from_code(q * 10 + p);
      CHECK(l.class_index() == (q - 1) * 8 + (p - 1));
      CHECK(FdiLabel::from_class_index(l.class_index()) == l);
      ++seen[l.class_index()];
    }
  for (int s : seen) CHECK(s == 1);
  CHECK(FdiLabel::from_code(11).type() == ToothType::incisor);
  CHECK(FdiLabel::from_code(23).type() == ToothType::canine);
  CHECK(FdiLabel::from_code(35).type() == ToothType::premolar);
  CHECK(FdiLabel::from_code(46).type() == ToothType::molar);
  for (int bad : {0, 9, 10, 19, 50, 51, 49}) CHECK_THROWS_AS(FdiLabel::from_code(bad), Error);
  CHECK_THROWS_AS(FdiLabel::from_class_index(32), Error);
}

TEST_CASE("occupancy perturbation") {
  std::mt19937_64 rng(1);
  const GridSpec g = cube_grid(12);
  const auto v = random_occupancy(rng, g, 0.1);
  CHECK(perturb_occupancy(v, {}, 5).data == v.data);
  const auto d = perturb_occupancy(v, {1, 0, 0.0}, 5);
  CHECK(d.count_nonzero() > v.count_nonzero());
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] != 0.0) CHECK(d.data[i] == 1.0);
  }
  const auto e = perturb_occupancy(d, {0, 1, 0.0}, 5);
  CHECK(e.count_nonzero() <= d.count_nonzero());
  const CoarseNoise noisy{1, 0, 0.2};
  CHECK(perturb_occupancy(v, noisy, 9).data == perturb_occupancy(v, noisy, 9).data);
  CHECK(perturb_occupancy(v, noisy, 9).data != perturb_occupancy(v, noisy, 10).data);
  // Flips only touch voxels with a mixed 3^3 neighbourhood.
  const auto flipped = perturb_occupancy(d, {0, 0, 0.5}, 3);
  for (std::size_t f = 0; f < d.data.size(); ++f) {
    if (flipped.data[f] == d.data[f]) continue;
    const Index3 c = g.unflat(f);
    bool on = false, off = false;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        for (int k = -1; k <= 1; ++k) {
          const Index3 n{c.i + a, c.j + b, c.k + k};
          if (!g.contains(n)) continue;
          (d[n] != 0.0 ? on : off) = true;
        }
    CHECK((on && off));
  }
  CHECK_THROWS_AS(perturb_occupancy(v, {0, 0, 1.5}, 1), Error);
}

TEST_CASE("occupancy descriptors match window loops") {
  std::mt19937_64 rng(2);
  const GridSpec g = cube_grid(11);
  for (double p : {0.02, 0.2}) {
    const auto v = random_occupancy(rng, g, p);
    const OccupancyDescriptors desc(v);
    const FeatureVolume dense = desc.dense();
    for (std::size_t f = 0; f < g.voxel_count(); ++f) {
      const auto want = brute_descriptor(v, g.unflat(f));
      for (int c = 0; c < kCoarseChannels; ++c) CHECK(std::abs(dense.at(c, f) - want[c]) < 1e-12);
    }
    const Eigen::VectorXd a = desc.channel_mean(), b = channel_mean(dense);
    for (int c = 0; c < kCoarseChannels; ++c) CHECK(std::abs(a[c] - b[c]) < 1e-12);
    const auto idx = occupied_indices(v);
    CHECK((desc.rows(idx) - gather_features(dense, v)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("oracle coarse predictor") {
  std::mt19937_64 rng(3);
  const GridSpec g = cube_grid(10);
  const auto v = random_occupancy(rng, g, 0.15);
  const auto out = oracle_coarse(v, {}, 1);
  CHECK(threshold_logits(out.logits).data == v.data);
  for (double l : out.logits.data) CHECK(std::abs(l) == kOracleLogit);
  CHECK(out.features.channels == kCoarseChannels);
  CHECK(out.features.spec == g);
  const CoarseNoise noise{1, 0, 0.05};
  const auto a = oracle_coarse(v, noise, 7), b = oracle_coarse(v, noise, 7);
  CHECK(a.logits.data == b.logits.data);
  CHECK(a.features.data == b.features.data);
  CHECK(threshold_logits(a.logits).count_nonzero() >= v.count_nonzero());
}

TEST_CASE("gather_features follows devoxelize order") {
  std::mt19937_64 rng(4);
  const GridSpec g = cube_grid(7, 0.3, Vec3(1, -2, 0.5));
  const auto f = random_features(rng, 5, g);
  VoxelVolume one(g, VolumeKind::occupancy);
  one.at(2, 3, 4) = 1.0;
  const auto e1 = gather_features(f, one);
  REQUIRE(e1.rows() == 1);
  for (int c = 0; c < 5; ++c) CHECK(e1(0, c) == f.at(c, g.flat(2, 3, 4)));

  const auto mask = random_occupancy(rng, g, 0.3);
  const auto e = gather_features(f, mask);
  const auto pts = devoxelize(mask);
  REQUIRE(static_cast<std::size_t>(e.rows()) == pts.size());
  for (std::size_t r = 0; r < pts.size(); ++r) {
    const Index3 idx = voxel_index(g, pts.points[r]);
    for (int c = 0; c < 5; ++c) CHECK(e(static_cast<Eigen::Index>(r), c) == f.at(c, g.flat(idx.i, idx.j, idx.k)));
  }
  // Removing one voxel removes exactly its row.
  auto fewer = mask;
  const auto idx = occupied_indices(mask);
  const std::size_t drop = idx.size() / 2;
  fewer[idx[drop]] = 0.0;
  const auto e2 = gather_features(f, fewer);
  REQUIRE(e2.rows() == e.rows() - 1);
  for (Eigen::Index r = 0; r < e2.rows(); ++r) {
    const Eigen::Index src = r < static_cast<Eigen::Index>(drop) ? r : r + 1;
    CHECK(e2.row(r) == e.row(src));
  }
  CHECK_THROWS_AS(gather_features(f, VoxelVolume(g, VolumeKind::occupancy)), Error);
}

TEST_CASE("convolutional stand-in matches a naive convolution") {
  std::mt19937_64 rng(5);
  const GridSpec g = cube_grid(5);
  const auto v = random_occupancy(rng, g, 0.3);
  const auto p = init_conv_predictor(11);
  auto h = brute_conv(g, v.data, 1, p.w1, p.b1);
  for (double& x : h) x = x / (1.0 + std::exp(-x));
  const auto out = brute_conv(g, h, kCoarseChannels, p.w2, p.b2);
  const auto got = conv_predict(p, v);
  const std::size_t nv = g.voxel_count();
  for (std::size_t f = 0; f < nv; ++f) {
    CHECK(std::abs(got.logits.data[f] - out[kCoarseChannels * nv + f]) < 1e-12);
    for (int c = 0; c < kCoarseChannels; ++c) CHECK(std::abs(got.features.at(c, f) - out[c * nv + f]) < 1e-12);
  }
}

TEST_CASE("convolutional stand-in BCE gradient matches finite differences") {
  std::mt19937_64 rng(6);
  const GridSpec g = cube_grid(4);
  const auto ios = random_occupancy(rng, g, 0.4);
  const auto target = random_occupancy(rng, g, 0.3);
  Model model;
  model.refiner = init_refiner(kCoarseChannels, 1);
  model.predictor = init_conv_predictor(12);
  Model grad = zeros_like(model);
  conv_bce(*model.predictor, ios, target, &*grad.predictor);
  auto params = model_tensors(model);
  auto grads = model_tensors(grad);
  const double h = 1e-5;
  int checked = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].name.rfind("predictor.", 0) != 0) continue;
    Eigen::MatrixXd& p = *params[t].value;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double keep = p.data()[i];
      p.data()[i] = keep + h;
      const double up = conv_bce(*model.predictor, ios, target, nullptr);
      p.data()[i] = keep - h;
      const double down = conv_bce(*model.predictor, ios, target, nullptr);
      p.data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      CHECK(rel_err(fd, grads[t].value->data()[i], 1e-7) < 1e-3);
      ++checked;
    }
  }
  CHECK(checked == 16 * 27 + 16 + 17 * 16 * 27 + 17);
}

TEST_CASE("prompt fusion") {
  std::mt19937_64 rng(7);
  const GridSpec g = cube_grid(4);
  const int c = 6;
  const auto f = random_features(rng, c, g);
  auto params = init_refiner(c, 3);
  const FdiLabel a = FdiLabel::from_code(16), b = FdiLabel::from_code(43);

  SUBCASE("identity configuration") {
    auto p = params;
    p.proj_w.setZero();
    p.proj_w.leftCols(c).setIdentity();
    p.proj_b.setZero();
    const auto out = fuse_tp_prompt(f, a, p, {true, true});
    for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(out.data[i] == f.data[i]);
  }
  SUBCASE("labels change the output") {
    auto p = params;
    p.proj_w = testutil::uniform_matrix(rng, c, c + kPromptDim);
    const auto x = fuse_tp_prompt(f, a, p), y = fuse_tp_prompt(f, b, p);
    double diff = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) diff += std::abs(x.data[i] - y.data[i]);
    CHECK(diff > 1e-3);
  }
  SUBCASE("zero features leave the embedding path") {
    FeatureVolume zero(c, g);
    const auto out = fuse_tp_prompt(zero, a, params);
    double norm = 0.0;
    for (double v : out.data) {
      CHECK(std::isfinite(v));
      norm += std::abs(v);
    }
    CHECK(norm > 0.0);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t v = 1; v < g.voxel_count(); ++v) CHECK(out.at(ch, v) == out.at(ch, 0));
  }
  SUBCASE("row fusion equals fuse-then-gather") {
    const auto mask = random_occupancy(rng, g, 0.4);
    const auto dense = gather_features(fuse_tp_prompt(f, b, params), mask);
    const auto rows = fuse_rows(gather_features(f, mask), channel_mean(f), b, params);
    CHECK((dense - rows).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("invalid labels") {
    CHECK_THROWS_AS(fuse_tp_prompt(f, FdiLabel{5, 1}, params), Error);
    auto p = params;
    p.embedding.conservativeResize(10, kPromptDim);
    CHECK_THROWS_AS(fuse_tp_prompt(f, a, p), Error);
  }
}

TEST_CASE("refine contract") {
  const auto params = init_refiner(kCoarseChannels, 5);
  std::mt19937_64 rng(8);
  for (std::size_t n : {std::size_t{1}, std::size_t{10}, std::size_t{1000}, std::size_t{50000}}) {
    const auto coarse = testutil::random_cloud(rng, n, -5, 5);
    const Eigen::MatrixXd e = testutil::uniform_matrix(rng, static_cast<Eigen::Index>(n), kCoarseChannels);
    const auto out = refine(coarse, e, params);
    REQUIRE(out.size() == n);
    CHECK(out.points == coarse.points);
    for (const auto& v : *out.normals) CHECK(std::abs(v.norm() - 1.0) < 1e-12);
  }
  const auto one = testutil::random_cloud(rng, 3);
  CHECK_THROWS_AS(refine(one, Eigen::MatrixXd::Zero(2, kCoarseChannels), params), Error);
}

TEST_CASE("refiner gradients match finite differences on every parameter") {
  TrainConfig cfg;
  std::mt19937_64 rng(9);
  RefineSample s;
  s.coarse = testutil::random_cloud(rng, 10, -1, 1);
  s.features = testutil::uniform_matrix(rng, 10, kCoarseChannels);
  s.pooled = testutil::uniform_matrix(rng, kCoarseChannels, 1);
  s.label = FdiLabel::from_code(27);
  s.gt = testutil::random_cloud(rng, 12, -1, 1, true);
  s.gt_kappa.assign(12, 0.0);
  for (auto& k : s.gt_kappa) k = std::uniform_real_distribution<double>(0, 3)(rng);
  s.gt_margin = {1, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0};

  Model model;
  model.refiner = init_refiner(kCoarseChannels, 21);
  // Give the offset head a nonzero last layer so every path carries gradient.
  model.refiner.offset_head.w3 = 0.1 * testutil::uniform_matrix(rng, 3, kHeadHidden);
  model.refiner.offset_head.b3 = 0.1 * testutil::uniform_matrix(rng, 3, 1);

  for (LossKind kind : {LossKind::cmpl, LossKind::chamfer}) {
    cfg.loss = kind;
    cfg.curvature_k = 5;
    Model grad = zeros_like(model);
    FrozenTargets frozen;
    refiner_loss(s, model.refiner, cfg, &grad.refiner, nullptr, &frozen);
    auto params = model_tensors(model);
    auto grads = model_tensors(grad);
    const double h = 1e-6;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
      Eigen::MatrixXd& p = *params[t].value;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double keep = p.data()[i];
        p.data()[i] = keep + h;
        const double up = refiner_loss(s, model.refiner, cfg, nullptr, &frozen).total;
        p.data()[i] = keep - h;
        const double down = refiner_loss(s, model.refiner, cfg, nullptr, &frozen).total;
        p.data()[i] = keep;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, rel_err(fd, grads[t].value->data()[i], 1e-6));
        ++checked;
      }
    }
    CHECK(checked > 15000);
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("zero-initialised refiner reproduces the coarse losses") {
  TrainConfig cfg;
  const auto s = sphere_sample({1, 0, 0.0}, 1, cfg);
  const auto params = init_refiner(kCoarseChannels, 4);
  const auto lb = refiner_loss(s, params, cfg, nullptr);
  const auto w = loss_weights(s.coarse, s, cfg);
  CHECK(lb.cmpl == cmpl(s.coarse, s.gt, w).value);
}

TEST_CASE("train_step contracts") {
  TrainConfig cfg;
  const auto s = sphere_sample({1, 0, 0.05}, 2, cfg);
  Model model;
  model.refiner = init_refiner(kCoarseChannels, 6);

  SUBCASE("zero learning rate") {
    auto zero_lr = cfg;
    zero_lr.learning_rate = 0.0;
    Model m = model;
    auto opt = init_adamw(m);
    const auto lb = train_step({s}, m, opt, 2, zero_lr);
    CHECK(lb.cmpl > 0.0);
    CHECK(lb.total == lb.bce + lb.cmpl + lb.normals);
    CHECK(max_abs_diff(m, model) == 0.0);
  }
  SUBCASE("stage 1 leaves the refiner untouched") {
    Model m = model;
    auto opt = init_adamw(m);
    const auto lb = train_step({s}, m, opt, 1, cfg);
    CHECK(lb.cmpl == 0.0);
    CHECK(max_abs_diff(m, model) == 0.0);
  }
  SUBCASE("identical runs give identical trajectories") {
    std::vector<double> a, b;
    for (auto* traj : {&a, &b}) {
      Model m = model;
      auto opt = init_adamw(m);
      for (int i = 0; i < 5; ++i) traj->push_back(train_step({s}, m, opt, 2, cfg).total);
    }
    CHECK(a == b);
  }
  SUBCASE("non-finite loss aborts the step") {
    auto bad = s;
    bad.features(0, 3) = std::nan("");
    Model m = model;
    m.refiner.offset_head.w3.setConstant(0.01);
    const Model before = m;
    auto opt = init_adamw(m);
    try {
      train_step({bad}, m, opt, 2, cfg);
      FAIL("expected NonFiniteLoss");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFiniteLoss);
      CHECK(std::string(e.what()).find("cmpl") != std::string::npos);
    }
    CHECK(max_abs_diff(m, before) == 0.0);
  }
  SUBCASE("stage 1 trains the stand-in") {
    Model m = model;
    m.predictor = init_conv_predictor(3);
    auto sample = s;
    std::mt19937_64 rng(1);
    sample.ios_occupancy = random_occupancy(rng, cube_grid(6), 0.3);
    sample.gt_occupancy = random_occupancy(rng, cube_grid(6), 0.3);
    auto opt = init_adamw(m);
    const double first = train_step({sample}, m, opt, 1, cfg).bce;
    double last = first;
    for (int i = 0; i < 30; ++i) last = train_step({sample}, m, opt, 1, cfg).bce;
    CHECK(last < first);
    CHECK((m.refiner.proj_w - model.refiner.proj_w).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("overfitting one sample cuts CMPL by 90%") {
  // 40 coarse points scattered around 40 sphere samples, each with its own
  // random feature row: small enough for the heads to memorise.
  TrainConfig cfg;
  std::mt19937_64 rng(31);
  std::normal_distribution<double> jitter(0.0, 0.1);
  RefineSample s;
  s.gt = testutil::sphere_cloud(40, 1.2, Vec3::Zero());
  for (const auto& p : s.gt.points) s.coarse.points.push_back(p + Vec3(jitter(rng), jitter(rng), jitter(rng)));
  s.features = testutil::uniform_matrix(rng, 40, kCoarseChannels);
  s.pooled = s.features.colwise().mean().transpose();
  s.label = FdiLabel::from_code(36);
  s.gt_kappa = estimate_curvature(s.gt, cfg.curvature_k).kappa;
  s.gt_margin.assign(40, 0);
  for (int i = 0; i < 40; i += 7) s.gt_margin[i] = 1;

  Model model;
  model.refiner = init_refiner(kCoarseChannels, 8);
  auto opt = init_adamw(model);
  const double initial = refiner_loss(s, model.refiner, cfg, nullptr).cmpl;
  for (int i = 0; i < 500; ++i) train_step({s}, model, opt, 2, cfg);
  const double last = refiner_loss(s, model.refiner, cfg, nullptr).cmpl;
  MESSAGE("CMPL " << initial << " -> " << last);
  CHECK(last <= 0.1 * initial);
}

TEST_CASE("training on a voxel shell reaches the radial projection floor") {
  // Projecting every coarse point onto the sphere is the best a purely
  // radial correction can do; training should get within 10% of it.
  TrainConfig cfg;
  const auto s = sphere_sample({1, 0, 0.0}, 3, cfg);
  PointCloud projected = s.coarse;
  for (auto& p : projected.points) p = 1.2 * p.normalized();
  const double floor = cmpl(projected, s.gt, loss_weights(projected, s, cfg)).value;
  Model model;
  model.refiner = init_refiner(kCoarseChannels, 8);
  auto opt = init_adamw(model);
  const double initial = refiner_loss(s, model.refiner, cfg, nullptr).cmpl;
  for (int i = 0; i < 300; ++i) train_step({s}, model, opt, 2, cfg);
  const double last = refiner_loss(s, model.refiner, cfg, nullptr).cmpl;
  MESSAGE("CMPL " << initial << " -> " << last << " (floor " << floor << ")");
  CHECK(last <= 1.1 * floor);
}

TEST_CASE("checkpoint round trip") {
  Model model;
  model.refiner = init_refiner(kCoarseChannels, 13);
  model.predictor = init_conv_predictor(14);
  const auto dir = std::filesystem::temp_directory_path() / "crowngen_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  const nlohmann::json meta = {{"stage", 2}, {"iteration", 17}, {"seed", 5}, {"config_hash", "abc"}};
  save_checkpoint(path, model, meta);
  nlohmann::json back_meta;
  Model back = load_checkpoint(path, &back_meta);
  CHECK(back_meta == meta);
  REQUIRE(back.predictor.has_value());
  auto a = model_tensors(model), b = model_tensors(back);
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].name == b[t].name);
    CHECK(*b[t].value == a[t].value->cast<float>().cast<double>());
  }
  // Re-saving a loaded checkpoint is byte-identical.
  save_checkpoint(dir / "again.ckpt", back, back_meta);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(path) == slurp(dir / "again.ckpt"));

  Model refiner_only;
  refiner_only.refiner = model.refiner;
  save_checkpoint(dir / "r.ckpt", refiner_only, meta);
  CHECK_FALSE(load_checkpoint(dir / "r.ckpt").predictor.has_value());

  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), Error);
  auto bytes = slurp(path);
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), Error);
  std::filesystem::remove_all(dir);
}
