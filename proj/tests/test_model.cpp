#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "scbct/model.hpp"

using namespace scbct;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

ModelConfig small_cfg(ModelVariant v) {
  ModelConfig cfg;
  cfg.variant = v;
  cfg.encoder.input_size = 32;
  cfg.encoder.tf_blocks = 1;
  cfg.ptrans.layers = 1;
  cfg.ptrans.k = 3;
  cfg.norm_halfwidth_mm = 204.8;
  return cfg;
}

std::vector<Tensor> rand_views(Rng& rng, size_t m, int64_t s) {
  std::vector<Tensor> out;
  for (size_t i = 0; i < m; ++i) {
    Tensor t(Shape{1, s, s});
    for (double& v : t.d) v = rng.uniform(0.0, 1.0);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Vec3> rand_points(Rng& rng, int64_t n, double r) {
  std::vector<Vec3> pts;
  for (int64_t i = 0; i < n; ++i)
    pts.push_back({rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r)});
  return pts;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("construction pins the fused width to 464") {
  ReconModel m(small_cfg(ModelVariant::base), 1);
  CHECK(m.fused_dim() == 464);
  CHECK(m.fused_dim() == kPyramidChannels[0] + kPyramidChannels[1] +
                             kPyramidChannels[2] + kPyramidChannels[3]);

  ModelConfig bad_head = small_cfg(ModelVariant::base);
  bad_head.head.in_dim = 128;
  CHECK_THROWS_AS(ReconModel(bad_head, 1), std::invalid_argument);

  ModelConfig bad_pt = small_cfg(ModelVariant::refined);
  bad_pt.ptrans.feature_dim = 256;
  CHECK_THROWS_AS(ReconModel(bad_pt, 1), std::invalid_argument);
  bad_pt.variant = ModelVariant::base;  // unused transformer is not checked
  ReconModel ok(bad_pt, 1);
  CHECK(ok.config().variant == ModelVariant::base);

  ModelConfig bad_norm = small_cfg(ModelVariant::base);
  bad_norm.norm_halfwidth_mm = 0.0;
  CHECK_THROWS_AS(ReconModel(bad_norm, 1), std::invalid_argument);

  ModelConfig bad_enc = small_cfg(ModelVariant::base);
  bad_enc.encoder.stage_ch = {64, 128, 192};
  CHECK_THROWS_AS(ReconModel(bad_enc, 1), std::invalid_argument);
  bad_enc = small_cfg(ModelVariant::base);
  bad_enc.encoder.stem_ch = 8;
  CHECK_THROWS_AS(ReconModel(bad_enc, 1), std::invalid_argument);

  // a narrower fusion keeps construction consistent end to end
  ModelConfig lvl2 = small_cfg(ModelVariant::refined);
  lvl2.fuse_levels = 2;
  lvl2.head.in_dim = 384;
  lvl2.ptrans.feature_dim = 384;
  ReconModel narrow(lvl2, 1);
  CHECK(narrow.fused_dim() == 384);
  lvl2.head.in_dim = 464;
  CHECK_THROWS_AS(ReconModel(lvl2, 1), std::invalid_argument);
}

TEST_CASE("predict yields one density per point, strictly inside (0,1)") {
  ReconModel m(small_cfg(ModelVariant::refined), 2);
  ScannerGeometry g;
  Rng rng(501);
  std::vector<Tensor> views = rand_views(rng, 2, 32);
  std::vector<double> angles{0.0, 90.0};
  std::vector<Vec3> pts = rand_points(rng, 25, 150.0);

  nn::NoGradGuard ng;
  FusionStats stats;
  Var out = m.predict(views, g, angles, pts, false, &stats);
  REQUIRE(out.shape() == Shape{25, 1});
  CHECK(stats.invisible_samples == 0);
  for (double v : out.val().d) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  CHECK_THROWS_AS(m.predict(views, g, {0.0}, pts, false),
                  std::invalid_argument);
  CHECK_THROWS_AS(m.predict({}, g, {}, pts, false), std::invalid_argument);
}

TEST_CASE("base variant holds exactly the refined weights minus the point "
          "transformer") {
  ModelConfig cb = small_cfg(ModelVariant::base);
  ModelConfig cr = small_cfg(ModelVariant::refined);
  ReconModel base(cb, 3), refined(cr, 3);

  const int64_t diff =
      refined.params().param_count() - base.params().param_count();

  const auto& p = cr.ptrans;
  const int64_t lin = [](int64_t i, int64_t o) { return i * o + o; }(0, 0);
  (void)lin;
  auto linp = [](int64_t i, int64_t o) { return i * o + o; };
  int64_t want = linp(3, p.pe_hidden) + linp(p.pe_hidden, p.feature_dim) +
                 linp(p.feature_dim, p.model_dim) +
                 linp(p.model_dim, p.feature_dim);
  want += p.layers * (2 * 2 * p.model_dim                       // ln1, ln2
                      + 4 * linp(p.model_dim, p.model_dim)      // q k v o
                      + linp(p.model_dim, p.ff_hidden) +
                      linp(p.ff_hidden, p.model_dim));
  CHECK(diff == want);

  // every base parameter name exists in the refined store too
  for (const auto& [name, var] : base.params().params)
    CHECK(refined.params().params.count(name) == 1);
}

TEST_CASE("same seed, same variant reproduces predictions bitwise") {
  ModelConfig cfg = small_cfg(ModelVariant::refined);
  ReconModel a(cfg, 7), b(cfg, 7);
  ScannerGeometry g;
  Rng rng(502);
  std::vector<Tensor> views = rand_views(rng, 2, 32);
  std::vector<double> angles{10.0, 120.0};
  std::vector<Vec3> pts = rand_points(rng, 12, 100.0);

  nn::NoGradGuard ng;
  Var oa = a.predict(views, g, angles, pts, false);
  Var ob = b.predict(views, g, angles, pts, false);
  CHECK(oa.val().d == ob.val().d);

  ReconModel c(small_cfg(ModelVariant::base), 7);
  Var oc = c.predict(views, g, angles, pts, false);
  CHECK(oc.val().d != oa.val().d);
}

TEST_CASE("view scale folds into the input projections") {
  ModelConfig c1 = small_cfg(ModelVariant::base);
  ModelConfig c2 = c1;
  c2.view_scale = 2.0;
  ReconModel a(c1, 11), b(c2, 11);
  ScannerGeometry g;
  Rng rng(503);
  std::vector<Tensor> views = rand_views(rng, 1, 32);
  std::vector<Tensor> doubled = views;
  for (double& v : doubled[0].d) v *= 2.0;
  std::vector<Vec3> pts = rand_points(rng, 8, 90.0);

  nn::NoGradGuard ng;
  Var ob = b.predict(views, g, {45.0}, pts, false);
  Var oa = a.predict(doubled, g, {45.0}, pts, false);
  CHECK(ob.val().d == oa.val().d);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig cfg = small_cfg(ModelVariant::refined);
  cfg.view_scale = 0.125;
  cfg.norm_halfwidth_mm = 173.2;
  ReconModel m(cfg, 13);

  // the optimizer keeps weights on the f32 grid; emulate that here so the
  // f32 file format is lossless
  for (auto& [name, var] : m.params().params)
    nn::round_to_f32(var.mutable_val());
  for (auto& [name, buf] : m.params().buffers) nn::round_to_f32(buf);

  CheckpointMeta meta;
  meta.step = 1234;
  Rng state_src(99);
  state_src.raw();
  meta.rng_state = state_src.state();

  const std::string p1 = "/tmp/scbct_ckpt_a.bin";
  const std::string p2 = "/tmp/scbct_ckpt_b.bin";
  save_checkpoint(p1, m, meta);

  CheckpointMeta got;
  auto loaded = load_checkpoint(p1, &got);
  CHECK(got.step == 1234);
  CHECK(got.rng_state == meta.rng_state);
  CHECK(loaded->config().variant == ModelVariant::refined);
  CHECK(loaded->config().view_scale == 0.125);
  CHECK(loaded->config().norm_halfwidth_mm == 173.2);
  CHECK(loaded->config().ptrans.sigma == cfg.ptrans.sigma);

  for (const auto& [name, var] : m.params().params)
    CHECK(loaded->params().params.at(name).val().d == var.val().d);
  for (const auto& [name, buf] : m.params().buffers)
    CHECK(loaded->params().buffers.at(name).d == buf.d);

  save_checkpoint(p2, *loaded, got);
  CHECK(slurp(p1) == slurp(p2));

  // identical predictions after the round trip
  ScannerGeometry g;
  Rng rng(504);
  std::vector<Tensor> views = rand_views(rng, 2, 32);
  std::vector<Vec3> pts = rand_points(rng, 10, 120.0);
  nn::NoGradGuard ng;
  Var before = m.predict(views, g, {0.0, 90.0}, pts, false);
  Var after = loaded->predict(views, g, {0.0, 90.0}, pts, false);
  CHECK(before.val().d == after.val().d);

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = "/tmp/scbct_ckpt_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTCKPTxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

  // valid prefix, truncated body
  ModelConfig cfg = small_cfg(ModelVariant::base);
  ReconModel m(cfg, 17);
  CheckpointMeta meta;
  meta.rng_state = Rng(1).state();
  save_checkpoint(path, m, meta);
  std::string full = slurp(path);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(full.data(), std::streamsize(full.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_checkpoint("/tmp/definitely_missing_ckpt.bin"),
                  std::runtime_error);
}
