// Acceptance harness: one verifiable statement per criterion, each checked
// against an oracle that shares no code with the implementation under test.
// Prints exactly one "criterion N: PASS/FAIL (...)" line per criterion and
// exits with the number of failures.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "../fd_check.hpp"
#include "../sart_oracle.hpp"
#include "scbct/baselines.hpp"
#include "scbct/metrics.hpp"
#include "scbct/model.hpp"
#include "scbct/pointtrans.hpp"
#include "scbct/projector.hpp"
#include "scbct/trainer.hpp"

namespace fs = std::filesystem;
using namespace scbct;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

struct Fail {
  std::string msg;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw Fail{msg};
}

// |a-b| <= eps * (1 + max(|a|,|b|)), the tolerance shape the unit suite uses
bool near(double a, double b, double eps) {
  return std::abs(a - b) <= eps * (1.0 + std::max(std::abs(a), std::abs(b)));
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

Tensor rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.d) v = rng.uniform(lo, hi);
  return t;
}

std::vector<Vec3> rand_unit_points(Rng& rng, int64_t n) {
  std::vector<Vec3> pts;
  for (int64_t i = 0; i < n; ++i)
    pts.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                   rng.uniform(-1.0, 1.0)});
  return pts;
}

double d2_ref(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  require(is.good(), "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(is), {}};
}

// ---------------------------------------------------------------- c1

std::string c1_fused_dimension() {
  require(256 + 128 + 64 + 16 == 464, "arithmetic");
  require(kFusedDim == 464, "kFusedDim != 464");
  require(fused_width(4) == 464, "fused_width(4) != 464");
  require(fused_width(1) == 256 && fused_width(2) == 384 &&
              fused_width(3) == 448,
          "prefix widths wrong");

  ModelConfig mc;
  mc.variant = ModelVariant::base;
  mc.encoder.input_size = 16;
  mc.encoder.tf_blocks = 1;
  ReconModel model(mc, 1);
  require(model.fused_dim() == 464, "constructed model fused_dim != 464");

  bool threw = false;
  try {
    ModelConfig bad = mc;
    bad.encoder.stage_ch = {64, 128, 192};
    ReconModel m2(bad, 1);
  } catch (const std::invalid_argument&) {
    threw = true;
  }
  require(threw, "encoder width 192 accepted");

  threw = false;
  try {
    ModelConfig bad = mc;
    bad.head.in_dim = 384;  // fuse_levels stays 4
    ReconModel m3(bad, 1);
  } catch (const std::invalid_argument&) {
    threw = true;
  }
  require(threw, "head width mismatch accepted");
  return "fused dim 464 = 256+128+64+16 enforced at construction";
}

// ---------------------------------------------------------------- c2

std::string c2_gaussian_weights() {
  double max_err = 0.0;
  for (double sigma : {0.1, 0.37, 1.0}) {
    NeighborGraph g;
    g.n = 1;
    g.k = 3;
    g.idx = {0, 1, 2};
    g.d2 = {0.0, sigma * sigma, 4.0 * sigma * sigma};
    const Tensor w = gaussian_weights(g, sigma);
    // independent evaluation of exp(-d^2 / (2 sigma^2)) at d = 0, sigma,
    // 2 sigma
    const double want[3] = {1.0, std::exp(-0.5), std::exp(-2.0)};
    for (int i = 0; i < 3; ++i) {
      require(near(w.d[size_t(i)], want[i], 1e-12),
              fmt("sigma %.2f slot %d: got %.17g want %.17g", sigma, i,
                  w.d[size_t(i)], want[i]));
      max_err = std::max(max_err, std::abs(w.d[size_t(i)] - want[i]));
    }
  }
  bool threw = false;
  try {
    NeighborGraph g;
    g.n = 1;
    g.k = 1;
    g.idx = {0};
    g.d2 = {0.0};
    gaussian_weights(g, 0.0);
  } catch (const std::invalid_argument&) {
    threw = true;
  }
  require(threw, "sigma 0 accepted");
  return fmt("exp(-d^2/2sigma^2) at d in {0, sigma, 2 sigma}, max err %.2e",
             max_err);
}

// ---------------------------------------------------------------- c3

std::string c3_neighbor_attention() {
  Rng rng(304);
  const int64_t n = 64, k = 3, heads = 4, dim = 8, dk = dim / heads;
  const double sigma = 0.1;
  const std::vector<Vec3> pts = rand_unit_points(rng, n);
  const NeighborGraph g = build_neighbor_graph(pts, k);

  const Tensor qt = rand_t({n, dim}, rng), kt = rand_t({n, dim}, rng),
               vt = rand_t({n, dim}, rng);
  nn::NoGradGuard ng;
  const Var out = nn::neighbor_attention(Var(qt), Var(kt), Var(vt), g.idx,
                                         gaussian_log_bias(g, sigma), heads);
  require(out.shape() == Shape{n, dim}, "output shape");

  // dense oracle: full n x n score matrix with non-neighbors masked to -inf
  const double inf = std::numeric_limits<double>::infinity();
  double max_err = 0.0;
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t i = 0; i < n; ++i) {
      std::vector<double> score(size_t(n), -inf);
      for (int64_t s = 0; s < k; ++s) {
        const int64_t j = g.idx[size_t(i * k + s)];
        const double w = std::exp(-d2_ref(pts[size_t(i)], pts[size_t(j)]) /
                                  (2.0 * sigma * sigma));
        double qk = 0.0;
        for (int64_t c = 0; c < dk; ++c)
          qk += qt.at2(i, h * dk + c) * kt.at2(j, h * dk + c);
        score[size_t(j)] = qk / std::sqrt(double(dk)) + std::log(w);
      }
      double mx = -inf, z = 0.0;
      for (double s : score) mx = std::max(mx, s);
      std::vector<double> a(size_t(n), 0.0);
      for (int64_t j = 0; j < n; ++j)
        if (score[size_t(j)] != -inf) {
          a[size_t(j)] = std::exp(score[size_t(j)] - mx);
          z += a[size_t(j)];
        }
      for (int64_t c = 0; c < dk; ++c) {
        double want = 0.0;
        for (int64_t j = 0; j < n; ++j)
          if (a[size_t(j)] != 0.0)
            want += a[size_t(j)] / z * vt.at2(j, h * dk + c);
        const double got = out.val().at2(i, h * dk + c);
        require(near(got, want, 1e-10),
                fmt("row %lld head %lld ch %lld: got %.17g want %.17g",
                    (long long)i, (long long)h, (long long)c, got, want));
        max_err = std::max(max_err, std::abs(got - want));
      }
    }
  }

  // zero q/k and identity v expose the attention rows directly
  Tensor qz({n, n}, 0.0), kz({n, n}, 0.0), ident({n, n}, 0.0);
  for (int64_t i = 0; i < n; ++i) ident.at2(i, i) = 1.0;
  const Var rowsv = nn::neighbor_attention(Var(qz), Var(kz), Var(ident),
                                           g.idx, gaussian_log_bias(g, sigma),
                                           1);
  double worst_row = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double a = rowsv.val().at2(i, j);
      require(a >= 0.0 && a <= 1.0 + 1e-12, "weight outside [0,1]");
      row += a;
    }
    require(std::abs(row - 1.0) <= 1e-6,
            fmt("row %lld sums to %.12f", (long long)i, row));
    worst_row = std::max(worst_row, std::abs(row - 1.0));
  }
  return fmt("dense oracle max err %.2e, worst row-sum dev %.2e (n=64, k=3)",
             max_err, worst_row);
}

// ---------------------------------------------------------------- c4

std::string c4_finite_differences() {
  // fusion max path
  Rng rng(205);
  ScannerGeometry geom;
  const std::array<int64_t, 4> sizes{3, 4, 6, 8};
  const auto rand_pyramid = [&](bool grad) {
    FeaturePyramid p;
    for (size_t s = 0; s < 4; ++s)
      p.maps[s] =
          Var(rand_t({kPyramidChannels[s], sizes[s], sizes[s]}, rng), grad);
    return p;
  };
  std::vector<FeaturePyramid> pyrs{rand_pyramid(true), rand_pyramid(true)};
  const std::vector<double> angles{0.0, 75.0};
  std::vector<Vec3> pts;
  for (int i = 0; i < 9; ++i)
    pts.push_back({rng.uniform(-130.0, 130.0), rng.uniform(-130.0, 130.0),
                   rng.uniform(-130.0, 130.0)});
  Var wsum_f(rand_t({9, kFusedDim}, rng));
  auto fwd_fusion = [&] {
    return nn::sum(
        nn::mul(query_point_features(pyrs, geom, angles, pts), wsum_f));
  };
  std::vector<Var> fusion_params;
  for (auto& p : pyrs)
    for (auto& m : p.maps) fusion_params.push_back(m);
  const FdReport rf = fd_check(fwd_fusion, fusion_params, 5, rng);
  require(rf.checked == 40, "fusion: wrong sample count");
  require(rf.max_rel < 1e-4, fmt("fusion max rel %.3e", rf.max_rel));

  // positional encoding MLP on raw coordinates
  nn::ParamStore ps_pe;
  Rng rpe(501);
  nn::Linear pe1 = nn::Linear::make(ps_pe, "pe1", 3, 8, rpe);
  nn::Linear pe2 = nn::Linear::make(ps_pe, "pe2", 8, 24, rpe);
  const Tensor coords = rand_t({12, 3}, rpe);
  Var wsum_p(rand_t({12, 24}, rpe));
  auto fwd_pe = [&] {
    return nn::sum(nn::mul(
        nn::linear(nn::relu(nn::linear(Var(coords), pe1.w, pe1.b)), pe2.w,
                   pe2.b),
        wsum_p));
  };
  std::vector<Var> pe_params{pe1.w, pe1.b, pe2.w, pe2.b};
  const FdReport rp = fd_check(fwd_pe, pe_params, 6, rpe);
  require(rp.max_rel < 1e-4, fmt("pos enc max rel %.3e", rp.max_rel));

  // neighbor attention over a fixed graph
  Rng ratt(502);
  const std::vector<Vec3> apts = rand_unit_points(ratt, 16);
  const NeighborGraph g = build_neighbor_graph(apts, 3);
  const Tensor bias = gaussian_log_bias(g, 0.1);
  Var q(rand_t({16, 8}, ratt), true), k(rand_t({16, 8}, ratt), true),
      v(rand_t({16, 8}, ratt), true);
  Var wsum_a(rand_t({16, 8}, ratt));
  auto fwd_att = [&] {
    return nn::sum(nn::mul(nn::neighbor_attention(q, k, v, g.idx, bias, 2),
                           wsum_a));
  };
  const FdReport ra = fd_check(fwd_att, {q, k, v}, 8, ratt);
  require(ra.max_rel < 1e-4, fmt("attention max rel %.3e", ra.max_rel));

  // prediction head in both modes
  PredictionHeadConfig hc;
  hc.in_dim = 24;
  hc.hidden = 16;
  nn::ParamStore ps_h;
  Rng rh(503), rhd(504);
  PredictionHead head(ps_h, "head", hc, rh);
  Var hx(rand_t({12, hc.in_dim}, rhd));
  Var wsum_h(rand_t({12, 1}, rhd));
  std::vector<Var> head_params;
  for (auto& [name, var] : ps_h.params) head_params.push_back(var);
  auto fwd_train = [&] { return nn::sum(nn::mul(head(hx, true), wsum_h)); };
  const FdReport rt = fd_check(fwd_train, head_params, 4, rhd, 1e-7, 1e-2);
  require(rt.max_rel < 1e-4, fmt("head train max rel %.3e", rt.max_rel));
  auto fwd_eval = [&] { return nn::sum(nn::mul(head(hx, false), wsum_h)); };
  const FdReport re = fd_check(fwd_eval, head_params, 4, rhd, 1e-7, 1e-2);
  require(re.max_rel < 1e-4, fmt("head eval max rel %.3e", re.max_rel));

  return fmt("max rel: fusion %.1e, pos-enc %.1e, attention %.1e, "
             "head %.1e/%.1e",
             rf.max_rel, rp.max_rel, ra.max_rel, rt.max_rel, re.max_rel);
}

// ---------------------------------------------------------------- c5

// independent oracle: full sort of all candidates by (squared distance,
// index), self entry pinned to the front
NeighborGraph oracle_knn(const std::vector<Vec3>& pts, int64_t k) {
  const int64_t n = int64_t(pts.size());
  NeighborGraph g;
  g.n = n;
  g.k = k;
  g.idx.resize(size_t(n * k));
  g.d2.resize(size_t(n * k));
  std::vector<std::pair<double, int32_t>> all;
  for (int64_t i = 0; i < n; ++i) {
    all.clear();
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      all.push_back({d2_ref(pts[size_t(i)], pts[size_t(j)]), int32_t(j)});
    }
    std::sort(all.begin(), all.end());
    g.idx[size_t(i * k)] = int32_t(i);
    g.d2[size_t(i * k)] = 0.0;
    for (int64_t s = 0; s < k - 1; ++s) {
      g.idx[size_t(i * k + 1 + s)] = all[size_t(s)].second;
      g.d2[size_t(i * k + 1 + s)] = all[size_t(s)].first;
    }
  }
  return g;
}

std::string c5_knn_exact() {
  Rng rng(302);
  std::vector<Vec3> continuous = rand_unit_points(rng, 2000);
  std::vector<Vec3> snapped = rand_unit_points(rng, 2000);
  for (Vec3& p : snapped) {  // coarse lattice, exact ties are common
    p.x = std::round(p.x / 0.125) * 0.125;
    p.y = std::round(p.y / 0.125) * 0.125;
    p.z = std::round(p.z / 0.125) * 0.125;
  }
  int compared = 0;
  for (const auto* pts : {&continuous, &snapped}) {
    for (int64_t k : {3, 6, 9, 15}) {
      const NeighborGraph want = oracle_knn(*pts, k);
      const NeighborGraph got = build_neighbor_graph(*pts, k);
      require(got.idx == want.idx,
              fmt("indices differ (k=%lld, %s)", (long long)k,
                  pts == &snapped ? "ties" : "continuous"));
      require(got.d2 == want.d2, fmt("distances differ (k=%lld)",
                                     (long long)k));
      ++compared;
    }
  }
  // coincident points tie-break by ascending index
  const std::vector<Vec3> dup{{0, 0, 0}, {0.5, 0, 0}, {0, 0, 0},
                              {0, 0.5, 0}, {0, 0, 0}};
  const NeighborGraph gd = build_neighbor_graph(dup, 3);
  require(gd.idx[4 * 3 + 0] == 4 && gd.idx[4 * 3 + 1] == 0 &&
              gd.idx[4 * 3 + 2] == 2,
          "duplicate tie-break order");
  return fmt("%d graph pairs bit-equal on 2000 points, k in {3,6,9,15}, "
             "with and without ties",
             compared);
}

// ---------------------------------------------------------------- c6

double trilinear_oracle(const Volume& v, double px, double py, double pz) {
  const auto to_idx = [](double p, int n) {
    const double i = (p + 1.0) * 0.5 * (n - 1);
    return std::clamp(i, 0.0, double(n - 1));
  };
  const double ix = to_idx(px, v.grid.nx), iy = to_idx(py, v.grid.ny),
               iz = to_idx(pz, v.grid.nz);
  const int x0 = int(std::floor(ix)), y0 = int(std::floor(iy)),
            z0 = int(std::floor(iz));
  double acc = 0.0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const int cx = std::min(x0 + dx, v.grid.nx - 1);
        const int cy = std::min(y0 + dy, v.grid.ny - 1);
        const int cz = std::min(z0 + dz, v.grid.nz - 1);
        double wx = dx ? ix - x0 : 1.0 - (ix - x0);
        double wy = dy ? iy - y0 : 1.0 - (iy - y0);
        double wz = dz ? iz - z0 : 1.0 - (iz - z0);
        if (x0 == v.grid.nx - 1) wx = dx ? 0.0 : 1.0;
        if (y0 == v.grid.ny - 1) wy = dy ? 0.0 : 1.0;
        if (z0 == v.grid.nz - 1) wz = dz ? 0.0 : 1.0;
        acc += wx * wy * wz * v.at(cx, cy, cz);
      }
  return acc;
}

double bilinear_oracle(const std::vector<double>& img, int npu, int npv,
                       double u, double v) {
  const auto to_px = [](double q, int n) {
    return std::clamp(q * n - 0.5, 0.0, double(n - 1));
  };
  const double pu = to_px(u, npu), pv = to_px(v, npv);
  const int u0 = int(std::floor(pu)), v0 = int(std::floor(pv));
  double acc = 0.0;
  for (int dv = 0; dv <= 1; ++dv)
    for (int du = 0; du <= 1; ++du) {
      const int cu = std::min(u0 + du, npu - 1);
      const int cv = std::min(v0 + dv, npv - 1);
      double wu = du ? pu - u0 : 1.0 - (pu - u0);
      double wv = dv ? pv - v0 : 1.0 - (pv - v0);
      if (u0 == npu - 1) wu = du ? 0.0 : 1.0;
      if (v0 == npv - 1) wv = dv ? 0.0 : 1.0;
      acc += wu * wv * img[size_t(cv) * npu + cu];
    }
  return acc;
}

std::string c6_interpolation() {
  Rng rng(21);
  Volume v = make_volume({9, 9, 9, 1.0, 1.0, 1.0});
  for (auto& x : v.data) x = float(rng.uniform());
  double tri_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    double p[3];
    for (auto& c : p) c = rng.uniform(-1.3, 1.3);
    const double got = trilinear_sample(v, p[0], p[1], p[2]);
    const double want = trilinear_oracle(v, p[0], p[1], p[2]);
    require(near(got, want, 1e-12),
            fmt("trilinear query %d: got %.17g want %.17g", i, got, want));
    tri_err = std::max(tri_err, std::abs(got - want));
  }

  const int npu = 7, npv = 5;
  std::vector<double> img(size_t(npu) * npv);
  for (auto& x : img) x = rng.uniform();
  double bi_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-0.2, 1.2), w = rng.uniform(-0.2, 1.2);
    const double got = bilinear_sample_image(img, npu, npv, u, w);
    const double want = bilinear_oracle(img, npu, npv, u, w);
    require(near(got, want, 1e-12),
            fmt("bilinear query %d: got %.17g want %.17g", i, got, want));
    bi_err = std::max(bi_err, std::abs(got - want));
  }
  return fmt("1000 queries each: trilinear max err %.2e, bilinear max err "
             "%.2e",
             tri_err, bi_err);
}

// ---------------------------------------------------------------- c7

struct Ray {
  Vec3 o, d;
};

Ray ray_for_pixel(const ScannerGeometry& g, double angle, int iu, int iv) {
  const double rad = angle * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const auto rot = [&](double x, double y, double z) {
    return Vec3{c * x - s * y, s * x + c * y, z};
  };
  const Vec3 src = rot(g.sid_mm, 0, 0);
  const double u = ((iu + 0.5) / g.det_px_u - 0.5) * g.det_mm_u;
  const double v = ((iv + 0.5) / g.det_px_v - 0.5) * g.det_mm_v;
  const Vec3 pix = rot(g.sid_mm - g.sdd_mm, u, v);
  Vec3 d{pix.x - src.x, pix.y - src.y, pix.z - src.z};
  const double n = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
  return {src, {d.x / n, d.y / n, d.z / n}};
}

double box_chord(const Ray& r, double hx, double hy, double hz) {
  double t0 = -1e300, t1 = 1e300;
  const double o[3] = {r.o.x, r.o.y, r.o.z}, d[3] = {r.d.x, r.d.y, r.d.z};
  const double h[3] = {hx, hy, hz};
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (std::abs(o[a]) > h[a]) return 0.0;
      continue;
    }
    double ta = (-h[a] - o[a]) / d[a], tb = (h[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return std::max(0.0, t1 - t0);
}

std::string c7_projector() {
  // analytic chord through the cube phantom's central ray
  Volume cube = make_cube_phantom(32, 2.0);  // 64 mm box, 32 mm solid cube
  ScannerGeometry g;
  g.det_px_u = g.det_px_v = 65;  // odd: a true central pixel exists
  g.det_mm_u = g.det_mm_v = 65 * 4.0;
  g.vol_mm_x = g.vol_mm_y = g.vol_mm_z = 64.0;
  const std::vector<double> img = render_drr(cube, g, 0.0);
  const double got = img[size_t(32) * 65 + 32];
  const double chord = box_chord(ray_for_pixel(g, 0.0, 32, 32), 16, 16, 16);
  require(std::abs(chord - 32.0) <= 1e-6, "oracle chord is not 32 mm");
  require(std::abs(got - chord) <= 0.01 * chord,
          fmt("central ray %.6f vs chord %.6f", got, chord));

  // adjointness on a 16^3 grid via inner products
  ScannerGeometry ga;
  ga.sid_mm = 10000.0;  // near-parallel so pixel and voxel footprints align
  ga.sdd_mm = 15000.0;
  ga.det_px_u = ga.det_px_v = 16;
  ga.det_mm_u = ga.det_mm_v = 16 * 3.0;
  ga.vol_mm_x = ga.vol_mm_y = ga.vol_mm_z = 32.0;
  const GridSpec grid{16, 16, 16, 2.0, 2.0, 2.0};
  const int nvox = int(grid.count()), npix = 16 * 16;
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Volume V = make_volume(grid);
    for (auto& x : V.data) x = float(rng.uniform());
    std::vector<double> I(size_t(npix), 0.0);
    for (auto& x : I) x = rng.uniform();
    const double angle = trial * 37.0;
    const std::vector<double> av = render_drr(V, ga, angle, 1.0);
    std::vector<double> bi(size_t(nvox), 0.0);
    backproject(I, ga, angle, grid, BpWeight::adjoint, bi);
    double lhs = 0.0, rhs = 0.0;
    for (int i = 0; i < npix; ++i) lhs += av[size_t(i)] * I[size_t(i)];
    for (int j = 0; j < nvox; ++j) rhs += bi[size_t(j)] * double(V.data[size_t(j)]);
    const double rel = std::abs(lhs - rhs) / std::abs(lhs);
    require(rel <= 0.05, fmt("trial %d: <Av,i>=%.6g <v,Bi>=%.6g rel %.3f",
                             trial, lhs, rhs, rel));
    worst = std::max(worst, rel);
  }

  // linearity in the volume
  Rng rl(17);
  const GridSpec gl{16, 16, 16, 4, 4, 4};
  Volume u = make_volume(gl), w = make_volume(gl);
  for (auto& x : u.data) x = float(rl.uniform());
  for (auto& x : w.data) x = float(rl.uniform());
  Volume sum_v = make_volume(gl), twice = make_volume(gl);
  for (size_t i = 0; i < u.data.size(); ++i) {
    sum_v.data[i] = u.data[i] + w.data[i];
    twice.data[i] = 2.0f * u.data[i];
  }
  ScannerGeometry gli;
  gli.det_px_u = gli.det_px_v = 16;
  gli.det_mm_u = gli.det_mm_v = 96.0;
  gli.vol_mm_x = gli.vol_mm_y = gli.vol_mm_z = 64.0;
  const auto iu = render_drr(u, gli, 40.0), iw = render_drr(w, gli, 40.0);
  const auto is = render_drr(sum_v, gli, 40.0),
             i2 = render_drr(twice, gli, 40.0);
  double maxv = 0.0, lin_err = 0.0;
  for (double x : is) maxv = std::max(maxv, std::abs(x));
  for (size_t i = 0; i < iu.size(); ++i) {
    lin_err = std::max(lin_err, std::abs(is[i] - (iu[i] + iw[i])));
    lin_err = std::max(lin_err, std::abs(i2[i] - 2.0 * iu[i]));
  }
  require(lin_err <= 1e-6 * std::max(maxv, 1.0),
          fmt("linearity err %.3e vs scale %.3e", lin_err, maxv));
  return fmt("chord err %.3f%%, adjointness worst %.2f%%, linearity err "
             "%.1e",
             100.0 * std::abs(got - chord) / chord, 100.0 * worst, lin_err);
}

// ---------------------------------------------------------------- c8

double rel_err(const Volume& x, const Volume& ref) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double d = double(x.data[i]) - double(ref.data[i]);
    num += d * d;
    den += double(ref.data[i]) * double(ref.data[i]);
  }
  return std::sqrt(num / den);
}

std::string c8_sart() {
  const Volume gt = make_shell_phantom(16, 25.6, 9);
  ScannerGeometry g;
  g.det_px_u = g.det_px_v = 16;
  const std::vector<double> angles = sample_view_angles(36, 0, true);
  const ProjectionSet ps = render_projections(gt, g, angles);

  // reconstruction error strictly decreases over the first 10 sweeps
  std::vector<double> errs;
  for (int it = 1; it <= 10; ++it)
    errs.push_back(rel_err(sart_reconstruct(ps, gt.grid, it, 0.5), gt));
  for (size_t i = 1; i < errs.size(); ++i)
    require(errs[i] < errs[i - 1],
            fmt("error rose at sweep %zu: %.6f -> %.6f", i + 1, errs[i - 1],
                errs[i]));

  // projection residual after 50 sweeps is under 10% of the initial one
  double b0 = 0.0;
  for (const auto& view : ps.views)
    for (float f : view) b0 += double(f) * double(f);
  b0 = std::sqrt(b0);
  SartReport rep;
  const Volume rec50 = sart_reconstruct(ps, gt.grid, 50, 0.5, &rep);
  require(rep.residual_norm.size() == 50, "missing residual log");
  const double frac = rep.residual_norm.back() / b0;
  require(frac < 0.10, fmt("final residual %.1f%% of initial", 100 * frac));

  // dense-matrix reference oracle agrees after 10 sweeps
  const Volume rec10 = sart_reconstruct(ps, gt.grid, 10, 0.5);
  const testref::DenseSartResult dense =
      testref::dense_sart(ps, gt.grid, 10, 0.5);
  for (size_t i = 1; i < dense.residual_norm.size(); ++i)
    require(dense.residual_norm[i] < dense.residual_norm[i - 1],
            "oracle residual not monotone");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t j = 0; j < dense.x.size(); ++j) {
    const double a = double(rec10.data[j]), b = dense.x[j];
    dot += a * b;
    na += a * a;
    nb += b * b;
  }
  const double cosine = dot / std::sqrt(na * nb);
  require(cosine > 0.95, fmt("cosine to dense oracle %.4f", cosine));
  Volume dense_vol = gt;
  for (size_t j = 0; j < dense.x.size(); ++j)
    dense_vol.data[j] = float(dense.x[j]);
  const double ea = rel_err(rec10, gt), eb = rel_err(dense_vol, gt);
  require(ea < 2.0 * eb + 0.05 && eb < 2.0 * ea + 0.05,
          fmt("gt distance mismatch: %.4f vs %.4f", ea, eb));

  return fmt("error %.4f -> %.4f over 10 sweeps, 50-sweep residual %.1f%% "
             "of initial, oracle cosine %.4f",
             errs.front(), errs.back(), 100 * frac, cosine);
}

// ---------------------------------------------------------------- c9/c10

TrainConfig protocol_config(ModelVariant variant) {
  TrainConfig cfg;
  cfg.model.variant = variant;
  cfg.model.encoder.input_size = 64;
  cfg.geom.det_px_u = 64;
  cfg.geom.det_px_v = 64;
  cfg.views = 6;
  cfg.n_points = 2048;
  cfg.epochs = 500;  // one scan, batch 1: epochs == optimizer steps
  cfg.batch_size = 1;
  cfg.phantom_size = 64;
  cfg.train_scans = 1;
  cfg.val_scans = 0;
  cfg.test_scans = 0;
  cfg.seed = 42;
  return cfg;
}

struct OverfitOutcome {
  double first10 = 0.0, last10 = 0.0;
  double psnr = 0.0, ssim_v = 0.0;
  int64_t steps = 0;
};

OverfitOutcome overfit(const TrainConfig& cfg,
                       const std::vector<TrainScan>& scans,
                       const std::string& out_dir) {
  const TrainOutput out = train_model(cfg, scans, out_dir);
  OverfitOutcome o;
  o.steps = int64_t(out.losses.size());
  require(o.steps == cfg.epochs, "training did not complete");
  for (double l : out.losses) require(std::isfinite(l), "non-finite loss");
  for (int i = 0; i < 10; ++i) {
    o.first10 += out.losses[size_t(i)] / 10.0;
    o.last10 += out.losses[out.losses.size() - 1 - size_t(i)] / 10.0;
  }
  const auto model = load_checkpoint(out.checkpoint_path);
  const Volume rec = reconstruct_volume(*model, scans[0].ps, scans[0].gt.grid);
  o.psnr = psnr_db(rec, scans[0].gt, 1.0);
  o.ssim_v = ssim(rec, scans[0].gt, 1.0);
  return o;
}

std::string c9_overfit_refined() {
  const TrainConfig cfg = protocol_config(ModelVariant::refined);
  const std::vector<TrainScan> scans = build_dataset(cfg, DataSplit::train);
  const fs::path dir = fresh_dir("scbct_accept_c9");
  const OverfitOutcome o = overfit(cfg, scans, dir.string());

  const Volume sart = sart_reconstruct(scans[0].ps, scans[0].gt.grid, 50, 0.5);
  const double psnr_sart = psnr_db(sart, scans[0].gt, 1.0);

  const double ratio = o.first10 / o.last10;
  require(ratio >= 10.0,
          fmt("loss fell only %.1fx (%.5f -> %.5f)", ratio, o.first10,
              o.last10));
  require(o.psnr > psnr_sart,
          fmt("model %.2f dB did not beat 50-sweep SART %.2f dB", o.psnr,
              psnr_sart));
  return fmt("loss %.5f -> %.5f (%.0fx) over %lld steps; model %.2f dB > "
             "SART-50 %.2f dB",
             o.first10, o.last10, ratio, (long long)o.steps, o.psnr,
             psnr_sart);
}

std::string c10_both_variants() {
  const TrainConfig base_cfg = protocol_config(ModelVariant::base);
  const TrainConfig ref_cfg = protocol_config(ModelVariant::refined);
  // shared seed: identical phantom, angles, and point stream
  const std::vector<TrainScan> scans =
      build_dataset(base_cfg, DataSplit::train);

  const fs::path dir = fresh_dir("scbct_accept_c10");
  const OverfitOutcome ob = overfit(base_cfg, scans, (dir / "base").string());
  const OverfitOutcome orf = overfit(ref_cfg, scans, (dir / "refined").string());

  const Volume sart = sart_reconstruct(scans[0].ps, scans[0].gt.grid, 50, 0.5);
  const double psnr_sart = psnr_db(sart, scans[0].gt, 1.0);
  require(ob.psnr > psnr_sart,
          fmt("base %.2f dB did not beat SART %.2f dB", ob.psnr, psnr_sart));
  require(orf.psnr > psnr_sart,
          fmt("refined %.2f dB did not beat SART %.2f dB", orf.psnr,
              psnr_sart));
  const char* order = orf.psnr > ob.psnr ? "refined > base" : "base >= refined";
  return fmt("SART-50 %.2f dB; base %.2f dB, refined %.2f dB; ordering "
             "observed: %s (reported, not asserted)",
             psnr_sart, ob.psnr, orf.psnr, order);
}

// ---------------------------------------------------------------- c11

std::string g_cli_path = "./scbct";

int run_cli(const std::string& args, std::string* out = nullptr) {
  const std::string cmd = g_cli_path + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  require(pipe != nullptr, "popen failed");
  std::string text;
  char buf[4096];
  size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) text.append(buf, got);
  const int status = pclose(pipe);
  if (out) *out = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string c11_pipeline_determinism() {
  require(fs::exists(g_cli_path), "CLI not found at " + g_cli_path +
                                      " (pass --cli)");
  const auto pipeline = [&](const fs::path& dir) {
    ScannerGeometry g;
    g.det_px_u = g.det_px_v = 32;
    save_geometry(g, (dir / "geom.cfg").string());
    std::string log;
    require(run_cli("phantom --kind shells --size 32 --seed 3 --out " +
                        (dir / "p.vol").string(), &log) == 0,
            "phantom failed: " + log);
    require(run_cli("drr --volume " + (dir / "p.vol").string() + " --geom " +
                        (dir / "geom.cfg").string() +
                        " --views 3 --seed 7 --out " +
                        (dir / "proj").string(), &log) == 0,
            "drr failed: " + log);
    require(run_cli("train --volume " + (dir / "p.vol").string() +
                        " --proj " + (dir / "proj").string() +
                        " --model refined --epochs 2 --points 256 --batch 1"
                        " --seed 5 --out " + (dir / "run").string(), &log) == 0,
            "train failed: " + log);
    require(run_cli("reconstruct --ckpt " +
                        (dir / "run" / "checkpoint.bin").string() +
                        " --proj " + (dir / "proj").string() +
                        " --size 32 --out " + (dir / "rec.vol").string(),
                    &log) == 0,
            "reconstruct failed: " + log);
    std::string ev;
    require(run_cli("eval --pred " + (dir / "rec.vol").string() + " --gt " +
                        (dir / "p.vol").string(), &ev) == 0,
            "eval failed: " + ev);
    return ev;
  };

  const fs::path da = fresh_dir("scbct_accept_c11_a");
  const fs::path db = fresh_dir("scbct_accept_c11_b");
  const std::string eva = pipeline(da);
  const std::string evb = pipeline(db);

  require(slurp(da / "run" / "loss.csv") == slurp(db / "run" / "loss.csv"),
          "loss logs differ between same-seed runs");
  require(slurp(da / "rec.raw") == slurp(db / "rec.raw"),
          "reconstructions differ between same-seed runs");
  require(eva == evb, "eval outputs differ");
  std::string first_line = eva.substr(0, eva.find('\n'));
  return "same-seed pipelines bit-identical (loss log, reconstruction); " +
         first_line;
}

// ---------------------------------------------------------------- c12

std::string c12_ablation_grids() {
  TrainConfig cfg = protocol_config(ModelVariant::refined);
  cfg.epochs = 40;  // shortened schedule; the sweep structure is the subject

  const fs::path dir = fresh_dir("scbct_accept_c12");
  std::ostringstream trends;
  const struct {
    AblationAxis axis;
    std::vector<std::string> values;
  } sweeps[] = {
      {AblationAxis::n_points, {"5000", "10000", "20000"}},
      {AblationAxis::k, {"3", "6", "9", "15"}},
      {AblationAxis::features, {"f4", "f4f3", "f4f3f2", "full"}},
  };
  for (const auto& sw : sweeps) {
    const std::string name = ablation_axis_name(sw.axis);
    const std::vector<AblationRow> rows =
        run_ablation(sw.axis, sw.values, cfg, dir.string());
    require(rows.size() == sw.values.size(),
            name + ": wrong row count");
    const fs::path csv = dir / ("ablation_" + name + ".csv");
    require(fs::exists(csv), name + ": csv missing");
    std::ifstream is(csv);
    std::string line;
    require(std::getline(is, line) && line == "value,psnr,ssim",
            name + ": bad csv header");
    size_t nrows = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const size_t c1p = line.find(','), c2p = line.find(',', c1p + 1);
      require(c1p != std::string::npos && c2p != std::string::npos,
              name + ": malformed csv row " + line);
      require(line.substr(0, c1p) == sw.values[nrows],
              name + ": row order mismatch");
      const double p = std::stod(line.substr(c1p + 1, c2p - c1p - 1));
      const double s = std::stod(line.substr(c2p + 1));
      require(std::isfinite(p) && std::isfinite(s) && p > 0.0,
              name + ": non-finite metrics");
      ++nrows;
    }
    require(nrows == sw.values.size(), name + ": csv row count");
    trends << name << ":";
    for (const auto& r : rows)
      trends << " " << r.value << "=" << fmt("%.2f", r.psnr_db) << "dB";
    trends << "; ";
  }
  return "grids reproduced as well-formed CSVs; trends (reported, not "
         "asserted): " + trends.str();
}

// ---------------------------------------------------------------- driver

struct Criterion {
  int id;
  const char* what;
  std::function<std::string()> run;
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) only = std::atoi(argv[++i]);
    else if (a == "--cli" && i + 1 < argc) g_cli_path = argv[++i];
    else {
      std::fprintf(stderr,
                   "usage: %s [--criterion N] [--cli path/to/scbct]\n",
                   argv[0]);
      return 64;
    }
  }

  const std::vector<Criterion> criteria{
      {1, "fused feature dimension", c1_fused_dimension},
      {2, "gaussian neighbor weights", c2_gaussian_weights},
      {3, "neighbor attention vs dense oracle", c3_neighbor_attention},
      {4, "finite-difference gradients", c4_finite_differences},
      {5, "knn vs brute-force oracle", c5_knn_exact},
      {6, "interpolation vs corner weights", c6_interpolation},
      {7, "projector chord/adjointness/linearity", c7_projector},
      {8, "sart convergence vs dense oracle", c8_sart},
      {9, "refined variant overfits one scan", c9_overfit_refined},
      {10, "both variants beat sart", c10_both_variants},
      {11, "pipeline determinism via cli", c11_pipeline_determinism},
      {12, "ablation grids", c12_ablation_grids},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = false;
    try {
      detail = c.run();
      pass = true;
    } catch (const Fail& f) {
      detail = f.msg;
    } catch (const std::exception& e) {
      detail = std::string("unexpected exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::printf("criterion %d: %s (%s) [%s, %.1fs]\n", c.id,
                pass ? "PASS" : "FAIL", detail.c_str(), c.what, secs);
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  return failures;
}
