#include "scbct/pointtrans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace scbct {

namespace {

struct Cand {
  double d2;
  int32_t idx;
};

bool cand_less(const Cand& a, const Cand& b) {
  if (a.d2 != b.d2) return a.d2 < b.d2;
  return a.idx < b.idx;
}

// shared by both builders so ties resolve identically
double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

void check_knn_args(size_t n, int64_t k) {
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  if (size_t(k) > n)
    throw std::invalid_argument("knn: k=" + std::to_string(k) +
                                " exceeds point count " + std::to_string(n));
}

NeighborGraph finish_graph(const std::vector<Vec3>&, int64_t k,
                           std::vector<std::vector<Cand>>&& rows) {
  NeighborGraph g;
  g.n = int64_t(rows.size());
  g.k = k;
  g.idx.resize(size_t(g.n * k));
  g.d2.resize(size_t(g.n * k));
  for (int64_t i = 0; i < g.n; ++i) {
    auto& row = rows[size_t(i)];
    std::sort(row.begin(), row.end(), cand_less);
    g.idx[size_t(i * k)] = int32_t(i);
    g.d2[size_t(i * k)] = 0.0;
    for (int64_t j = 0; j < k - 1; ++j) {
      g.idx[size_t(i * k + 1 + j)] = row[size_t(j)].idx;
      g.d2[size_t(i * k + 1 + j)] = row[size_t(j)].d2;
    }
  }
  return g;
}

}  // namespace

NeighborGraph knn_brute(const std::vector<Vec3>& points, int64_t k) {
  check_knn_args(points.size(), k);
  const int64_t n = int64_t(points.size());
  std::vector<std::vector<Cand>> rows(size_t(n), std::vector<Cand>{});
  for (int64_t i = 0; i < n; ++i) {
    std::vector<Cand> all;
    all.reserve(size_t(n - 1));
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      all.push_back({dist2(points[size_t(i)], points[size_t(j)]), int32_t(j)});
    }
    const size_t keep = size_t(k - 1);
    if (keep < all.size())
      std::nth_element(all.begin(), all.begin() + long(keep), all.end(),
                       cand_less);
    all.resize(keep);
    rows[size_t(i)] = std::move(all);
  }
  return finish_graph(points, k, std::move(rows));
}

NeighborGraph knn_grid(const std::vector<Vec3>& points, int64_t k) {
  check_knn_args(points.size(), k);
  const int64_t n = int64_t(points.size());

  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const int64_t per_axis =
      std::max<int64_t>(1, int64_t(std::cbrt(double(n) / 2.0)));
  const int64_t nx = per_axis, ny = per_axis, nz = per_axis;
  const double ex = std::max(hi.x - lo.x, 1e-300);
  const double ey = std::max(hi.y - lo.y, 1e-300);
  const double ez = std::max(hi.z - lo.z, 1e-300);
  const double hx = ex / double(nx), hy = ey / double(ny), hz = ez / double(nz);

  const auto cell_of = [&](const Vec3& p, int64_t& cx, int64_t& cy,
                           int64_t& cz) {
    cx = std::clamp(int64_t((p.x - lo.x) / hx), int64_t(0), nx - 1);
    cy = std::clamp(int64_t((p.y - lo.y) / hy), int64_t(0), ny - 1);
    cz = std::clamp(int64_t((p.z - lo.z) / hz), int64_t(0), nz - 1);
  };

  std::vector<std::vector<int32_t>> buckets(size_t(nx * ny * nz));
  for (int64_t i = 0; i < n; ++i) {
    int64_t cx, cy, cz;
    cell_of(points[size_t(i)], cx, cy, cz);
    buckets[size_t((cz * ny + cy) * nx + cx)].push_back(int32_t(i));
  }

  const auto worse = [](const Cand& a, const Cand& b) {
    return cand_less(a, b);  // priority_queue keeps the worst on top
  };
  std::vector<std::vector<Cand>> rows(size_t(n), std::vector<Cand>{});
  const size_t keep = size_t(k - 1);

  for (int64_t i = 0; i < n; ++i) {
    const Vec3& q = points[size_t(i)];
    int64_t cx, cy, cz;
    cell_of(q, cx, cy, cz);
    std::priority_queue<Cand, std::vector<Cand>, decltype(worse)> heap(worse);

    const auto scan_cell = [&](int64_t x, int64_t y, int64_t z) {
      if (x < 0 || x >= nx || y < 0 || y >= ny || z < 0 || z >= nz) return;
      for (int32_t j : buckets[size_t((z * ny + y) * nx + x)]) {
        if (int64_t(j) == i) continue;
        Cand c{dist2(q, points[size_t(j)]), j};
        if (heap.size() < keep) {
          heap.push(c);
        } else if (keep > 0 && cand_less(c, heap.top())) {
          heap.pop();
          heap.push(c);
        }
      }
    };

    // fractional offsets of q within its own cell, per axis and side
    const double fxl = q.x - (lo.x + double(cx) * hx), fxh = hx - fxl;
    const double fyl = q.y - (lo.y + double(cy) * hy), fyh = hy - fyl;
    const double fzl = q.z - (lo.z + double(cz) * hz), fzh = hz - fzl;

    const int64_t rmax = std::max({cx, nx - 1 - cx, cy, ny - 1 - cy, cz,
                                   nz - 1 - cz});
    for (int64_t r = 0; r <= rmax; ++r) {
      if (r == 0) {
        scan_cell(cx, cy, cz);
      } else {
        // lower bound on the distance from q to any cell in shell r
        double bound = std::numeric_limits<double>::infinity();
        const double depth = double(r - 1);
        if (cx - r >= 0) bound = std::min(bound, depth * hx + fxl);
        if (cx + r < nx) bound = std::min(bound, depth * hx + fxh);
        if (cy - r >= 0) bound = std::min(bound, depth * hy + fyl);
        if (cy + r < ny) bound = std::min(bound, depth * hy + fyh);
        if (cz - r >= 0) bound = std::min(bound, depth * hz + fzl);
        if (cz + r < nz) bound = std::min(bound, depth * hz + fzh);
        // deflate slightly so a tie candidate sitting exactly on a ring
        // boundary is never skipped by rounding in the bound itself
        const double b2 = bound * bound * (1.0 - 1e-12);
        if (heap.size() == keep && (keep == 0 || b2 > heap.top().d2)) break;
        for (int64_t z = cz - r; z <= cz + r; ++z)
          for (int64_t y = cy - r; y <= cy + r; ++y) {
            scan_cell(cx - r, y, z);
            scan_cell(cx + r, y, z);
          }
        for (int64_t z = cz - r; z <= cz + r; ++z)
          for (int64_t x = cx - r + 1; x <= cx + r - 1; ++x) {
            scan_cell(x, cy - r, z);
            scan_cell(x, cy + r, z);
          }
        for (int64_t y = cy - r + 1; y <= cy + r - 1; ++y)
          for (int64_t x = cx - r + 1; x <= cx + r - 1; ++x) {
            scan_cell(x, y, cz - r);
            scan_cell(x, y, cz + r);
          }
      }
    }

    auto& row = rows[size_t(i)];
    row.reserve(keep);
    while (!heap.empty()) {
      row.push_back(heap.top());
      heap.pop();
    }
  }
  return finish_graph(points, k, std::move(rows));
}

NeighborGraph build_neighbor_graph(const std::vector<Vec3>& points,
                                   int64_t k) {
  return knn_grid(points, k);
}

nn::Tensor gaussian_weights(const NeighborGraph& graph, double sigma) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("gaussian_weights: sigma must be positive");
  nn::Tensor w(nn::Shape{graph.n, graph.k});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (size_t i = 0; i < graph.d2.size(); ++i)
    w.d[i] = std::exp(-graph.d2[i] * inv);
  return w;
}

nn::Tensor gaussian_log_bias(const NeighborGraph& graph, double sigma) {
  if (!(sigma > 0.0))
    throw std::invalid_argument("gaussian_log_bias: sigma must be positive");
  nn::Tensor b(nn::Shape{graph.n, graph.k});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (size_t i = 0; i < graph.d2.size(); ++i) {
    const double x = -graph.d2[i] * inv;
    b.d[i] = (std::exp(x) == 0.0)
                 ? -std::numeric_limits<double>::infinity()
                 : x;
  }
  return b;
}

PointTransformer::PointTransformer(nn::ParamStore& ps,
                                   const std::string& prefix,
                                   const PointTransformerConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.layers < 1) throw std::invalid_argument("point transformer: layers");
  if (cfg.k < 1) throw std::invalid_argument("point transformer: k");
  if (cfg.heads < 1 || cfg.model_dim % cfg.heads != 0)
    throw std::invalid_argument(
        "point transformer: model_dim must be divisible by heads");
  if (!(cfg.sigma > 0.0))
    throw std::invalid_argument("point transformer: sigma must be positive");

  pe1_ = nn::Linear::make(ps, prefix + ".pe1", 3, cfg.pe_hidden, rng);
  pe2_ = nn::Linear::make(ps, prefix + ".pe2", cfg.pe_hidden, cfg.feature_dim,
                          rng);
  in_proj_ = nn::Linear::make(ps, prefix + ".in_proj", cfg.feature_dim,
                              cfg.model_dim, rng);
  out_proj_ = nn::Linear::make(ps, prefix + ".out_proj", cfg.model_dim,
                               cfg.feature_dim, rng);
  for (int64_t l = 0; l < cfg.layers; ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    Layer lay;
    lay.ln1 = nn::LayerNormM::make(ps, base + ".ln1", cfg.model_dim);
    lay.ln2 = nn::LayerNormM::make(ps, base + ".ln2", cfg.model_dim);
    lay.wq = nn::make_attn_proj(ps, base + ".wq", cfg.model_dim,
                                cfg.model_dim, rng);
    lay.wk = nn::make_attn_proj(ps, base + ".wk", cfg.model_dim,
                                cfg.model_dim, rng);
    lay.wv = nn::make_attn_proj(ps, base + ".wv", cfg.model_dim,
                                cfg.model_dim, rng);
    lay.wo = nn::make_attn_proj(ps, base + ".wo", cfg.model_dim,
                                cfg.model_dim, rng);
    lay.ff1 = nn::Linear::make(ps, base + ".ff1", cfg.model_dim,
                               cfg.ff_hidden, rng);
    lay.ff2 = nn::Linear::make(ps, base + ".ff2", cfg.ff_hidden,
                               cfg.model_dim, rng);
    layers_.push_back(std::move(lay));
  }
}

nn::Var PointTransformer::operator()(const nn::Var& features,
                                     const std::vector<Vec3>& coords) const {
  using nn::Shape;
  using nn::Tensor;
  using nn::Var;

  if (features.shape().size() != 2 || features.shape()[1] != cfg_.feature_dim)
    throw std::invalid_argument(
        "point transformer: features must be [n, " +
        std::to_string(cfg_.feature_dim) + "], got " +
        nn::shape_str(features.shape()));
  const int64_t n = features.shape()[0];
  if (int64_t(coords.size()) != n)
    throw std::invalid_argument(
        "point transformer: coords count does not match feature rows");

  const NeighborGraph graph = build_neighbor_graph(coords, cfg_.k);
  const Tensor bias = gaussian_log_bias(graph, cfg_.sigma);

  Tensor ct(Shape{n, 3});
  for (int64_t i = 0; i < n; ++i) {
    ct.at2(i, 0) = coords[size_t(i)].x;
    ct.at2(i, 1) = coords[size_t(i)].y;
    ct.at2(i, 2) = coords[size_t(i)].z;
  }
  Var x = add(features, linear(relu(linear(Var(ct), pe1_.w, pe1_.b)), pe2_.w,
                               pe2_.b));
  x = linear(x, in_proj_.w, in_proj_.b);

  for (const Layer& lay : layers_) {
    if (cfg_.prenorm) {
      Var h = layer_norm(x, lay.ln1.g, lay.ln1.b);
      Var att = neighbor_attention(
          linear(h, lay.wq.w, lay.wq.b), linear(h, lay.wk.w, lay.wk.b),
          linear(h, lay.wv.w, lay.wv.b), graph.idx, bias, cfg_.heads);
      x = add(x, linear(att, lay.wo.w, lay.wo.b));
      Var h2 = layer_norm(x, lay.ln2.g, lay.ln2.b);
      x = add(x, linear(relu(linear(h2, lay.ff1.w, lay.ff1.b)), lay.ff2.w,
                        lay.ff2.b));
    } else {
      Var att = neighbor_attention(
          linear(x, lay.wq.w, lay.wq.b), linear(x, lay.wk.w, lay.wk.b),
          linear(x, lay.wv.w, lay.wv.b), graph.idx, bias, cfg_.heads);
      x = layer_norm(add(x, linear(att, lay.wo.w, lay.wo.b)), lay.ln1.g,
                     lay.ln1.b);
      x = layer_norm(
          add(x, linear(relu(linear(x, lay.ff1.w, lay.ff1.b)), lay.ff2.w,
                        lay.ff2.b)),
          lay.ln2.g, lay.ln2.b);
    }
  }
  return linear(x, out_proj_.w, out_proj_.b);
}

}  // namespace scbct
