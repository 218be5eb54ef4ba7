#include "scbct/fusion.hpp"

#include <stdexcept>
#include <string>

namespace scbct {

using nn::Shape;
using nn::Tensor;
using nn::Var;

int64_t fused_width(int levels) {
  if (levels < 1 || levels > 4)
    throw std::invalid_argument("fusion levels must be in [1,4], got " +
                                std::to_string(levels));
  int64_t w = 0;
  for (int s = 0; s < levels; ++s) w += kPyramidChannels[size_t(s)];
  return w;
}

Var query_point_features(const std::vector<FeaturePyramid>& pyramids,
                         const ScannerGeometry& geom,
                         const std::vector<double>& angles_deg,
                         const std::vector<Vec3>& points_world,
                         FusionStats* stats, int levels) {
  fused_width(levels);  // range check
  const size_t nscales = size_t(levels);
  const size_t M = pyramids.size();
  if (M == 0) throw std::invalid_argument("feature fusion needs M >= 1 views");
  if (angles_deg.size() != M)
    throw std::invalid_argument("view count mismatch: " + std::to_string(M) +
                                " pyramids, " +
                                std::to_string(angles_deg.size()) + " angles");
  const int64_t n = int64_t(points_world.size());
  if (n == 0) throw std::invalid_argument("no query points");

  for (size_t m = 0; m < M; ++m)
    for (size_t s = 0; s < nscales; ++s) {
      const Shape& sh = pyramids[m].maps[s].shape();
      if (sh.size() != 3 || sh[0] != kPyramidChannels[s])
        throw std::invalid_argument(
            "scale " + std::to_string(s + 1) + " map of view " +
            std::to_string(m) + " must have " +
            std::to_string(kPyramidChannels[s]) + " channels, got " +
            nn::shape_str(sh));
      if (sh != pyramids[0].maps[s].shape())
        throw std::invalid_argument("scale " + std::to_string(s + 1) +
                                    " map shape differs between views");
    }

  std::array<std::vector<Var>, 4> per_scale;
  for (size_t m = 0; m < M; ++m) {
    // one projection pass per view, shared by all scales
    std::vector<double> u(size_t(n), 0.0), v(size_t(n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const ProjectedPoint pp =
          project_point(geom, angles_deg[m], points_world[size_t(i)]);
      u[size_t(i)] = pp.u;
      v[size_t(i)] = pp.v;
      if (!pp.visible && stats) ++stats->invisible_samples;
    }
    for (size_t s = 0; s < nscales; ++s) {
      const Shape& sh = pyramids[m].maps[s].shape();
      const double W = double(sh[2]), H = double(sh[1]);
      Tensor uv(Shape{n, 2});
      for (int64_t i = 0; i < n; ++i) {
        uv.d[size_t(2 * i)] = u[size_t(i)] * W - 0.5;
        uv.d[size_t(2 * i + 1)] = v[size_t(i)] * H - 0.5;
      }
      per_scale[s].push_back(bilinear_sample_map(pyramids[m].maps[s], uv));
    }
  }

  std::vector<Var> fused;
  fused.reserve(nscales);
  for (size_t s = 0; s < nscales; ++s) fused.push_back(max_views(per_scale[s]));
  return concat_cols(fused);
}

}  // namespace scbct
