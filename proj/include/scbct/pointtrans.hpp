#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scbct/geometry.hpp"
#include "scbct/nn.hpp"

namespace scbct {

// Self-inclusive k-nearest-neighbor graph. Row i stores its own index first
// (distance 0), then the k-1 nearest other points ordered by squared
// distance, ties broken by ascending point index.
struct NeighborGraph {
  int64_t n = 0;
  int64_t k = 0;
  std::vector<int32_t> idx;  // [n*k]
  std::vector<double> d2;    // [n*k]
};

NeighborGraph knn_brute(const std::vector<Vec3>& points, int64_t k);
NeighborGraph knn_grid(const std::vector<Vec3>& points, int64_t k);

// Production entry point (grid-bucketed). Both builders order candidates by
// the same (d2, index) key computed with the same arithmetic, so their
// outputs are identical, including ties and duplicate points.
NeighborGraph build_neighbor_graph(const std::vector<Vec3>& points, int64_t k);

// w_ij = exp(-d_ij^2 / (2 sigma^2)), shape [n, k]. Throws for sigma <= 0.
nn::Tensor gaussian_weights(const NeighborGraph& graph, double sigma);

// Additive attention bias log w_ij (computed as -d^2/(2 sigma^2)); entries
// whose weight underflows to zero become -inf and the neighbor is excluded.
nn::Tensor gaussian_log_bias(const NeighborGraph& graph, double sigma);

struct PointTransformerConfig {
  int64_t layers = 2;
  int64_t k = 3;
  int64_t heads = 4;
  int64_t model_dim = 256;
  int64_t feature_dim = 464;
  int64_t pe_hidden = 128;
  int64_t ff_hidden = 512;
  double sigma = 0.1;
  bool prenorm = true;
};

// Residual refinement of per-point feature vectors. Coordinates are expected
// in normalized [-1, 1] volume space; they drive both the positional encoding
// and the neighbor graph. Width contract: feature_dim in, feature_dim out.
class PointTransformer {
 public:
  PointTransformer(nn::ParamStore& ps, const std::string& prefix,
                   const PointTransformerConfig& cfg, Rng& rng);

  nn::Var operator()(const nn::Var& features,
                     const std::vector<Vec3>& coords) const;

  const PointTransformerConfig& config() const { return cfg_; }

 private:
  struct Layer {
    nn::LayerNormM ln1, ln2;
    nn::Linear wq, wk, wv, wo, ff1, ff2;
  };

  PointTransformerConfig cfg_;
  nn::Linear pe1_, pe2_, in_proj_, out_proj_;
  std::vector<Layer> layers_;
};

}  // namespace scbct
