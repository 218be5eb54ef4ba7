#pragma once

#include <cstdint>
#include <string>

#include "scbct/nn.hpp"

namespace scbct {

struct PredictionHeadConfig {
  int64_t in_dim = 464;
  int64_t hidden = 128;
};

// Maps per-point feature rows to a density in (0, 1):
// linear -> batch norm -> relu -> linear -> sigmoid.
// In eval mode the batch norm uses running statistics, so each output row
// depends only on its own input row.
class PredictionHead {
 public:
  PredictionHead(nn::ParamStore& ps, const std::string& prefix,
                 const PredictionHeadConfig& cfg, Rng& rng);

  // x: [n, in_dim] -> [n, 1]; bn_momentum only matters in training mode
  nn::Var operator()(const nn::Var& x, bool training,
                     double bn_momentum = 0.1) const;

  const PredictionHeadConfig& config() const { return cfg_; }

 private:
  PredictionHeadConfig cfg_;
  nn::Linear fc1_, fc2_;
  nn::BatchNorm1d bn_;
};

}  // namespace scbct
