#include "scbct/head.hpp"

#include <stdexcept>

namespace scbct {

PredictionHead::PredictionHead(nn::ParamStore& ps, const std::string& prefix,
                               const PredictionHeadConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.in_dim < 1 || cfg.hidden < 1)
    throw std::invalid_argument("prediction head: dims must be positive");
  fc1_ = nn::Linear::make(ps, prefix + ".fc1", cfg.in_dim, cfg.hidden, rng);
  bn_ = nn::BatchNorm1d::make(ps, prefix + ".bn", cfg.hidden);
  fc2_ = nn::Linear::make(ps, prefix + ".fc2", cfg.hidden, 1, rng);
}

nn::Var PredictionHead::operator()(const nn::Var& x, bool training) const {
  if (x.shape().size() != 2 || x.shape()[1] != cfg_.in_dim)
    throw std::invalid_argument("prediction head: expected [n, " +
                                std::to_string(cfg_.in_dim) + "], got " +
                                nn::shape_str(x.shape()));
  return sigmoid(fc2_(relu(bn_(fc1_(x), training))));
}

}  // namespace scbct
