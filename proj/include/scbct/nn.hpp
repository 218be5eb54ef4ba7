#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "scbct/autograd.hpp"
#include "scbct/rng.hpp"
#include "scbct/tensor.hpp"

namespace scbct::nn {

// Named parameters and persistent buffers. std::map keeps both in name
// order, which fixes the serialization and optimizer traversal order.
struct ParamStore {
  std::map<std::string, Var> params;
  std::map<std::string, Tensor> buffers;

  Var param(const std::string& name, Tensor init);
  Tensor& buffer(const std::string& name, Tensor init);
  void zero_grad();
  int64_t param_count() const;
};

// weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))
Tensor uniform_fan_in_init(Shape shape, int64_t fan_in, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

// rounds every entry to the nearest binary32 value
void round_to_f32(Tensor& t);

struct Linear {
  Var w, b;
  static Linear make(ParamStore& ps, const std::string& prefix, int64_t in,
                     int64_t out, Rng& rng);
  Var operator()(const Var& x) const { return linear(x, w, b); }
};

struct Conv2d {
  Var w, b;
  int stride = 1;
  static Conv2d make(ParamStore& ps, const std::string& prefix, int64_t cin,
                     int64_t cout, int k, int stride, Rng& rng);
  Var operator()(const Var& x) const;
};

struct LayerNormM {
  Var g, b;
  static LayerNormM make(ParamStore& ps, const std::string& prefix,
                         int64_t dim);
  Var operator()(const Var& x) const { return layer_norm(x, g, b); }
};

struct BatchNorm1d {
  Var g, b;
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  static BatchNorm1d make(ParamStore& ps, const std::string& prefix,
                          int64_t dim);
  Var operator()(const Var& x, bool training, double momentum = 0.1) const {
    return batch_norm(x, g, b, *running_mean, *running_var, training,
                      momentum);
  }
};

// attention projection init: fan-in uniform or small zero-mean normal
enum class AttnInit { fan_in, small_normal };

Linear make_attn_proj(ParamStore& ps, const std::string& prefix, int64_t in,
                      int64_t out, Rng& rng,
                      AttnInit init = AttnInit::small_normal);

// Pre-norm transformer block over a dense token sequence [T,D].
struct TransformerBlock {
  LayerNormM ln1, ln2;
  Linear wq, wk, wv, wo;
  Linear ff1, ff2;
  int heads = 1;
  static TransformerBlock make(ParamStore& ps, const std::string& prefix,
                               int64_t dim, int heads, int64_t ff_dim,
                               Rng& rng, AttnInit init = AttnInit::fan_in);
  Var operator()(const Var& x) const;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

// Decoupled weight decay Adam. After each step every parameter is snapped
// to its nearest binary32 value so checkpoints (stored as f32) restore the
// exact in-memory state.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& ps);
  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> slots_;
};

}  // namespace scbct::nn
