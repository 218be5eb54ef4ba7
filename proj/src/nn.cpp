#include "scbct/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace scbct::nn {

Var ParamStore::param(const std::string& name, Tensor init) {
  if (params.count(name) || buffers.count(name))
    throw std::invalid_argument("duplicate parameter name: " + name);
  Var v(std::move(init), true);
  params.emplace(name, v);
  return v;
}

Tensor& ParamStore::buffer(const std::string& name, Tensor init) {
  if (params.count(name) || buffers.count(name))
    throw std::invalid_argument("duplicate buffer name: " + name);
  return buffers.emplace(name, std::move(init)).first->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : params) v.zero_grad();
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : params) n += v.numel();
  return n;
}

Tensor uniform_fan_in_init(Shape shape, int64_t fan_in, Rng& rng) {
  if (fan_in <= 0) throw std::invalid_argument("fan_in must be positive");
  const double bound = 1.0 / std::sqrt(double(fan_in));
  Tensor t(std::move(shape));
  for (double& v : t.d) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.d) v = stddev * rng.normal();
  return t;
}

void round_to_f32(Tensor& t) {
  for (double& v : t.d) v = double(float(v));
}

Linear Linear::make(ParamStore& ps, const std::string& prefix, int64_t in,
                    int64_t out, Rng& rng) {
  Linear l;
  l.w = ps.param(prefix + ".w", uniform_fan_in_init({out, in}, in, rng));
  l.b = ps.param(prefix + ".b", uniform_fan_in_init({out}, in, rng));
  return l;
}

Conv2d Conv2d::make(ParamStore& ps, const std::string& prefix, int64_t cin,
                    int64_t cout, int k, int stride, Rng& rng) {
  Conv2d c;
  const int64_t fan_in = cin * k * k;
  c.w = ps.param(prefix + ".w",
                 uniform_fan_in_init({cout, cin, k, k}, fan_in, rng));
  c.b = ps.param(prefix + ".b", uniform_fan_in_init({cout}, fan_in, rng));
  c.stride = stride;
  return c;
}

Var Conv2d::operator()(const Var& x) const {
  const int k = int(w.shape()[2]);
  return conv2d(x, w, b, stride, k / 2);
}

LayerNormM LayerNormM::make(ParamStore& ps, const std::string& prefix,
                            int64_t dim) {
  LayerNormM l;
  l.g = ps.param(prefix + ".g", Tensor({dim}, 1.0));
  l.b = ps.param(prefix + ".b", Tensor({dim}, 0.0));
  return l;
}

BatchNorm1d BatchNorm1d::make(ParamStore& ps, const std::string& prefix,
                              int64_t dim) {
  BatchNorm1d bn;
  bn.g = ps.param(prefix + ".g", Tensor({dim}, 1.0));
  bn.b = ps.param(prefix + ".b", Tensor({dim}, 0.0));
  bn.running_mean = &ps.buffer(prefix + ".running_mean", Tensor({dim}, 0.0));
  bn.running_var = &ps.buffer(prefix + ".running_var", Tensor({dim}, 1.0));
  return bn;
}

Linear make_attn_proj(ParamStore& ps, const std::string& prefix, int64_t in,
                      int64_t out, Rng& rng, AttnInit init) {
  if (init == AttnInit::fan_in) return Linear::make(ps, prefix, in, out, rng);
  Linear l;
  l.w = ps.param(prefix + ".w", normal_init({out, in}, 0.02, rng));
  l.b = ps.param(prefix + ".b", Tensor({out}, 0.0));
  return l;
}

TransformerBlock TransformerBlock::make(ParamStore& ps,
                                        const std::string& prefix,
                                        int64_t dim, int heads,
                                        int64_t ff_dim, Rng& rng,
                                        AttnInit init) {
  TransformerBlock t;
  t.ln1 = LayerNormM::make(ps, prefix + ".ln1", dim);
  t.ln2 = LayerNormM::make(ps, prefix + ".ln2", dim);
  t.wq = make_attn_proj(ps, prefix + ".wq", dim, dim, rng, init);
  t.wk = make_attn_proj(ps, prefix + ".wk", dim, dim, rng, init);
  t.wv = make_attn_proj(ps, prefix + ".wv", dim, dim, rng, init);
  t.wo = make_attn_proj(ps, prefix + ".wo", dim, dim, rng, init);
  t.ff1 = Linear::make(ps, prefix + ".ff1", dim, ff_dim, rng);
  t.ff2 = Linear::make(ps, prefix + ".ff2", ff_dim, dim, rng);
  t.heads = heads;
  return t;
}

Var TransformerBlock::operator()(const Var& x) const {
  Var h = ln1(x);
  Var att = attention_heads(wq(h), wk(h), wv(h), heads);
  Var x1 = add(x, wo(att));
  Var h2 = ln2(x1);
  return add(x1, ff2(relu(ff1(h2))));
}

void AdamW::step(ParamStore& ps) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (auto& [name, var] : ps.params) {
    Var::Node* node = var.node_.get();
    if (node->grad.empty()) continue;
    auto it = slots_.find(name);
    if (it == slots_.end())
      it = slots_
               .emplace(name, std::make_pair(Tensor(node->val.shape),
                                             Tensor(node->val.shape)))
               .first;
    Tensor& m = it->second.first;
    Tensor& v = it->second.second;
    for (size_t i = 0; i < node->val.d.size(); ++i) {
      const double g = node->grad.d[i];
      m.d[i] = cfg_.beta1 * m.d[i] + (1.0 - cfg_.beta1) * g;
      v.d[i] = cfg_.beta2 * v.d[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m.d[i] / bc1;
      const double vhat = v.d[i] / bc2;
      double w = node->val.d[i];
      w -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                      cfg_.weight_decay * w);
      node->val.d[i] = double(float(w));
    }
  }
}

}  // namespace scbct::nn
