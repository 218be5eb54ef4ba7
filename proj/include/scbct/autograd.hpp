#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "scbct/tensor.hpp"

namespace scbct::nn {

// Thread-local switch: when disabled, ops compute values only and build no
// graph. Used for evaluation so activations are freed eagerly.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev); }
};

// A Var is a shared handle onto a tape node. Ops connect nodes into a DAG;
// backward() runs the tape in reverse creation order.
class Var {
 public:
  struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily, same shape as val
    bool requires_grad = false;
    uint64_t order = 0;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad, accumulates into parents' grads. The closure
    // captures `this` raw (it is owned by the node) and parents shared.
    std::function<void(Node&)> back;

    Tensor& ensure_grad() {
      if (grad.empty()) grad = Tensor(val.shape);
      return grad;
    }
  };

  Var() = default;
  explicit Var(Tensor t, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->val; }
  Tensor& mutable_val() { return node_->val; }  // leaves only (optimizer)
  const Shape& shape() const { return node_->val.shape; }
  int64_t numel() const { return node_->val.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& grad() const { return node_->ensure_grad(); }
  void zero_grad() const {
    if (node_ && !node_->grad.empty())
      std::fill(node_->grad.d.begin(), node_->grad.d.end(), 0.0);
  }

  // Backpropagate from this scalar; seeds with 1.
  void backward() const;

  std::shared_ptr<Node> node_;  // exposed for op implementations
};

// Makes a fresh node holding `val`; wires parents/backward only when grad
// mode is on and some parent requires grad.
Var make_op(Tensor val, std::vector<Var> parents,
            std::function<void(Var::Node&)> back);

// ---- elementwise / basic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_bias(const Var& x, const Var& b);  // x [N,C] + b [C]
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var sum(const Var& x);   // -> scalar [1]
Var mean(const Var& x);  // -> scalar [1]

// ---- linear algebra ----
// y = op(a) * op(b), 2D only
Var matmul(const Var& a, const Var& b, bool trans_a = false,
           bool trans_b = false);
// y [N,out] = x [N,in] * w [out,in]^T + b [out]
Var linear(const Var& x, const Var& w, const Var& b);

// ---- shape ----
Var reshape(const Var& x, Shape s);
Var transpose2d(const Var& x);  // [A,B] -> [B,A]
Var concat_cols(const std::vector<Var>& xs);       // [N,Ci] -> [N,sum Ci]
Var slice_cols(const Var& x, int64_t c0, int64_t c1);

// ---- normalization / activation blocks ----
Var softmax_rows(const Var& x);  // [N,K], softmax over K
Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
               double eps = 1e-5);
// Training mode uses batch stats over N and updates running stats in place
// (biased variance in the normalizer, unbiased in the running estimate).
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var, bool training,
               double momentum = 0.1, double eps = 1e-5);

// ---- conv / image ----
// x [Cin,H,W], w [Cout,Cin,kh,kw], b [Cout]; zero padding `pad`, square
// stride. Output [Cout,Ho,Wo].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1,
           int pad = 1);
Var upsample_nearest2x(const Var& x);          // [C,H,W] -> [C,2H,2W]
Var concat_chan(const Var& a, const Var& b);   // [Ca,H,W]+[Cb,H,W]

// ---- gather / fusion ----
// map [C,H,W]; uv [N,2] continuous pixel coords (x,y) already clamped to
// [0,W-1]x[0,H-1]. Bilinear gather -> [N,C].
Var bilinear_sample_map(const Var& map, const Tensor& uv);
// Elementwise max over M same-shaped [N,C] inputs; ties go to the lowest
// input index.
Var max_views(const std::vector<Var>& xs);

// ---- attention ----
// Dense multi-head self-attention core: q,k,v [T,D], D % heads == 0.
// out[t] = sum_s softmax_s(q_h(t).k_h(s)/sqrt(dk)) v_h(s) per head.
Var attention_heads(const Var& q, const Var& k, const Var& v, int heads);
// Sparse variant over a fixed neighbor list. idx [N,kn] row indices into
// k/v; bias [N,kn] additive logit bias (-inf marks an excluded neighbor).
// Throws if any query has every neighbor excluded.
Var neighbor_attention(const Var& q, const Var& k, const Var& v,
                       const std::vector<int32_t>& idx, const Tensor& bias,
                       int heads);

// ---- loss ----
Var mse_loss(const Var& pred, const Tensor& target);

}  // namespace scbct::nn
