#include "scbct/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace scbct::nn {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<uint64_t> g_order{1};

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                            Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using StrideO = Eigen::OuterStride<>;
using HeadMap = Eigen::Map<MatRM, 0, StrideO>;
using CHeadMap = Eigen::Map<const MatRM, 0, StrideO>;

MapM as_mat(Tensor& t, int64_t r, int64_t c) {
  return MapM(t.d.data(), r, c);
}
CMapM as_mat(const Tensor& t, int64_t r, int64_t c) {
  return CMapM(t.d.data(), r, c);
}
CMapM as_mat2(const Tensor& t) {
  if (t.shape.size() != 2)
    throw std::invalid_argument("expected 2D tensor, got " +
                                shape_str(t.shape));
  return CMapM(t.d.data(), t.shape[0], t.shape[1]);
}

void require_same_shape(const Var& a, const Var& b, const char* where) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Var::Var(Tensor t, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->val = std::move(t);
  node_->requires_grad = requires_grad;
  node_->order = g_order.fetch_add(1);
}

Var make_op(Tensor val, std::vector<Var> parents,
            std::function<void(Var::Node&)> back) {
  Var out(std::move(val), false);
  if (!g_grad_enabled) return out;
  bool need = false;
  for (const Var& p : parents) need = need || p.requires_grad();
  if (!need) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (Var& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->back = std::move(back);
  return out;
}

void Var::backward() const {
  if (!node_) throw std::runtime_error("backward on undefined Var");
  if (node_->val.numel() != 1)
    throw std::invalid_argument("backward requires a scalar, got shape " +
                                shape_str(node_->val.shape));
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](Node* a, Node* b) { return a->order > b->order; });
  node_->ensure_grad().d[0] += 1.0;
  for (Node* n : order)
    if (n->back && !n->grad.empty()) n->back(*n);
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.d[i] += b.val().d[i];
  return make_op(std::move(out), {a, b}, [](Var::Node& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = n.parents[k];
      if (!p->requires_grad) continue;
      Tensor& g = p->ensure_grad();
      for (size_t i = 0; i < g.d.size(); ++i) g.d[i] += n.grad.d[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.d[i] -= b.val().d[i];
  return make_op(std::move(out), {a, b}, [](Var::Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.d.size(); ++i) g.d[i] += n.grad.d[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.d.size(); ++i) g.d[i] -= n.grad.d[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.d[i] *= b.val().d[i];
  return make_op(std::move(out), {a, b}, [](Var::Node& n) {
    const Tensor& av = n.parents[0]->val;
    const Tensor& bv = n.parents[1]->val;
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.d.size(); ++i) g.d[i] += n.grad.d[i] * bv.d[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.d.size(); ++i) g.d[i] += n.grad.d[i] * av.d[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.val();
  for (double& v : out.d) v *= s;
  return make_op(std::move(out), {a}, [s](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.d.size(); ++i) g.d[i] += s * n.grad.d[i];
  });
}

Var add_bias(const Var& x, const Var& b) {
  if (x.shape().size() != 2 || b.shape().size() != 1 ||
      x.shape()[1] != b.shape()[0])
    throw std::invalid_argument("add_bias: got " + shape_str(x.shape()) +
                                " and " + shape_str(b.shape()));
  const int64_t N = x.shape()[0], C = x.shape()[1];
  Tensor out = x.val();
  for (int64_t r = 0; r < N; ++r)
    for (int64_t c = 0; c < C; ++c) out.d[size_t(r * C + c)] += b.val().d[c];
  return make_op(std::move(out), {x, b}, [N, C](Var::Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.d.size(); ++i) g.d[i] += n.grad.d[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int64_t r = 0; r < N; ++r)
        for (int64_t c = 0; c < C; ++c) g.d[c] += n.grad.d[size_t(r * C + c)];
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.val();
  for (double& v : out.d) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {x}, [](Var::Node& n) {
    const Tensor& xv = n.parents[0]->val;
    Tensor& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.d.size(); ++i)
      if (xv.d[i] > 0.0) g.d[i] += n.grad.d[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.val();
  for (double& v : out.d) v = 1.0 / (1.0 + std::exp(-v));
  return make_op(std::move(out), {x}, [](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.d.size(); ++i) {
      double y = n.val.d[i];
      g.d[i] += n.grad.d[i] * y * (1.0 - y);
    }
  });
}

Var sum(const Var& x) {
  Tensor out(Shape{1});
  for (double v : x.val().d) out.d[0] += v;
  return make_op(std::move(out), {x}, [](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (double& v : g.d) v += n.grad.d[0];
  });
}

Var mean(const Var& x) {
  const double inv = 1.0 / double(x.numel());
  Tensor out(Shape{1});
  for (double v : x.val().d) out.d[0] += v;
  out.d[0] *= inv;
  return make_op(std::move(out), {x}, [inv](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (double& v : g.d) v += n.grad.d[0] * inv;
  });
}

// ---- linear algebra ----

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  CMapM A = as_mat2(a.val()), B = as_mat2(b.val());
  const int64_t m = trans_a ? A.cols() : A.rows();
  const int64_t ka = trans_a ? A.rows() : A.cols();
  const int64_t kb = trans_b ? B.cols() : B.rows();
  const int64_t n = trans_b ? B.rows() : B.cols();
  if (ka != kb)
    throw std::invalid_argument("matmul: inner dims " + std::to_string(ka) +
                                " vs " + std::to_string(kb));
  Tensor out(Shape{m, n});
  MapM Y = as_mat(out, m, n);
  if (!trans_a && !trans_b) Y.noalias() = A * B;
  else if (trans_a && !trans_b) Y.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) Y.noalias() = A * B.transpose();
  else Y.noalias() = A.transpose() * B.transpose();
  return make_op(std::move(out), {a, b}, [trans_a, trans_b](Var::Node& n) {
    CMapM A = as_mat2(n.parents[0]->val);
    CMapM B = as_mat2(n.parents[1]->val);
    CMapM G = as_mat2(n.grad);
    if (n.parents[0]->requires_grad) {
      Tensor& ga = n.parents[0]->ensure_grad();
      MapM dA = as_mat(ga, A.rows(), A.cols());
      if (!trans_a && !trans_b) dA.noalias() += G * B.transpose();
      else if (trans_a && !trans_b) dA.noalias() += B * G.transpose();
      else if (!trans_a && trans_b) dA.noalias() += G * B;
      else dA.noalias() += (G * B).transpose();
    }
    if (n.parents[1]->requires_grad) {
      Tensor& gb = n.parents[1]->ensure_grad();
      MapM dB = as_mat(gb, B.rows(), B.cols());
      if (!trans_a && !trans_b) dB.noalias() += A.transpose() * G;
      else if (trans_a && !trans_b) dB.noalias() += A * G;
      else if (!trans_a && trans_b) dB.noalias() += G.transpose() * A;
      else dB.noalias() += (A * G).transpose();
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  CMapM X = as_mat2(x.val()), W = as_mat2(w.val());
  const int64_t N = X.rows(), in = X.cols(), out_c = W.rows();
  if (W.cols() != in || b.numel() != out_c)
    throw std::invalid_argument("linear: x " + shape_str(x.shape()) + " w " +
                                shape_str(w.shape()) + " b " +
                                shape_str(b.shape()));
  Tensor out(Shape{N, out_c});
  MapM Y = as_mat(out, N, out_c);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.val().d.data(), out_c);
  return make_op(std::move(out), {x, w, b}, [](Var::Node& n) {
    CMapM X = as_mat2(n.parents[0]->val);
    CMapM W = as_mat2(n.parents[1]->val);
    CMapM G = as_mat2(n.grad);
    if (n.parents[0]->requires_grad) {
      MapM dX = as_mat(n.parents[0]->ensure_grad(), X.rows(), X.cols());
      dX.noalias() += G * W;
    }
    if (n.parents[1]->requires_grad) {
      MapM dW = as_mat(n.parents[1]->ensure_grad(), W.rows(), W.cols());
      dW.noalias() += G.transpose() * X;
    }
    if (n.parents[2]->requires_grad) {
      Tensor& gb = n.parents[2]->ensure_grad();
      Eigen::Map<Eigen::RowVectorXd>(gb.d.data(), gb.numel()) +=
          G.colwise().sum();
    }
  });
}

// ---- shape ----

Var reshape(const Var& x, Shape s) {
  if (shape_numel(s) != x.numel())
    throw std::invalid_argument("reshape: numel mismatch " +
                                shape_str(x.shape()) + " -> " + shape_str(s));
  Tensor out = x.val();
  out.shape = std::move(s);
  return make_op(std::move(out), {x}, [](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.d.size(); ++i) g.d[i] += n.grad.d[i];
  });
}

Var transpose2d(const Var& x) {
  const int64_t A = x.shape().at(0), B = x.shape().at(1);
  Tensor out(Shape{B, A});
  as_mat(out, B, A) = as_mat2(x.val()).transpose();
  return make_op(std::move(out), {x}, [A, B](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    as_mat(g, A, B) += CMapM(n.grad.d.data(), B, A).transpose();
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int64_t N = xs[0].shape().at(0);
  int64_t C = 0;
  for (const Var& x : xs) {
    if (x.shape().size() != 2 || x.shape()[0] != N)
      throw std::invalid_argument("concat_cols: bad shape " +
                                  shape_str(x.shape()));
    C += x.shape()[1];
  }
  Tensor out(Shape{N, C});
  std::vector<int64_t> widths;
  {
    int64_t off = 0;
    for (const Var& x : xs) {
      const int64_t w = x.shape()[1];
      widths.push_back(w);
      for (int64_t r = 0; r < N; ++r)
        std::copy_n(x.val().d.data() + r * w, w,
                    out.d.data() + r * C + off);
      off += w;
    }
  }
  return make_op(std::move(out), xs, [N, C, widths](Var::Node& n) {
    int64_t off = 0;
    for (size_t k = 0; k < n.parents.size(); ++k) {
      const int64_t w = widths[k];
      if (n.parents[k]->requires_grad) {
        Tensor& g = n.parents[k]->ensure_grad();
        for (int64_t r = 0; r < N; ++r)
          for (int64_t c = 0; c < w; ++c)
            g.d[size_t(r * w + c)] += n.grad.d[size_t(r * C + off + c)];
      }
      off += w;
    }
  });
}

Var slice_cols(const Var& x, int64_t c0, int64_t c1) {
  const int64_t N = x.shape().at(0), C = x.shape().at(1);
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") of " +
                                shape_str(x.shape()));
  const int64_t w = c1 - c0;
  Tensor out(Shape{N, w});
  for (int64_t r = 0; r < N; ++r)
    std::copy_n(x.val().d.data() + r * C + c0, w, out.d.data() + r * w);
  return make_op(std::move(out), {x}, [N, C, c0, w](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t r = 0; r < N; ++r)
      for (int64_t c = 0; c < w; ++c)
        g.d[size_t(r * C + c0 + c)] += n.grad.d[size_t(r * w + c)];
  });
}

// ---- normalization ----

Var softmax_rows(const Var& x) {
  const int64_t N = x.shape().at(0), K = x.shape().at(1);
  Tensor out = x.val();
  for (int64_t r = 0; r < N; ++r) {
    double* row = out.d.data() + r * K;
    double m = row[0];
    for (int64_t c = 1; c < K; ++c) m = std::max(m, row[c]);
    double s = 0.0;
    for (int64_t c = 0; c < K; ++c) {
      row[c] = std::exp(row[c] - m);
      s += row[c];
    }
    for (int64_t c = 0; c < K; ++c) row[c] /= s;
  }
  return make_op(std::move(out), {x}, [N, K](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t r = 0; r < N; ++r) {
      const double* y = n.val.d.data() + r * K;
      const double* go = n.grad.d.data() + r * K;
      double dot = 0.0;
      for (int64_t c = 0; c < K; ++c) dot += go[c] * y[c];
      for (int64_t c = 0; c < K; ++c)
        g.d[size_t(r * K + c)] += y[c] * (go[c] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const int64_t N = x.shape().at(0), D = x.shape().at(1);
  if (gamma.numel() != D || beta.numel() != D)
    throw std::invalid_argument("layer_norm: param size mismatch");
  Tensor out(Shape{N, D});
  Tensor xhat(Shape{N, D});
  std::vector<double> inv_std(size_t(N), 0.0);
  for (int64_t r = 0; r < N; ++r) {
    const double* row = x.val().d.data() + r * D;
    double mu = 0.0;
    for (int64_t c = 0; c < D; ++c) mu += row[c];
    mu /= double(D);
    double var = 0.0;
    for (int64_t c = 0; c < D; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= double(D);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[size_t(r)] = is;
    for (int64_t c = 0; c < D; ++c) {
      const double xh = (row[c] - mu) * is;
      xhat.d[size_t(r * D + c)] = xh;
      out.d[size_t(r * D + c)] = gamma.val().d[c] * xh + beta.val().d[c];
    }
  }
  return make_op(
      std::move(out), {x, gamma, beta},
      [N, D, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Var::Node& n) {
        const Tensor& gv = n.parents[1]->val;
        for (int64_t r = 0; r < N; ++r) {
          const double* go = n.grad.d.data() + r * D;
          const double* xh = xhat.d.data() + r * D;
          if (n.parents[1]->requires_grad) {
            Tensor& gg = n.parents[1]->ensure_grad();
            for (int64_t c = 0; c < D; ++c) gg.d[c] += go[c] * xh[c];
          }
          if (n.parents[2]->requires_grad) {
            Tensor& gb = n.parents[2]->ensure_grad();
            for (int64_t c = 0; c < D; ++c) gb.d[c] += go[c];
          }
          if (n.parents[0]->requires_grad) {
            Tensor& gx = n.parents[0]->ensure_grad();
            double m1 = 0.0, m2 = 0.0;
            for (int64_t c = 0; c < D; ++c) {
              const double dxh = go[c] * gv.d[c];
              m1 += dxh;
              m2 += dxh * xh[c];
            }
            m1 /= double(D);
            m2 /= double(D);
            const double is = inv_std[size_t(r)];
            for (int64_t c = 0; c < D; ++c) {
              const double dxh = go[c] * gv.d[c];
              gx.d[size_t(r * D + c)] += is * (dxh - m1 - xh[c] * m2);
            }
          }
        }
      });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var, bool training,
               double momentum, double eps) {
  const int64_t N = x.shape().at(0), C = x.shape().at(1);
  if (gamma.numel() != C || beta.numel() != C ||
      running_mean.numel() != C || running_var.numel() != C)
    throw std::invalid_argument("batch_norm: param size mismatch");
  if (training && N < 2)
    throw std::invalid_argument("batch_norm: training needs N >= 2");

  Tensor out(Shape{N, C});
  Tensor xhat(Shape{N, C});
  std::vector<double> inv_std(size_t(C), 0.0);
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double mu = 0.0;
      for (int64_t r = 0; r < N; ++r) mu += x.val().d[size_t(r * C + c)];
      mu /= double(N);
      double var = 0.0;
      for (int64_t r = 0; r < N; ++r) {
        const double dx = x.val().d[size_t(r * C + c)] - mu;
        var += dx * dx;
      }
      var /= double(N);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[size_t(c)] = is;
      for (int64_t r = 0; r < N; ++r) {
        const double xh = (x.val().d[size_t(r * C + c)] - mu) * is;
        xhat.d[size_t(r * C + c)] = xh;
        out.d[size_t(r * C + c)] =
            gamma.val().d[c] * xh + beta.val().d[c];
      }
      running_mean.d[c] = (1.0 - momentum) * running_mean.d[c] + momentum * mu;
      running_var.d[c] = (1.0 - momentum) * running_var.d[c] +
                         momentum * var * double(N) / double(N - 1);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      const double is = 1.0 / std::sqrt(running_var.d[c] + eps);
      inv_std[size_t(c)] = is;
      for (int64_t r = 0; r < N; ++r) {
        const double xh = (x.val().d[size_t(r * C + c)] - running_mean.d[c]) * is;
        xhat.d[size_t(r * C + c)] = xh;
        out.d[size_t(r * C + c)] =
            gamma.val().d[c] * xh + beta.val().d[c];
      }
    }
  }
  return make_op(
      std::move(out), {x, gamma, beta},
      [N, C, training, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Var::Node& n) {
        const Tensor& gv = n.parents[1]->val;
        if (n.parents[1]->requires_grad) {
          Tensor& gg = n.parents[1]->ensure_grad();
          for (int64_t r = 0; r < N; ++r)
            for (int64_t c = 0; c < C; ++c)
              gg.d[c] += n.grad.d[size_t(r * C + c)] * xhat.d[size_t(r * C + c)];
        }
        if (n.parents[2]->requires_grad) {
          Tensor& gb = n.parents[2]->ensure_grad();
          for (int64_t r = 0; r < N; ++r)
            for (int64_t c = 0; c < C; ++c)
              gb.d[c] += n.grad.d[size_t(r * C + c)];
        }
        if (!n.parents[0]->requires_grad) return;
        Tensor& gx = n.parents[0]->ensure_grad();
        if (!training) {
          for (int64_t r = 0; r < N; ++r)
            for (int64_t c = 0; c < C; ++c)
              gx.d[size_t(r * C + c)] +=
                  n.grad.d[size_t(r * C + c)] * gv.d[c] * inv_std[size_t(c)];
          return;
        }
        for (int64_t c = 0; c < C; ++c) {
          double m1 = 0.0, m2 = 0.0;
          for (int64_t r = 0; r < N; ++r) {
            const double dxh = n.grad.d[size_t(r * C + c)] * gv.d[c];
            m1 += dxh;
            m2 += dxh * xhat.d[size_t(r * C + c)];
          }
          m1 /= double(N);
          m2 /= double(N);
          for (int64_t r = 0; r < N; ++r) {
            const double dxh = n.grad.d[size_t(r * C + c)] * gv.d[c];
            gx.d[size_t(r * C + c)] +=
                inv_std[size_t(c)] *
                (dxh - m1 - xhat.d[size_t(r * C + c)] * m2);
          }
        }
      });
}

// ---- conv / image ----

namespace {

struct ConvDims {
  int64_t cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int pad) {
  if (xs.size() != 3 || ws.size() != 4)
    throw std::invalid_argument("conv2d: x " + shape_str(xs) + " w " +
                                shape_str(ws));
  ConvDims d;
  d.cin = xs[0];
  d.h = xs[1];
  d.w = xs[2];
  d.cout = ws[0];
  d.kh = ws[2];
  d.kw = ws[3];
  d.stride = stride;
  d.pad = pad;
  if (ws[1] != d.cin)
    throw std::invalid_argument("conv2d: channel mismatch");
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.ho <= 0 || d.wo <= 0)
    throw std::invalid_argument("conv2d: empty output");
  return d;
}

// cols [K, P] with K = cin*kh*kw, P = ho*wo
void im2col(const double* x, const ConvDims& d, double* cols) {
  const int64_t P = d.ho * d.wo;
  for (int64_t ci = 0; ci < d.cin; ++ci)
    for (int64_t ky = 0; ky < d.kh; ++ky)
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        double* row = cols + ((ci * d.kh + ky) * d.kw + kx) * P;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy * d.stride + ky - d.pad;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t ix = ox * d.stride + kx - d.pad;
            row[oy * d.wo + ox] =
                (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                    ? x[(ci * d.h + iy) * d.w + ix]
                    : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvDims& d, double* gx) {
  const int64_t P = d.ho * d.wo;
  for (int64_t ci = 0; ci < d.cin; ++ci)
    for (int64_t ky = 0; ky < d.kh; ++ky)
      for (int64_t kx = 0; kx < d.kw; ++kx) {
        const double* row = cols + ((ci * d.kh + ky) * d.kw + kx) * P;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          const int64_t iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            const int64_t ix = ox * d.stride + kx - d.pad;
            if (ix < 0 || ix >= d.w) continue;
            gx[(ci * d.h + iy) * d.w + ix] += row[oy * d.wo + ox];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
  if (b.numel() != d.cout)
    throw std::invalid_argument("conv2d: bias size mismatch");
  const int64_t K = d.cin * d.kh * d.kw, P = d.ho * d.wo;
  Tensor cols(Shape{K, P});
  im2col(x.val().d.data(), d, cols.d.data());
  Tensor out(Shape{d.cout, d.ho, d.wo});
  MapM Y = as_mat(out, d.cout, P);
  Y.noalias() = as_mat(w.val(), d.cout, K) * as_mat(cols, K, P);
  for (int64_t c = 0; c < d.cout; ++c)
    Y.row(c).array() += b.val().d[size_t(c)];
  return make_op(std::move(out), {x, w, b}, [d, K, P](Var::Node& n) {
    CMapM G(n.grad.d.data(), d.cout, P);
    if (n.parents[2]->requires_grad) {
      Tensor& gb = n.parents[2]->ensure_grad();
      for (int64_t c = 0; c < d.cout; ++c) gb.d[size_t(c)] += G.row(c).sum();
    }
    if (n.parents[1]->requires_grad) {
      // recompute the column matrix rather than keeping it alive
      Tensor cols(Shape{K, P});
      im2col(n.parents[0]->val.d.data(), d, cols.d.data());
      MapM dW = as_mat(n.parents[1]->ensure_grad(), d.cout, K);
      dW.noalias() += G * as_mat(cols, K, P).transpose();
    }
    if (n.parents[0]->requires_grad) {
      Tensor dcols(Shape{K, P});
      as_mat(dcols, K, P).noalias() =
          as_mat(n.parents[1]->val, d.cout, K).transpose() * G;
      col2im_add(dcols.d.data(), d, n.parents[0]->ensure_grad().d.data());
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("upsample_nearest2x: got " +
                                shape_str(x.shape()));
  const int64_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Tensor out(Shape{C, 2 * H, 2 * W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xk = 0; xk < W; ++xk) {
        const double v = x.val().d[size_t((c * H + y) * W + xk)];
        double* o = out.d.data() + (c * 2 * H + 2 * y) * 2 * W + 2 * xk;
        o[0] = v;
        o[1] = v;
        o[2 * W] = v;
        o[2 * W + 1] = v;
      }
  return make_op(std::move(out), {x}, [C, H, W](Var::Node& n) {
    Tensor& g = n.parents[0]->ensure_grad();
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xk = 0; xk < W; ++xk) {
          const double* go =
              n.grad.d.data() + (c * 2 * H + 2 * y) * 2 * W + 2 * xk;
          g.d[size_t((c * H + y) * W + xk)] +=
              go[0] + go[1] + go[2 * W] + go[2 * W + 1];
        }
  });
}

Var concat_chan(const Var& a, const Var& b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 ||
      a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2])
    throw std::invalid_argument("concat_chan: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const int64_t Ca = a.shape()[0], Cb = b.shape()[0];
  const int64_t HW = a.shape()[1] * a.shape()[2];
  Tensor out(Shape{Ca + Cb, a.shape()[1], a.shape()[2]});
  std::copy_n(a.val().d.data(), Ca * HW, out.d.data());
  std::copy_n(b.val().d.data(), Cb * HW, out.d.data() + Ca * HW);
  return make_op(std::move(out), {a, b}, [Ca, Cb, HW](Var::Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->ensure_grad();
      for (int64_t i = 0; i < Ca * HW; ++i) g.d[size_t(i)] += n.grad.d[size_t(i)];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->ensure_grad();
      for (int64_t i = 0; i < Cb * HW; ++i)
        g.d[size_t(i)] += n.grad.d[size_t(Ca * HW + i)];
    }
  });
}

// ---- gather / fusion ----

Var bilinear_sample_map(const Var& map, const Tensor& uv) {
  if (map.shape().size() != 3 || uv.shape.size() != 2 || uv.shape[1] != 2)
    throw std::invalid_argument("bilinear_sample_map: map " +
                                shape_str(map.shape()) + " uv " +
                                shape_str(uv.shape));
  const int64_t C = map.shape()[0], H = map.shape()[1], W = map.shape()[2];
  const int64_t N = uv.shape[0];
  // corner indices and weights depend only on the point
  std::vector<int64_t> x0s(size_t(N), 0), y0s(size_t(N), 0);
  std::vector<double> fxs(size_t(N), 0.0), fys(size_t(N), 0.0);
  for (int64_t i = 0; i < N; ++i) {
    double px = uv.d[size_t(2 * i)], py = uv.d[size_t(2 * i + 1)];
    px = std::min(std::max(px, 0.0), double(W - 1));
    py = std::min(std::max(py, 0.0), double(H - 1));
    int64_t x0 = std::min(int64_t(std::floor(px)), W >= 2 ? W - 2 : int64_t(0));
    int64_t y0 = std::min(int64_t(std::floor(py)), H >= 2 ? H - 2 : int64_t(0));
    x0s[size_t(i)] = x0;
    y0s[size_t(i)] = y0;
    fxs[size_t(i)] = W >= 2 ? px - double(x0) : 0.0;
    fys[size_t(i)] = H >= 2 ? py - double(y0) : 0.0;
  }
  Tensor out(Shape{N, C});
  const int64_t x_step = W >= 2 ? 1 : 0, y_step = H >= 2 ? W : 0;
  for (int64_t i = 0; i < N; ++i) {
    const double fx = fxs[size_t(i)], fy = fys[size_t(i)];
    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
    const double w01 = (1 - fx) * fy, w11 = fx * fy;
    const int64_t base = y0s[size_t(i)] * W + x0s[size_t(i)];
    for (int64_t c = 0; c < C; ++c) {
      const double* m = map.val().d.data() + c * H * W + base;
      out.d[size_t(i * C + c)] = w00 * m[0] + w10 * m[x_step] +
                                 w01 * m[y_step] + w11 * m[y_step + x_step];
    }
  }
  return make_op(
      std::move(out), {map},
      [C, H, W, N, x_step, y_step, x0s = std::move(x0s), y0s = std::move(y0s),
       fxs = std::move(fxs), fys = std::move(fys)](Var::Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (int64_t i = 0; i < N; ++i) {
          const double fx = fxs[size_t(i)], fy = fys[size_t(i)];
          const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
          const double w01 = (1 - fx) * fy, w11 = fx * fy;
          const int64_t base = y0s[size_t(i)] * W + x0s[size_t(i)];
          for (int64_t c = 0; c < C; ++c) {
            const double go = n.grad.d[size_t(i * C + c)];
            double* m = g.d.data() + c * H * W + base;
            m[0] += w00 * go;
            m[x_step] += w10 * go;
            m[y_step] += w01 * go;
            m[y_step + x_step] += w11 * go;
          }
        }
      });
}

Var max_views(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("max_views: empty input");
  const Shape s = xs[0].shape();
  for (const Var& x : xs)
    if (x.shape() != s)
      throw std::invalid_argument("max_views: shape mismatch");
  const int64_t n = shape_numel(s);
  Tensor out = xs[0].val();
  std::vector<int32_t> arg(size_t(n), 0);
  for (size_t m = 1; m < xs.size(); ++m)
    for (int64_t i = 0; i < n; ++i)
      if (xs[m].val().d[size_t(i)] > out.d[size_t(i)]) {
        out.d[size_t(i)] = xs[m].val().d[size_t(i)];
        arg[size_t(i)] = int32_t(m);
      }
  return make_op(std::move(out), xs, [n, arg = std::move(arg)](Var::Node& nd) {
    for (int64_t i = 0; i < n; ++i) {
      auto& p = nd.parents[size_t(arg[size_t(i)])];
      if (p->requires_grad) p->ensure_grad().d[size_t(i)] += nd.grad.d[size_t(i)];
    }
  });
}

// ---- attention ----

Var attention_heads(const Var& q, const Var& k, const Var& v, int heads) {
  const int64_t T = q.shape().at(0), D = q.shape().at(1);
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw std::invalid_argument("attention_heads: q/k/v shape mismatch");
  if (heads <= 0 || D % heads != 0)
    throw std::invalid_argument("attention_heads: dim " + std::to_string(D) +
                                " not divisible by " + std::to_string(heads));
  const int64_t dk = D / heads;
  const double sc = 1.0 / std::sqrt(double(dk));
  Tensor out(Shape{T, D});
  Tensor alphas(Shape{int64_t(heads), T, T});
  for (int h = 0; h < heads; ++h) {
    CHeadMap Q(q.val().d.data() + h * dk, T, dk, StrideO(D));
    CHeadMap K(k.val().d.data() + h * dk, T, dk, StrideO(D));
    CHeadMap V(v.val().d.data() + h * dk, T, dk, StrideO(D));
    MapM A(alphas.d.data() + int64_t(h) * T * T, T, T);
    A.noalias() = (Q * K.transpose()) * sc;
    for (int64_t r = 0; r < T; ++r) {
      double m = A.row(r).maxCoeff();
      A.row(r) = (A.row(r).array() - m).exp();
      A.row(r) /= A.row(r).sum();
    }
    HeadMap O(out.d.data() + h * dk, T, dk, StrideO(D));
    O.noalias() = A * V;
  }
  return make_op(
      std::move(out), {q, k, v},
      [T, D, dk, heads, sc, alphas = std::move(alphas)](Var::Node& n) {
        for (int h = 0; h < heads; ++h) {
          CHeadMap Q(n.parents[0]->val.d.data() + h * dk, T, dk, StrideO(D));
          CHeadMap K(n.parents[1]->val.d.data() + h * dk, T, dk, StrideO(D));
          CHeadMap V(n.parents[2]->val.d.data() + h * dk, T, dk, StrideO(D));
          CMapM A(alphas.d.data() + int64_t(h) * T * T, T, T);
          CHeadMap GO(n.grad.d.data() + h * dk, T, dk, StrideO(D));
          if (n.parents[2]->requires_grad) {
            HeadMap dV(n.parents[2]->ensure_grad().d.data() + h * dk, T, dk,
                       StrideO(D));
            dV.noalias() += A.transpose() * GO;
          }
          MatRM dA = GO * V.transpose();  // [T,T]
          MatRM dS(T, T);
          for (int64_t r = 0; r < T; ++r) {
            const double dot = dA.row(r).dot(A.row(r));
            dS.row(r) = A.row(r).array() * (dA.row(r).array() - dot);
          }
          if (n.parents[0]->requires_grad) {
            HeadMap dQ(n.parents[0]->ensure_grad().d.data() + h * dk, T, dk,
                       StrideO(D));
            dQ.noalias() += (dS * K) * sc;
          }
          if (n.parents[1]->requires_grad) {
            HeadMap dK(n.parents[1]->ensure_grad().d.data() + h * dk, T, dk,
                       StrideO(D));
            dK.noalias() += (dS.transpose() * Q) * sc;
          }
        }
      });
}

Var neighbor_attention(const Var& q, const Var& k, const Var& v,
                       const std::vector<int32_t>& idx, const Tensor& bias,
                       int heads) {
  const int64_t N = q.shape().at(0), D = q.shape().at(1);
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw std::invalid_argument("neighbor_attention: q/k/v shape mismatch");
  if (heads <= 0 || D % heads != 0)
    throw std::invalid_argument("neighbor_attention: dim not divisible");
  if (bias.shape.size() != 2 || bias.shape[0] != N)
    throw std::invalid_argument("neighbor_attention: bias shape " +
                                shape_str(bias.shape));
  const int64_t kn = bias.shape[1];
  if (int64_t(idx.size()) != N * kn)
    throw std::invalid_argument("neighbor_attention: idx size mismatch");
  const int64_t dk = D / heads;
  const double sc = 1.0 / std::sqrt(double(dk));
  const double ninf = -std::numeric_limits<double>::infinity();

  for (int64_t i = 0; i < N; ++i) {
    bool any = false;
    for (int64_t j = 0; j < kn && !any; ++j)
      any = bias.d[size_t(i * kn + j)] != ninf;
    if (!any)
      throw std::runtime_error(
          "neighbor_attention: every neighbor of point " + std::to_string(i) +
          " is excluded");
    for (int64_t j = 0; j < kn; ++j) {
      const int32_t t = idx[size_t(i * kn + j)];
      if (t < 0 || int64_t(t) >= N)
        throw std::invalid_argument("neighbor_attention: index out of range");
    }
  }

  Tensor out(Shape{N, D});
  Tensor alphas(Shape{N, int64_t(heads), kn});
  for (int64_t i = 0; i < N; ++i) {
    for (int h = 0; h < heads; ++h) {
      const double* qr = q.val().d.data() + i * D + h * dk;
      double* al = alphas.d.data() + (i * heads + h) * kn;
      double m = ninf;
      for (int64_t j = 0; j < kn; ++j) {
        const double bj = bias.d[size_t(i * kn + j)];
        if (bj == ninf) {
          al[j] = ninf;
          continue;
        }
        const double* kr =
            k.val().d.data() + int64_t(idx[size_t(i * kn + j)]) * D + h * dk;
        double s = 0.0;
        for (int64_t c = 0; c < dk; ++c) s += qr[c] * kr[c];
        al[j] = s * sc + bj;
        m = std::max(m, al[j]);
      }
      double z = 0.0;
      for (int64_t j = 0; j < kn; ++j) {
        al[j] = al[j] == ninf ? 0.0 : std::exp(al[j] - m);
        z += al[j];
      }
      for (int64_t j = 0; j < kn; ++j) al[j] /= z;
      double* o = out.d.data() + i * D + h * dk;
      for (int64_t j = 0; j < kn; ++j) {
        if (al[j] == 0.0) continue;
        const double* vr =
            v.val().d.data() + int64_t(idx[size_t(i * kn + j)]) * D + h * dk;
        for (int64_t c = 0; c < dk; ++c) o[c] += al[j] * vr[c];
      }
    }
  }
  return make_op(
      std::move(out), {q, k, v},
      [N, D, dk, kn, heads, sc, idx, alphas = std::move(alphas)](
          Var::Node& n) {
        Tensor* gq = n.parents[0]->requires_grad
                         ? &n.parents[0]->ensure_grad()
                         : nullptr;
        Tensor* gk = n.parents[1]->requires_grad
                         ? &n.parents[1]->ensure_grad()
                         : nullptr;
        Tensor* gv = n.parents[2]->requires_grad
                         ? &n.parents[2]->ensure_grad()
                         : nullptr;
        std::vector<double> da(size_t(kn), 0.0), ds(size_t(kn), 0.0);
        for (int64_t i = 0; i < N; ++i) {
          for (int h = 0; h < heads; ++h) {
            const double* al = alphas.d.data() + (i * heads + h) * kn;
            const double* go = n.grad.d.data() + i * D + h * dk;
            double dot = 0.0;
            for (int64_t j = 0; j < kn; ++j) {
              da[size_t(j)] = 0.0;
              if (al[j] == 0.0) continue;
              const double* vr = n.parents[2]->val.d.data() +
                                 int64_t(idx[size_t(i * kn + j)]) * D + h * dk;
              double s = 0.0;
              for (int64_t c = 0; c < dk; ++c) s += go[c] * vr[c];
              da[size_t(j)] = s;
              dot += s * al[j];
            }
            for (int64_t j = 0; j < kn; ++j)
              ds[size_t(j)] = al[j] * (da[size_t(j)] - dot);
            const double* qr = n.parents[0]->val.d.data() + i * D + h * dk;
            for (int64_t j = 0; j < kn; ++j) {
              if (al[j] == 0.0 && ds[size_t(j)] == 0.0) continue;
              const int64_t t = int64_t(idx[size_t(i * kn + j)]);
              const double* kr = n.parents[1]->val.d.data() + t * D + h * dk;
              if (gv) {
                double* gvr = gv->d.data() + t * D + h * dk;
                for (int64_t c = 0; c < dk; ++c) gvr[c] += al[j] * go[c];
              }
              if (gq) {
                double* gqr = gq->d.data() + i * D + h * dk;
                for (int64_t c = 0; c < dk; ++c)
                  gqr[c] += ds[size_t(j)] * sc * kr[c];
              }
              if (gk) {
                double* gkr = gk->d.data() + t * D + h * dk;
                for (int64_t c = 0; c < dk; ++c)
                  gkr[c] += ds[size_t(j)] * sc * qr[c];
              }
            }
          }
        }
      });
}

// ---- loss ----

Var mse_loss(const Var& pred, const Tensor& target) {
  if (pred.numel() != target.numel())
    throw std::invalid_argument("mse_loss: " + shape_str(pred.shape()) +
                                " vs " + shape_str(target.shape));
  const int64_t n = pred.numel();
  Tensor out(Shape{1});
  for (int64_t i = 0; i < n; ++i) {
    const double d = pred.val().d[size_t(i)] - target.d[size_t(i)];
    out.d[0] += d * d;
  }
  out.d[0] /= double(n);
  return make_op(std::move(out), {pred}, [n, target](Var::Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    const double s = 2.0 * nd.grad.d[0] / double(n);
    for (int64_t i = 0; i < n; ++i)
      g.d[size_t(i)] += s * (nd.parents[0]->val.d[size_t(i)] - target.d[size_t(i)]);
  });
}

}  // namespace scbct::nn
