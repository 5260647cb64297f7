#pragma once

#include <Eigen/Core>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "srl/core/tensor.hpp"

namespace srl::core {

namespace debug {
/// Test hook: when set to an op name, backward flow through that op is
/// deliberately perturbed so gradient checks can prove they catch bugs.
inline std::string corrupt_backward_op;
}  // namespace debug

template <class S>
using EigenRowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<EigenRowMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const EigenRowMat<S>>;

/// Define-by-run gradient tape. Nodes are created by the op methods and hold
/// the forward value; backward() walks the tape in reverse creation order and
/// accumulates gradients into reachable trainable Variables. A Graph instance
/// is built per training step and discarded afterwards; it is confined to one
/// thread.
template <class S>
class Graph {
 public:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // allocated on demand during backward
    bool needs_grad = false;
    const char* op = "";
    std::function<void(Node&)> back;

    bool has_grad() const { return !grad.data.empty(); }
    void ensure_grad() {
      if (!has_grad()) grad = Tensor<S>::zeros(value.shape);
    }
    void add_grad(const Tensor<S>& g) {
      ensure_grad();
      for (std::size_t i = 0; i < g.data.size(); ++i) grad.data[i] += g.data[i];
    }
  };
  using Ref = Node*;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }

  // ---- leaves ----

  Ref constant(Tensor<S> v) { return make(std::move(v), false, "constant"); }

  Ref scalar_constant(S v) { return constant(Tensor<S>::scalar(v)); }

  Ref param(Variable<S>& var) {
    Ref n = make(var.value, var.trainable, "param");
    Variable<S>* vp = &var;
    n->back = [vp](Node& self) {
      vp->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        vp->grad.data[i] += self.grad.data[i];
    };
    return n;
  }

  // ---- elementwise ----

  Ref add(Ref a, Ref b) {
    check_same(a, b, "add");
    Tensor<S> out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    Ref n = make(std::move(out), a->needs_grad || b->needs_grad, "add");
    n->back = [a, b](Node& self) {
      if (a->needs_grad) a->add_grad(self.grad);
      if (b->needs_grad) b->add_grad(self.grad);
    };
    return n;
  }

  Ref sub(Ref a, Ref b) {
    check_same(a, b, "sub");
    Tensor<S> out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    Ref n = make(std::move(out), a->needs_grad || b->needs_grad, "sub");
    n->back = [a, b](Node& self) {
      if (a->needs_grad) a->add_grad(self.grad);
      if (b->needs_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < self.grad.data.size(); ++i)
          b->grad.data[i] -= self.grad.data[i];
      }
    };
    return n;
  }

  Ref mul(Ref a, Ref b) {
    check_same(a, b, "mul");
    Tensor<S> out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    Ref n = make(std::move(out), a->needs_grad || b->needs_grad, "mul");
    n->back = [a, b](Node& self) {
      if (a->needs_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.grad.data.size(); ++i)
          a->grad.data[i] += self.grad.data[i] * b->value.data[i];
      }
      if (b->needs_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < self.grad.data.size(); ++i)
          b->grad.data[i] += self.grad.data[i] * a->value.data[i];
      }
    };
    return n;
  }

  Ref scale(Ref a, S c) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v *= c;
    Ref n = make(std::move(out), a->needs_grad, "scale");
    n->back = [a, c](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        a->grad.data[i] += self.grad.data[i] * c;
    };
    return n;
  }

  Ref add_scalar(Ref a, S c) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v += c;
    Ref n = make(std::move(out), a->needs_grad, "add_scalar");
    n->back = [a](Node& self) {
      if (a->needs_grad) a->add_grad(self.grad);
    };
    return n;
  }

  /// max(0, x); the subgradient at exactly 0 is taken as 0.
  Ref relu(Ref a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = v > S(0) ? v : S(0);
    Ref n = make(std::move(out), a->needs_grad, "relu");
    n->back = [a](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        if (a->value.data[i] > S(0)) a->grad.data[i] += self.grad.data[i];
    };
    return n;
  }

  Ref sigmoid(Ref a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = stable_sigmoid(v);
    Ref n = make(std::move(out), a->needs_grad, "sigmoid");
    Ref self_ref = n;
    n->back = [a, self_ref](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        S s = self_ref->value.data[i];
        a->grad.data[i] += self.grad.data[i] * s * (S(1) - s);
      }
    };
    return n;
  }

  Ref tanh_op(Ref a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = std::tanh(v);
    Ref n = make(std::move(out), a->needs_grad, "tanh");
    Ref self_ref = n;
    n->back = [a, self_ref](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        S t = self_ref->value.data[i];
        a->grad.data[i] += self.grad.data[i] * (S(1) - t * t);
      }
    };
    return n;
  }

  Ref exp_op(Ref a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = std::exp(v);
    Ref n = make(std::move(out), a->needs_grad, "exp");
    Ref self_ref = n;
    n->back = [a, self_ref](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        a->grad.data[i] += self.grad.data[i] * self_ref->value.data[i];
    };
    return n;
  }

  Ref square(Ref a) {
    Tensor<S> out = a->value;
    for (auto& v : out.data) v = v * v;
    Ref n = make(std::move(out), a->needs_grad, "square");
    n->back = [a](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        a->grad.data[i] += S(2) * a->value.data[i] * self.grad.data[i];
    };
    return n;
  }

  // ---- shape ----

  Ref reshape(Ref a, std::vector<int> shape) {
    Tensor<S> out(std::move(shape));
    if (out.numel() != a->value.numel())
      throw ShapeError("reshape: cannot view " +
                       Tensor<S>::shape_string(a->value.shape) + " as " +
                       Tensor<S>::shape_string(out.shape));
    out.data = a->value.data;
    Ref n = make(std::move(out), a->needs_grad, "reshape");
    n->back = [a](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < self.grad.data.size(); ++i)
        a->grad.data[i] += self.grad.data[i];
    };
    return n;
  }

  /// Extracts the feature vectors at spatial location (m, n) of a B x C x M x N
  /// activation map, giving a B x C matrix.
  Ref spatial_vec(Ref a, int m, int n) {
    if (a->value.ndim() != 4)
      throw ShapeError("spatial_vec: expected 4-d activation map, got " +
                       Tensor<S>::shape_string(a->value.shape));
    int B = a->value.dim(0), C = a->value.dim(1), M = a->value.dim(2), N = a->value.dim(3);
    if (m < 0 || m >= M || n < 0 || n >= N)
      throw IndexError("spatial_vec: location (" + std::to_string(m) + "," +
                       std::to_string(n) + ") outside grid " + std::to_string(M) +
                       "x" + std::to_string(N));
    Tensor<S> out({B, C});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) out.at2(b, c) = a->value.at4(b, c, m, n);
    Ref node = make(std::move(out), a->needs_grad, "spatial_vec");
    node->back = [a, m, n, B, C](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          a->grad.at4(b, c, m, n) += self.grad.at2(b, c);
    };
    return node;
  }

  /// Gathers rows of a 2-d tensor; rows may repeat.
  Ref gather_rows(Ref a, std::vector<int> rows) {
    if (a->value.ndim() != 2)
      throw ShapeError("gather_rows: expected 2-d tensor");
    int R = a->value.dim(0), C = a->value.dim(1);
    for (int r : rows)
      if (r < 0 || r >= R)
        throw IndexError("gather_rows: row " + std::to_string(r) +
                         " outside [0," + std::to_string(R) + ")");
    Tensor<S> out({static_cast<int>(rows.size()), C});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int c = 0; c < C; ++c) out.at2(static_cast<int>(i), c) = a->value.at2(rows[i], c);
    Ref n = make(std::move(out), a->needs_grad, "gather_rows");
    n->back = [a, rows = std::move(rows), C](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (int c = 0; c < C; ++c)
          a->grad.at2(rows[i], c) += self.grad.at2(static_cast<int>(i), c);
    };
    return n;
  }

  Ref concat_cols(Ref a, Ref b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(0) != b->value.dim(0))
      throw ShapeError("concat_cols: row counts differ (" +
                       Tensor<S>::shape_string(a->value.shape) + " vs " +
                       Tensor<S>::shape_string(b->value.shape) + ")");
    int B = a->value.dim(0), Ca = a->value.dim(1), Cb = b->value.dim(1);
    Tensor<S> out({B, Ca + Cb});
    for (int r = 0; r < B; ++r) {
      for (int c = 0; c < Ca; ++c) out.at2(r, c) = a->value.at2(r, c);
      for (int c = 0; c < Cb; ++c) out.at2(r, Ca + c) = b->value.at2(r, c);
    }
    Ref n = make(std::move(out), a->needs_grad || b->needs_grad, "concat_cols");
    n->back = [a, b, B, Ca, Cb](Node& self) {
      if (a->needs_grad) {
        a->ensure_grad();
        for (int r = 0; r < B; ++r)
          for (int c = 0; c < Ca; ++c) a->grad.at2(r, c) += self.grad.at2(r, c);
      }
      if (b->needs_grad) {
        b->ensure_grad();
        for (int r = 0; r < B; ++r)
          for (int c = 0; c < Cb; ++c) b->grad.at2(r, c) += self.grad.at2(r, Ca + c);
      }
    };
    return n;
  }

  /// Per-row inner product of two equally shaped B x C matrices -> B x 1.
  Ref rowwise_dot(Ref a, Ref b) {
    check_same(a, b, "rowwise_dot");
    if (a->value.ndim() != 2) throw ShapeError("rowwise_dot: expected 2-d tensors");
    int B = a->value.dim(0), C = a->value.dim(1);
    Tensor<S> out({B, 1});
    for (int r = 0; r < B; ++r) {
      S acc = 0;
      for (int c = 0; c < C; ++c) acc += a->value.at2(r, c) * b->value.at2(r, c);
      out.at2(r, 0) = acc;
    }
    Ref n = make(std::move(out), a->needs_grad || b->needs_grad, "rowwise_dot");
    n->back = [a, b, B, C](Node& self) {
      for (int r = 0; r < B; ++r) {
        S g = self.grad.at2(r, 0);
        if (a->needs_grad) {
          a->ensure_grad();
          for (int c = 0; c < C; ++c) a->grad.at2(r, c) += g * b->value.at2(r, c);
        }
        if (b->needs_grad) {
          b->ensure_grad();
          for (int c = 0; c < C; ++c) b->grad.at2(r, c) += g * a->value.at2(r, c);
        }
      }
    };
    return n;
  }

  // ---- matrix products ----

  /// A (M x K) times B (K x N).
  Ref matmul(Ref a, Ref b) {
    check_matdims(a, b, false, "matmul");
    int M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
    Tensor<S> out({M, N});
    MatMap<S>(out.data.data(), M, N).noalias() =
        cmap(a->value, M, K) * cmap(b->value, K, N);
    Ref n = make(std::move(out), a->needs_grad || b->needs_grad, "matmul");
    n->back = [a, b, M, K, N](Node& self) {
      ConstMatMap<S> g(self.grad.data.data(), M, N);
      if (a->needs_grad) {
        a->ensure_grad();
        MatMap<S>(a->grad.data.data(), M, K).noalias() +=
            g * cmap(b->value, K, N).transpose();
      }
      if (b->needs_grad) {
        b->ensure_grad();
        MatMap<S>(b->grad.data.data(), K, N).noalias() +=
            cmap(a->value, M, K).transpose() * g;
      }
    };
    return n;
  }

  /// A (M x K) times B^T where B is (N x K).
  Ref matmul_nt(Ref a, Ref b) {
    check_matdims(a, b, true, "matmul_nt");
    int M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(0);
    Tensor<S> out({M, N});
    MatMap<S>(out.data.data(), M, N).noalias() =
        cmap(a->value, M, K) * cmap(b->value, N, K).transpose();
    Ref n = make(std::move(out), a->needs_grad || b->needs_grad, "matmul_nt");
    n->back = [a, b, M, K, N](Node& self) {
      ConstMatMap<S> g(self.grad.data.data(), M, N);
      if (a->needs_grad) {
        a->ensure_grad();
        MatMap<S>(a->grad.data.data(), M, K).noalias() += g * cmap(b->value, N, K);
      }
      if (b->needs_grad) {
        b->ensure_grad();
        MatMap<S>(b->grad.data.data(), N, K).noalias() +=
            g.transpose() * cmap(a->value, M, K);
      }
    };
    return n;
  }

  /// input (B x F_in), weight (F_out x F_in), bias (F_out) -> B x F_out.
  Ref affine(Ref x, Ref w, Ref b) {
    if (x->value.ndim() != 2 || w->value.ndim() != 2)
      throw ShapeError("affine: input and weight must be 2-d");
    int B = x->value.dim(0), Fin = x->value.dim(1);
    int Fout = w->value.dim(0);
    if (w->value.dim(1) != Fin)
      throw ShapeError("affine: weight input axis " + std::to_string(w->value.dim(1)) +
                       " != input feature axis " + std::to_string(Fin));
    if (b->value.numel() != static_cast<std::size_t>(Fout))
      throw ShapeError("affine: bias axis " + std::to_string(b->value.numel()) +
                       " != weight output axis " + std::to_string(Fout));
    Tensor<S> out({B, Fout});
    MatMap<S> o(out.data.data(), B, Fout);
    o.noalias() = cmap(x->value, B, Fin) * cmap(w->value, Fout, Fin).transpose();
    for (int r = 0; r < B; ++r)
      for (int c = 0; c < Fout; ++c) out.at2(r, c) += b->value.data[c];
    Ref n = make(std::move(out), x->needs_grad || w->needs_grad || b->needs_grad,
                 "affine");
    n->back = [x, w, b, B, Fin, Fout](Node& self) {
      ConstMatMap<S> g(self.grad.data.data(), B, Fout);
      if (x->needs_grad) {
        x->ensure_grad();
        MatMap<S>(x->grad.data.data(), B, Fin).noalias() += g * cmap(w->value, Fout, Fin);
      }
      if (w->needs_grad) {
        w->ensure_grad();
        MatMap<S>(w->grad.data.data(), Fout, Fin).noalias() +=
            g.transpose() * cmap(x->value, B, Fin);
      }
      if (b->needs_grad) {
        b->ensure_grad();
        for (int r = 0; r < B; ++r)
          for (int c = 0; c < Fout; ++c) b->grad.data[c] += self.grad.at2(r, c);
      }
    };
    return n;
  }

  /// u (B x F1), W (F1 x F2), v (K x F2) -> scores (B x K) with
  /// out[b,k] = u[b]^T W v[k].
  Ref bilinear_score(Ref u, Ref w, Ref v) {
    if (u->value.ndim() != 2 || w->value.ndim() != 2 || v->value.ndim() != 2)
      throw ShapeError("bilinear_score: expected 2-d operands");
    int B = u->value.dim(0), F1 = u->value.dim(1);
    int F2 = w->value.dim(1), K = v->value.dim(0);
    if (w->value.dim(0) != F1)
      throw ShapeError("bilinear_score: W first axis " + std::to_string(w->value.dim(0)) +
                       " != u feature axis " + std::to_string(F1));
    if (v->value.dim(1) != F2)
      throw ShapeError("bilinear_score: v feature axis " + std::to_string(v->value.dim(1)) +
                       " != W second axis " + std::to_string(F2));
    Tensor<S> uw({B, F2});
    MatMap<S>(uw.data.data(), B, F2).noalias() =
        cmap(u->value, B, F1) * cmap(w->value, F1, F2);
    Tensor<S> out({B, K});
    MatMap<S>(out.data.data(), B, K).noalias() =
        ConstMatMap<S>(uw.data.data(), B, F2) * cmap(v->value, K, F2).transpose();
    Ref n = make(std::move(out), u->needs_grad || w->needs_grad || v->needs_grad,
                 "bilinear_score");
    n->back = [u, w, v, uw = std::move(uw), B, F1, F2, K](Node& self) {
      ConstMatMap<S> g(self.grad.data.data(), B, K);
      Tensor<S> gv({B, F2});
      MatMap<S>(gv.data.data(), B, F2).noalias() = g * cmap(v->value, K, F2);
      if (u->needs_grad) {
        u->ensure_grad();
        MatMap<S>(u->grad.data.data(), B, F1).noalias() +=
            ConstMatMap<S>(gv.data.data(), B, F2) * cmap(w->value, F1, F2).transpose();
      }
      if (w->needs_grad) {
        w->ensure_grad();
        MatMap<S>(w->grad.data.data(), F1, F2).noalias() +=
            cmap(u->value, B, F1).transpose() * ConstMatMap<S>(gv.data.data(), B, F2);
      }
      if (v->needs_grad) {
        v->ensure_grad();
        MatMap<S>(v->grad.data.data(), K, F2).noalias() +=
            g.transpose() * ConstMatMap<S>(uw.data.data(), B, F2);
      }
    };
    return n;
  }

  // ---- reductions ----

  Ref sum(Ref a) {
    S acc = 0;
    for (S v : a->value.data) acc += v;
    Ref n = make(Tensor<S>::scalar(acc), a->needs_grad, "sum");
    n->back = [a](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      S g = self.grad.data[0];
      for (auto& v : a->grad.data) v += g;
    };
    return n;
  }

  Ref mean(Ref a) {
    S acc = 0;
    for (S v : a->value.data) acc += v;
    S inv = S(1) / static_cast<S>(a->value.numel());
    Ref n = make(Tensor<S>::scalar(acc * inv), a->needs_grad, "mean");
    n->back = [a, inv](Node& self) {
      if (!a->needs_grad) return;
      a->ensure_grad();
      S g = self.grad.data[0] * inv;
      for (auto& v : a->grad.data) v += g;
    };
    return n;
  }

  // ---- losses ----

  /// Mean over rows of -log softmax(logits)[target]; row-max subtraction for
  /// numeric stability.
  Ref softmax_cross_entropy_rows(Ref logits, const std::vector<int>& targets) {
    if (logits->value.ndim() != 2)
      throw ShapeError("softmax_cross_entropy_rows: logits must be 2-d");
    int B = logits->value.dim(0), K = logits->value.dim(1);
    if (static_cast<int>(targets.size()) != B)
      throw ShapeError("softmax_cross_entropy_rows: target count " +
                       std::to_string(targets.size()) + " != row count " +
                       std::to_string(B));
    for (int t : targets)
      if (t < 0 || t >= K)
        throw IndexError("softmax_cross_entropy_rows: target " + std::to_string(t) +
                         " outside [0," + std::to_string(K) + ")");
    Tensor<S> probs({B, K});
    S loss = 0;
    for (int r = 0; r < B; ++r) {
      S mx = logits->value.at2(r, 0);
      for (int c = 1; c < K; ++c) mx = std::max(mx, logits->value.at2(r, c));
      S denom = 0;
      for (int c = 0; c < K; ++c) {
        S e = std::exp(logits->value.at2(r, c) - mx);
        probs.at2(r, c) = e;
        denom += e;
      }
      for (int c = 0; c < K; ++c) probs.at2(r, c) /= denom;
      loss += std::log(denom) - (logits->value.at2(r, targets[r]) - mx);
    }
    loss /= static_cast<S>(B);
    Ref n = make(Tensor<S>::scalar(loss), logits->needs_grad, "softmax_cross_entropy");
    n->back = [logits, targets, probs = std::move(probs), B, K](Node& self) {
      if (!logits->needs_grad) return;
      logits->ensure_grad();
      S g = self.grad.data[0] / static_cast<S>(B);
      for (int r = 0; r < B; ++r)
        for (int c = 0; c < K; ++c) {
          S p = probs.at2(r, c) - (targets[r] == c ? S(1) : S(0));
          logits->grad.at2(r, c) += g * p;
        }
    };
    return n;
  }

  /// Binary NCE discrimination over a B x B score matrix whose diagonal holds
  /// the positive pairs: mean softplus(-s_ii) over positives plus mean
  /// softplus(s_ij) over the off-diagonal negatives.
  Ref binary_contrast_rows(Ref scores) {
    if (scores->value.ndim() != 2 || scores->value.dim(0) != scores->value.dim(1))
      throw ShapeError("binary_contrast_rows: expected square score matrix, got " +
                       Tensor<S>::shape_string(scores->value.shape));
    int B = scores->value.dim(0);
    if (B < 2) throw ContractError("binary_contrast_rows: need at least 2 rows");
    S pos = 0, neg = 0;
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < B; ++j) {
        S s = scores->value.at2(i, j);
        if (i == j)
          pos += softplus(-s);
        else
          neg += softplus(s);
      }
    S invp = S(1) / static_cast<S>(B);
    S invn = S(1) / static_cast<S>(static_cast<long>(B) * (B - 1));
    Ref n = make(Tensor<S>::scalar(pos * invp + neg * invn), scores->needs_grad,
                 "binary_contrast");
    n->back = [scores, B, invp, invn](Node& self) {
      if (!scores->needs_grad) return;
      scores->ensure_grad();
      S g = self.grad.data[0];
      for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j) {
          S s = scores->value.at2(i, j);
          if (i == j)
            scores->grad.at2(i, j) += -g * invp * stable_sigmoid(-s);
          else
            scores->grad.at2(i, j) += g * invn * stable_sigmoid(s);
        }
    };
    return n;
  }

  // ---- backward ----

  /// Reverse pass from a scalar loss. Gradients accumulate (no implicit
  /// zeroing) into every reachable trainable Variable.
  void backward(Ref loss) {
    if (loss->value.numel() != 1)
      throw ContractError("backward: loss must be scalar, got shape " +
                          Tensor<S>::shape_string(loss->value.shape));
    loss->ensure_grad();
    loss->grad.data[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = *it;
      if (!n.needs_grad || !n.has_grad() || !n.back) continue;
      if (!debug::corrupt_backward_op.empty() && debug::corrupt_backward_op == n.op)
        for (auto& v : n.grad.data) v *= S(1.01);
      n.back(n);
    }
  }

  static S softplus(S x) {
    if (x > S(30)) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
  }

  static S stable_sigmoid(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    S e = std::exp(x);
    return e / (S(1) + e);
  }

  Ref make(Tensor<S> value, bool needs, const char* op) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.needs_grad = needs;
    n.op = op;
    return &n;
  }

 private:
  static ConstMatMap<S> cmap(const Tensor<S>& t, int r, int c) {
    return ConstMatMap<S>(t.data.data(), r, c);
  }

  static void check_same(Ref a, Ref b, const char* op) {
    if (!a->value.same_shape(b->value))
      throw ShapeError(std::string(op) + ": operand shapes differ (" +
                       Tensor<S>::shape_string(a->value.shape) + " vs " +
                       Tensor<S>::shape_string(b->value.shape) + ")");
  }

  static void check_matdims(Ref a, Ref b, bool b_transposed, const char* op) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2)
      throw ShapeError(std::string(op) + ": expected 2-d operands");
    int inner_a = a->value.dim(1);
    int inner_b = b_transposed ? b->value.dim(1) : b->value.dim(0);
    if (inner_a != inner_b)
      throw ShapeError(std::string(op) + ": inner axes differ (" +
                       std::to_string(inner_a) + " vs " + std::to_string(inner_b) + ")");
  }

  std::deque<Node> nodes_;
};

}  // namespace srl::core
