#ifndef TARVIS_OPS_HPP
#define TARVIS_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "tarvis/autograd.hpp"
#include "tarvis/tensor.hpp"

namespace tarvis {

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class S>
void check_same_shape(const VarT<S>& a, const VarT<S>& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) +
                                " vs " + shape_str(b->value.shape()));
}

template <class S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
  check_same_shape(a, b, "add");
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array() + b->value.array();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a, b})) {
    n->requires_grad = true;
    n->parents = {a, b};
    n->backward_fn = [a, b](NodeT<S>& self) {
      if (a->requires_grad) a->ensure_grad().array() += self.grad.array();
      if (b->requires_grad) b->ensure_grad().array() += self.grad.array();
    };
  }
  return n;
}

template <class S>
VarT<S> sub(const VarT<S>& a, const VarT<S>& b) {
  check_same_shape(a, b, "sub");
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array() - b->value.array();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a, b})) {
    n->requires_grad = true;
    n->parents = {a, b};
    n->backward_fn = [a, b](NodeT<S>& self) {
      if (a->requires_grad) a->ensure_grad().array() += self.grad.array();
      if (b->requires_grad) b->ensure_grad().array() -= self.grad.array();
    };
  }
  return n;
}

template <class S>
VarT<S> mul(const VarT<S>& a, const VarT<S>& b) {
  check_same_shape(a, b, "mul");
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array() * b->value.array();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a, b})) {
    n->requires_grad = true;
    n->parents = {a, b};
    n->backward_fn = [a, b](NodeT<S>& self) {
      if (a->requires_grad) a->ensure_grad().array() += self.grad.array() * b->value.array();
      if (b->requires_grad) b->ensure_grad().array() += self.grad.array() * a->value.array();
    };
  }
  return n;
}

template <class S>
VarT<S> div(const VarT<S>& a, const VarT<S>& b) {
  check_same_shape(a, b, "div");
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array() / b->value.array();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a, b})) {
    n->requires_grad = true;
    n->parents = {a, b};
    TensorT<S> saved_out = n->value;
    n->backward_fn = [a, b, saved_out](NodeT<S>& self) {
      if (a->requires_grad) a->ensure_grad().array() += self.grad.array() / b->value.array();
      if (b->requires_grad)
        b->ensure_grad().array() -= self.grad.array() * saved_out.array() / b->value.array();
    };
  }
  return n;
}

template <class S>
VarT<S> mul_scalar(const VarT<S>& a, S c) {
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array() * c;
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a, c](NodeT<S>& self) { a->ensure_grad().array() += self.grad.array() * c; };
  }
  return n;
}

template <class S>
VarT<S> add_scalar(const VarT<S>& a, S c) {
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array() + c;
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a](NodeT<S>& self) { a->ensure_grad().array() += self.grad.array(); };
  }
  return n;
}

template <class S>
VarT<S> neg(const VarT<S>& a) {
  return mul_scalar(a, S(-1));
}

/// X (..., C) + v (C), broadcast over rows.
template <class S>
VarT<S> add_rowvec(const VarT<S>& x, const VarT<S>& v) {
  const Index C = x->value.cols();
  if (v->value.size() != C) throw std::invalid_argument("add_rowvec: vector length mismatch");
  TensorT<S> out(x->value.shape());
  out.mat() = x->value.mat().rowwise() + v->value.mat(1, C).row(0);
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({x, v})) {
    n->requires_grad = true;
    n->parents = {x, v};
    n->backward_fn = [x, v, C](NodeT<S>& self) {
      if (x->requires_grad) x->ensure_grad().array() += self.grad.array();
      if (v->requires_grad)
        v->ensure_grad().mat(1, C).row(0) += self.grad.mat().colwise().sum();
    };
  }
  return n;
}

template <class S>
VarT<S> relu(const VarT<S>& a) {
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array().max(S(0));
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a](NodeT<S>& self) {
      a->ensure_grad().array() +=
          self.grad.array() * (a->value.array() > S(0)).template cast<S>();
    };
  }
  return n;
}

template <class S>
VarT<S> sigmoid(const VarT<S>& a) {
  TensorT<S> out(a->value.shape());
  for (Index i = 0; i < a->value.size(); ++i) {
    const S x = a->value[i];
    out[i] = x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
  }
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    TensorT<S> s = n->value;
    n->backward_fn = [a, s](NodeT<S>& self) {
      a->ensure_grad().array() += self.grad.array() * s.array() * (S(1) - s.array());
    };
  }
  return n;
}

template <class S>
VarT<S> tanh_op(const VarT<S>& a) {
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array().tanh();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    TensorT<S> y = n->value;
    n->backward_fn = [a, y](NodeT<S>& self) {
      a->ensure_grad().array() += self.grad.array() * (S(1) - y.array().square());
    };
  }
  return n;
}

template <class S>
VarT<S> exp_op(const VarT<S>& a) {
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array().exp();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    TensorT<S> y = n->value;
    n->backward_fn = [a, y](NodeT<S>& self) { a->ensure_grad().array() += self.grad.array() * y.array(); };
  }
  return n;
}

template <class S>
VarT<S> log_op(const VarT<S>& a) {
  TensorT<S> out(a->value.shape());
  out.array() = a->value.array().log();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a](NodeT<S>& self) {
      a->ensure_grad().array() += self.grad.array() / a->value.array();
    };
  }
  return n;
}

template <class S>
VarT<S> square(const VarT<S>& a) {
  return mul(a, a);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// A (..., K) x B (K, N) -> (..., N).
template <class S>
VarT<S> matmul(const VarT<S>& a, const VarT<S>& b) {
  const Index K = a->value.cols();
  if (b->value.rank() != 2 || b->value.dim(0) != K)
    throw std::invalid_argument("matmul: inner dims mismatch");
  const Index M = a->value.rows();
  const Index N = b->value.dim(1);
  Shape out_shape = a->value.shape();
  out_shape.back() = N;
  TensorT<S> out(std::move(out_shape));
  out.mat(M, N).noalias() = a->value.mat(M, K) * b->value.mat(K, N);
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a, b})) {
    n->requires_grad = true;
    n->parents = {a, b};
    n->backward_fn = [a, b, M, K, N](NodeT<S>& self) {
      auto g = self.grad.mat(M, N);
      if (a->requires_grad) a->ensure_grad().mat(M, K).noalias() += g * b->value.mat(K, N).transpose();
      if (b->requires_grad) b->ensure_grad().mat(K, N).noalias() += a->value.mat(M, K).transpose() * g;
    };
  }
  return n;
}

/// A (..., K) x B (..., K)^T -> (Ma, Mb); both flattened to logical 2-D.
template <class S>
VarT<S> matmul_nt(const VarT<S>& a, const VarT<S>& b) {
  const Index K = a->value.cols();
  if (b->value.cols() != K) throw std::invalid_argument("matmul_nt: inner dims mismatch");
  const Index Ma = a->value.rows();
  const Index Mb = b->value.rows();
  TensorT<S> out({Ma, Mb});
  out.mat(Ma, Mb).noalias() = a->value.mat(Ma, K) * b->value.mat(Mb, K).transpose();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a, b})) {
    n->requires_grad = true;
    n->parents = {a, b};
    n->backward_fn = [a, b, Ma, Mb, K](NodeT<S>& self) {
      auto g = self.grad.mat(Ma, Mb);
      if (a->requires_grad) a->ensure_grad().mat(Ma, K).noalias() += g * b->value.mat(Mb, K);
      if (b->requires_grad) b->ensure_grad().mat(Mb, K).noalias() += g.transpose() * a->value.mat(Ma, K);
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class S>
VarT<S> sum(const VarT<S>& a) {
  auto n = make_var<S>(TensorT<S>::scalar(a->value.array().sum()));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a](NodeT<S>& self) { a->ensure_grad().array() += self.grad[0]; };
  }
  return n;
}

template <class S>
VarT<S> mean(const VarT<S>& a) {
  const S inv = S(1) / S(a->value.size());
  auto n = make_var<S>(TensorT<S>::scalar(a->value.array().sum() * inv));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a, inv](NodeT<S>& self) { a->ensure_grad().array() += self.grad[0] * inv; };
  }
  return n;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class S>
VarT<S> reshape(const VarT<S>& a, Shape shape) {
  auto n = make_var<S>(a->value.reshaped(shape));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a](NodeT<S>& self) { a->ensure_grad().array() += self.grad.array(); };
  }
  return n;
}

template <class S>
VarT<S> detach(const VarT<S>& a) {
  return make_const<S>(a->value);
}

/// Slice [start, start+count) along the first dimension.
template <class S>
VarT<S> slice_front(const VarT<S>& a, Index start, Index count) {
  const Index D0 = a->value.dim(0);
  if (start < 0 || count < 0 || start + count > D0) throw std::out_of_range("slice_front: range");
  const Index stride = a->value.size() / D0;
  Shape out_shape = a->value.shape();
  out_shape[0] = count;
  TensorT<S> out(std::move(out_shape));
  std::memcpy(out.data(), a->value.data() + start * stride, sizeof(S) * count * stride);
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a, start, stride, count](NodeT<S>& self) {
      auto& g = a->ensure_grad();
      Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(g.data() + start * stride, count * stride) +=
          self.grad.array();
    };
  }
  return n;
}

template <class S>
VarT<S> concat_front(const std::vector<VarT<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_front: empty");
  Shape out_shape = parts[0]->value.shape();
  Index total = 0;
  for (const auto& p : parts) {
    Shape s = p->value.shape();
    s[0] = 0;
    Shape ref = out_shape;
    ref[0] = 0;
    if (s != ref) throw std::invalid_argument("concat_front: trailing shape mismatch");
    total += p->value.dim(0);
  }
  out_shape[0] = total;
  TensorT<S> out(std::move(out_shape));
  Index off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off, p->value.data(), sizeof(S) * p->value.size());
    off += p->value.size();
  }
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>(parts)) {
    n->requires_grad = true;
    n->parents = parts;
    n->backward_fn = [parts](NodeT<S>& self) {
      Index off = 0;
      for (const auto& p : parts) {
        const Index sz = p->value.size();
        if (p->requires_grad) {
          Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> g(self.grad.data() + off, sz);
          p->ensure_grad().array() += g;
        }
        off += sz;
      }
    };
  }
  return n;
}

/// Slice [start, start+count) along the last dimension.
template <class S>
VarT<S> slice_last(const VarT<S>& a, Index start, Index count) {
  const Index C = a->value.cols();
  if (start < 0 || count < 0 || start + count > C) throw std::out_of_range("slice_last: range");
  const Index M = a->value.rows();
  Shape out_shape = a->value.shape();
  out_shape.back() = count;
  TensorT<S> out(std::move(out_shape));
  out.mat(M, count) = a->value.mat(M, C).middleCols(start, count);
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a, start, count, M](NodeT<S>& self) {
      const Index C = a->value.cols();
      a->ensure_grad().mat(M, C).middleCols(start, count) += self.grad.mat(M, count);
    };
  }
  return n;
}

template <class S>
VarT<S> concat_last(const std::vector<VarT<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: empty");
  const Index M = parts[0]->value.rows();
  Index C = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != M) throw std::invalid_argument("concat_last: row mismatch");
    C += p->value.cols();
  }
  Shape out_shape = parts[0]->value.shape();
  out_shape.back() = C;
  TensorT<S> out(std::move(out_shape));
  Index off = 0;
  for (const auto& p : parts) {
    const Index c = p->value.cols();
    out.mat(M, C).middleCols(off, c) = p->value.mat(M, c);
    off += c;
  }
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>(parts)) {
    n->requires_grad = true;
    n->parents = parts;
    n->backward_fn = [parts, M, C](NodeT<S>& self) {
      Index off = 0;
      for (const auto& p : parts) {
        const Index c = p->value.cols();
        if (p->requires_grad) p->ensure_grad().mat(M, c) += self.grad.mat(M, C).middleCols(off, c);
        off += c;
      }
    };
  }
  return n;
}

/// Select rows of the first dimension by index (duplicates allowed).
template <class S>
VarT<S> gather_front(const VarT<S>& a, std::vector<Index> idx) {
  const Index D0 = a->value.dim(0);
  const Index stride = a->value.size() / D0;
  for (Index i : idx)
    if (i < 0 || i >= D0) throw std::out_of_range("gather_front: index");
  Shape out_shape = a->value.shape();
  out_shape[0] = (Index)idx.size();
  TensorT<S> out(std::move(out_shape));
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + (Index)r * stride, a->value.data() + idx[r] * stride, sizeof(S) * stride);
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    n->backward_fn = [a, idx = std::move(idx), stride](NodeT<S>& self) {
      auto& g = a->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> dst(g.data() + idx[r] * stride, stride);
        Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> src(self.grad.data() + (Index)r * stride,
                                                                 stride);
        dst += src;
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Row-wise softmax over the last dimension.
template <class S>
VarT<S> softmax_lastdim(const VarT<S>& a) {
  const Index M = a->value.rows(), C = a->value.cols();
  TensorT<S> out(a->value.shape());
  auto X = a->value.mat(M, C);
  auto Y = out.mat(M, C);
  for (Index r = 0; r < M; ++r) {
    const S m = X.row(r).maxCoeff();
    S z = 0;
    for (Index c = 0; c < C; ++c) {
      // scalar exp flushes large negative arguments (mask biases) to exact 0
      const S e = std::exp(X(r, c) - m);
      Y(r, c) = e;
      z += e;
    }
    Y.row(r) /= z;
  }
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({a})) {
    n->requires_grad = true;
    n->parents = {a};
    TensorT<S> y = n->value;
    n->backward_fn = [a, y, M, C](NodeT<S>& self) {
      auto Y = y.mat(M, C);
      auto G = self.grad.mat(M, C);
      auto D = a->ensure_grad().mat(M, C);
      for (Index r = 0; r < M; ++r) {
        const S dot = (G.row(r).array() * Y.row(r).array()).sum();
        D.row(r).array() += Y.row(r).array() * (G.row(r).array() - dot);
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Layer norm over the last dimension.
template <class S>
VarT<S> layer_norm(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta, S eps = S(1e-5)) {
  const Index M = x->value.rows(), C = x->value.cols();
  if (gamma->value.size() != C || beta->value.size() != C)
    throw std::invalid_argument("layer_norm: affine size mismatch");
  TensorT<S> xhat(x->value.shape());
  TensorT<S> inv_std({M});
  auto X = x->value.mat(M, C);
  auto Xh = xhat.mat(M, C);
  for (Index r = 0; r < M; ++r) {
    const S mu = X.row(r).mean();
    const S var = (X.row(r).array() - mu).square().mean();
    const S inv = S(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    Xh.row(r) = (X.row(r).array() - mu) * inv;
  }
  TensorT<S> out(x->value.shape());
  out.mat(M, C) = (Xh.array().rowwise() * gamma->value.mat(1, C).row(0).array()).rowwise() +
                  beta->value.mat(1, C).row(0).array();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({x, gamma, beta})) {
    n->requires_grad = true;
    n->parents = {x, gamma, beta};
    n->backward_fn = [x, gamma, beta, xhat, inv_std, M, C](NodeT<S>& self) {
      auto G = self.grad.mat(M, C);
      auto Xh = xhat.mat(M, C);
      if (gamma->requires_grad)
        gamma->ensure_grad().mat(1, C).row(0) += (G.array() * Xh.array()).colwise().sum().matrix();
      if (beta->requires_grad) beta->ensure_grad().mat(1, C).row(0) += G.colwise().sum();
      if (x->requires_grad) {
        auto D = x->ensure_grad().mat(M, C);
        auto gvec = gamma->value.mat(1, C).row(0);
        for (Index r = 0; r < M; ++r) {
          Eigen::Array<S, Eigen::Dynamic, 1> gg = (G.row(r).array() * gvec.array()).transpose();
          const S m1 = gg.mean();
          const S m2 = (gg * Xh.row(r).array().transpose()).mean();
          D.row(r).array() +=
              (inv_std[r] * (gg - m1 - Xh.row(r).array().transpose() * m2)).transpose();
        }
      }
    };
  }
  return n;
}

/// Group norm on (T, H, W, C): statistics per frame per channel group.
template <class S>
VarT<S> group_norm(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta, Index groups,
                   S eps = S(1e-5)) {
  if (x->value.rank() != 4) throw std::invalid_argument("group_norm: expects (T,H,W,C)");
  const Index T = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), C = x->value.dim(3);
  if (C % groups != 0) throw std::invalid_argument("group_norm: C % groups != 0");
  const Index Cg = C / groups;
  const Index P = H * W;
  TensorT<S> xhat(x->value.shape());
  TensorT<S> inv_std({T, groups});
  for (Index t = 0; t < T; ++t) {
    auto X = x->value.mat(T * P, C).middleRows(t * P, P);
    auto Xh = xhat.mat(T * P, C).middleRows(t * P, P);
    for (Index g = 0; g < groups; ++g) {
      auto blk = X.middleCols(g * Cg, Cg);
      const S mu = blk.mean();
      const S var = (blk.array() - mu).square().mean();
      const S inv = S(1) / std::sqrt(var + eps);
      inv_std.at(t, g) = inv;
      Xh.middleCols(g * Cg, Cg) = (blk.array() - mu) * inv;
    }
  }
  TensorT<S> out(x->value.shape());
  out.mat(T * P, C) = (xhat.mat(T * P, C).array().rowwise() * gamma->value.mat(1, C).row(0).array())
                          .rowwise() +
                      beta->value.mat(1, C).row(0).array();
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({x, gamma, beta})) {
    n->requires_grad = true;
    n->parents = {x, gamma, beta};
    n->backward_fn = [x, gamma, beta, xhat, inv_std, T, P, C, Cg, groups](NodeT<S>& self) {
      auto G = self.grad.mat(T * P, C);
      auto Xh = xhat.mat(T * P, C);
      if (gamma->requires_grad)
        gamma->ensure_grad().mat(1, C).row(0) += (G.array() * Xh.array()).colwise().sum().matrix();
      if (beta->requires_grad) beta->ensure_grad().mat(1, C).row(0) += G.colwise().sum();
      if (x->requires_grad) {
        auto D = x->ensure_grad().mat(T * P, C);
        auto gvec = gamma->value.mat(1, C).row(0);
        const S invN = S(1) / S(P * Cg);
        for (Index t = 0; t < T; ++t) {
          for (Index g = 0; g < groups; ++g) {
            auto gblk = G.middleRows(t * P, P).middleCols(g * Cg, Cg);
            auto xblk = Xh.middleRows(t * P, P).middleCols(g * Cg, Cg);
            Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gg =
                gblk.array().rowwise() * gvec.middleCols(g * Cg, Cg).array();
            const S m1 = gg.sum() * invN;
            const S m2 = (gg.array() * xblk.array()).sum() * invN;
            D.middleRows(t * P, P).middleCols(g * Cg, Cg).array() +=
                inv_std.at(t, g) * (gg.array() - m1 - xblk.array() * m2);
          }
        }
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void im2col_frame(const S* x, Index H, Index W, Index C, Index kh, Index kw, Index stride, Index pad,
                  Index Ho, Index Wo, S* M) {
  const Index cols = kh * kw * C;
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      S* row = M + (oy * Wo + ox) * cols;
      for (Index ky = 0; ky < kh; ++ky) {
        const Index iy = oy * stride - pad + ky;
        for (Index kx = 0; kx < kw; ++kx) {
          const Index ix = ox * stride - pad + kx;
          S* dst = row + (ky * kw + kx) * C;
          if (iy >= 0 && iy < H && ix >= 0 && ix < W) {
            std::memcpy(dst, x + (iy * W + ix) * C, sizeof(S) * C);
          } else {
            std::memset(dst, 0, sizeof(S) * C);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_frame(const S* M, Index H, Index W, Index C, Index kh, Index kw, Index stride, Index pad,
                  Index Ho, Index Wo, S* dx) {
  const Index cols = kh * kw * C;
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      const S* row = M + (oy * Wo + ox) * cols;
      for (Index ky = 0; ky < kh; ++ky) {
        const Index iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (Index kx = 0; kx < kw; ++kx) {
          const Index ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const S* src = row + (ky * kw + kx) * C;
          S* dst = dx + (iy * W + ix) * C;
          for (Index c = 0; c < C; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution applied per frame. x: (T, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout).
template <class S>
VarT<S> conv2d(const VarT<S>& x, const VarT<S>& w, const VarT<S>& b, Index stride, Index pad) {
  if (x->value.rank() != 4 || w->value.rank() != 4) throw std::invalid_argument("conv2d: rank");
  const Index T = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), Ci = x->value.dim(3);
  const Index kh = w->value.dim(0), kw = w->value.dim(1), Co = w->value.dim(3);
  if (w->value.dim(2) != Ci) throw std::invalid_argument("conv2d: channel mismatch");
  const Index Ho = (H + 2 * pad - kh) / stride + 1;
  const Index Wo = (W + 2 * pad - kw) / stride + 1;
  const Index cols = kh * kw * Ci;
  TensorT<S> out({T, Ho, Wo, Co});
  auto cache = std::make_shared<std::vector<TensorT<S>>>();  // im2col per frame
  cache->reserve(T);
  for (Index t = 0; t < T; ++t) {
    TensorT<S> M({Ho * Wo, cols});
    detail::im2col_frame(x->value.data() + t * H * W * Ci, H, W, Ci, kh, kw, stride, pad, Ho, Wo,
                         M.data());
    out.mat(T * Ho * Wo, Co).middleRows(t * Ho * Wo, Ho * Wo).noalias() =
        M.mat() * w->value.mat(cols, Co);
    cache->push_back(std::move(M));
  }
  out.mat(T * Ho * Wo, Co).rowwise() += b->value.mat(1, Co).row(0);
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({x, w, b})) {
    n->requires_grad = true;
    n->parents = {x, w, b};
    n->backward_fn = [x, w, b, cache, T, H, W, Ci, kh, kw, stride, pad, Ho, Wo, Co,
                      cols](NodeT<S>& self) {
      auto G = self.grad.mat(T * Ho * Wo, Co);
      if (b->requires_grad) b->ensure_grad().mat(1, Co).row(0) += G.colwise().sum();
      for (Index t = 0; t < T; ++t) {
        auto Gt = G.middleRows(t * Ho * Wo, Ho * Wo);
        if (w->requires_grad)
          w->ensure_grad().mat(cols, Co).noalias() += (*cache)[t].mat().transpose() * Gt;
        if (x->requires_grad) {
          TensorT<S> dM({Ho * Wo, cols});
          dM.mat().noalias() = Gt * w->value.mat(cols, Co).transpose();
          detail::col2im_frame(dM.data(), H, W, Ci, kh, kw, stride, pad, Ho, Wo,
                               x->ensure_grad().data() + t * H * W * Ci);
        }
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

/// 2x bilinear upsampling per frame, align_corners=false, edge clamped.
template <class S>
VarT<S> bilinear_upsample2x(const VarT<S>& x) {
  if (x->value.rank() != 4) throw std::invalid_argument("bilinear_upsample2x: expects (T,H,W,C)");
  const Index T = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), C = x->value.dim(3);
  const Index Ho = 2 * H, Wo = 2 * W;
  TensorT<S> out({T, Ho, Wo, C});
  auto coeff = [](Index o, Index n, Index& i0, Index& i1, S& w1) {
    S u = (S(o) + S(0.5)) / S(2) - S(0.5);
    u = std::min(std::max(u, S(0)), S(n - 1));
    i0 = (Index)std::floor(u);
    i1 = std::min(i0 + 1, n - 1);
    w1 = u - S(i0);
  };
  for (Index t = 0; t < T; ++t) {
    const S* xt = x->value.data() + t * H * W * C;
    S* ot = out.data() + t * Ho * Wo * C;
    for (Index oy = 0; oy < Ho; ++oy) {
      Index y0, y1;
      S wy;
      coeff(oy, H, y0, y1, wy);
      for (Index ox = 0; ox < Wo; ++ox) {
        Index x0, x1;
        S wx;
        coeff(ox, W, x0, x1, wx);
        const S* p00 = xt + (y0 * W + x0) * C;
        const S* p01 = xt + (y0 * W + x1) * C;
        const S* p10 = xt + (y1 * W + x0) * C;
        const S* p11 = xt + (y1 * W + x1) * C;
        S* o = ot + (oy * Wo + ox) * C;
        for (Index c = 0; c < C; ++c)
          o[c] = (1 - wy) * ((1 - wx) * p00[c] + wx * p01[c]) + wy * ((1 - wx) * p10[c] + wx * p11[c]);
      }
    }
  }
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({x})) {
    n->requires_grad = true;
    n->parents = {x};
    n->backward_fn = [x, coeff, T, H, W, C, Ho, Wo](NodeT<S>& self) {
      S* gx = x->ensure_grad().data();
      const S* go = self.grad.data();
      for (Index t = 0; t < T; ++t) {
        S* gxt = gx + t * H * W * C;
        const S* got = go + t * Ho * Wo * C;
        for (Index oy = 0; oy < Ho; ++oy) {
          Index y0, y1;
          S wy;
          coeff(oy, H, y0, y1, wy);
          for (Index ox = 0; ox < Wo; ++ox) {
            Index x0, x1;
            S wx;
            coeff(ox, W, x0, x1, wx);
            const S* g = got + (oy * Wo + ox) * C;
            for (Index c = 0; c < C; ++c) {
              gxt[(y0 * W + x0) * C + c] += (1 - wy) * (1 - wx) * g[c];
              gxt[(y0 * W + x1) * C + c] += (1 - wy) * wx * g[c];
              gxt[(y1 * W + x0) * C + c] += wy * (1 - wx) * g[c];
              gxt[(y1 * W + x1) * C + c] += wy * wx * g[c];
            }
          }
        }
      }
    };
  }
  return n;
}

/// Bilinear sampling of x (T, H, W, C) at P points (t, y, x) in pixel coords.
/// clamp=true replicates borders (loss sampling); clamp=false zero-pads.
template <class S>
VarT<S> bilinear_sample_points(const VarT<S>& x, const TensorT<S>& pts, bool clamp) {
  if (x->value.rank() != 4 || pts.rank() != 2 || pts.dim(1) != 3)
    throw std::invalid_argument("bilinear_sample_points: shapes");
  const Index T = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), C = x->value.dim(3);
  const Index P = pts.dim(0);
  TensorT<S> out({P, C});
  for (Index p = 0; p < P; ++p) {
    const Index t = (Index)pts.at(p, 0);
    if (t < 0 || t >= T) throw std::out_of_range("bilinear_sample_points: frame index");
    S py = pts.at(p, 1), px = pts.at(p, 2);
    if (clamp) {
      py = std::min(std::max(py, S(0)), S(H - 1));
      px = std::min(std::max(px, S(0)), S(W - 1));
    }
    const Index y0 = (Index)std::floor(py), x0 = (Index)std::floor(px);
    const S wy = py - S(y0), wx = px - S(x0);
    const S* xt = x->value.data() + t * H * W * C;
    S* o = out.data() + p * C;
    std::memset(o, 0, sizeof(S) * C);
    for (int dy = 0; dy < 2; ++dy) {
      const Index yy = y0 + dy;
      if (yy < 0 || yy >= H) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const Index xx = x0 + dx;
        if (xx < 0 || xx >= W) continue;
        const S wgt = (dy ? wy : 1 - wy) * (dx ? wx : 1 - wx);
        const S* src = xt + (yy * W + xx) * C;
        for (Index c = 0; c < C; ++c) o[c] += wgt * src[c];
      }
    }
  }
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({x})) {
    n->requires_grad = true;
    n->parents = {x};
    n->backward_fn = [x, pts, clamp, T, H, W, C, P](NodeT<S>& self) {
      S* gx = x->ensure_grad().data();
      for (Index p = 0; p < P; ++p) {
        const Index t = (Index)pts.at(p, 0);
        S py = pts.at(p, 1), px = pts.at(p, 2);
        if (clamp) {
          py = std::min(std::max(py, S(0)), S(H - 1));
          px = std::min(std::max(px, S(0)), S(W - 1));
        }
        const Index y0 = (Index)std::floor(py), x0 = (Index)std::floor(px);
        const S wy = py - S(y0), wx = px - S(x0);
        const S* g = self.grad.data() + p * C;
        for (int dy = 0; dy < 2; ++dy) {
          const Index yy = y0 + dy;
          if (yy < 0 || yy >= H) continue;
          for (int dx = 0; dx < 2; ++dx) {
            const Index xx = x0 + dx;
            if (xx < 0 || xx >= W) continue;
            const S wgt = (dy ? wy : 1 - wy) * (dx ? wx : 1 - wx);
            S* dst = gx + (t * H * W + yy * W + xx) * C;
            for (Index c = 0; c < C; ++c) dst[c] += wgt * g[c];
          }
        }
      }
    };
  }
  return n;
}

/// Multi-scale deformable sampling. values[l]: (T, Hl, Wl, C); locs: (NQ, h, L, K, 2)
/// normalized (x, y) in [0,1]; wts: (NQ, h, L, K) softmax-normalized; qframe[q] gives
/// the frame each query samples from (no cross-frame mixing). Head h reads/writes the
/// channel block [h*C/h, (h+1)*C/h). Out-of-range samples are zero (zero padding).
template <class S>
VarT<S> ms_deform_sample(const std::vector<VarT<S>>& values, const VarT<S>& locs, const VarT<S>& wts,
                         std::vector<Index> qframe) {
  const Index L = (Index)values.size();
  if (locs->value.rank() != 5 || locs->value.dim(4) != 2 || wts->value.rank() != 4)
    throw std::invalid_argument("ms_deform_sample: shapes");
  const Index NQ = locs->value.dim(0), heads = locs->value.dim(1), K = locs->value.dim(3);
  if (locs->value.dim(2) != L || wts->value.dim(1) != heads || wts->value.dim(2) != L ||
      wts->value.dim(3) != K || (Index)qframe.size() != NQ)
    throw std::invalid_argument("ms_deform_sample: meta mismatch");
  const Index C = values[0]->value.dim(3);
  if (C % heads != 0) throw std::invalid_argument("ms_deform_sample: C % heads");
  const Index Ch = C / heads;

  struct LevelMeta {
    Index H, W;
  };
  std::vector<LevelMeta> lv(L);
  for (Index l = 0; l < L; ++l) lv[l] = {values[l]->value.dim(1), values[l]->value.dim(2)};

  TensorT<S> out({NQ, C});
  const S* lp = locs->value.data();
  const S* wp = wts->value.data();
  for (Index q = 0; q < NQ; ++q) {
    const Index t = qframe[q];
    for (Index h = 0; h < heads; ++h) {
      S* o = out.data() + q * C + h * Ch;
      for (Index l = 0; l < L; ++l) {
        const Index H = lv[l].H, W = lv[l].W;
        const S* vt = values[l]->value.data() + t * H * W * C;
        for (Index k = 0; k < K; ++k) {
          const Index base = (((q * heads + h) * L + l) * K + k);
          const S w = wp[base];
          const S px = lp[base * 2 + 0] * S(W) - S(0.5);
          const S py = lp[base * 2 + 1] * S(H) - S(0.5);
          const Index x0 = (Index)std::floor(px), y0 = (Index)std::floor(py);
          const S fx = px - S(x0), fy = py - S(y0);
          for (int dy = 0; dy < 2; ++dy) {
            const Index yy = y0 + dy;
            if (yy < 0 || yy >= H) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const Index xx = x0 + dx;
              if (xx < 0 || xx >= W) continue;
              const S ww = w * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
              const S* src = vt + (yy * W + xx) * C + h * Ch;
              for (Index c = 0; c < Ch; ++c) o[c] += ww * src[c];
            }
          }
        }
      }
    }
  }
  auto n = make_var<S>(std::move(out));
  std::vector<VarT<S>> inputs = values;
  inputs.push_back(locs);
  inputs.push_back(wts);
  if (tape_active<S>(inputs)) {
    n->requires_grad = true;
    n->parents = inputs;
    n->backward_fn = [values, locs, wts, qframe = std::move(qframe), lv, L, NQ, heads, K, C,
                      Ch](NodeT<S>& self) {
      const S* lp = locs->value.data();
      const S* wp = wts->value.data();
      S* gl = locs->requires_grad ? locs->ensure_grad().data() : nullptr;
      S* gw = wts->requires_grad ? wts->ensure_grad().data() : nullptr;
      std::vector<S*> gv(L, nullptr);
      for (Index l = 0; l < L; ++l)
        if (values[l]->requires_grad) gv[l] = values[l]->ensure_grad().data();
      for (Index q = 0; q < NQ; ++q) {
        const Index t = qframe[q];
        for (Index h = 0; h < heads; ++h) {
          const S* g = self.grad.data() + q * C + h * Ch;
          for (Index l = 0; l < L; ++l) {
            const Index H = lv[l].H, W = lv[l].W;
            const S* vt = values[l]->value.data() + t * H * W * C;
            for (Index k = 0; k < K; ++k) {
              const Index base = (((q * heads + h) * L + l) * K + k);
              const S w = wp[base];
              const S px = lp[base * 2 + 0] * S(W) - S(0.5);
              const S py = lp[base * 2 + 1] * S(H) - S(0.5);
              const Index x0 = (Index)std::floor(px), y0 = (Index)std::floor(py);
              const S fx = px - S(x0), fy = py - S(y0);
              S dot_gv = 0;       // <g, sampled value>
              S ddx = 0, ddy = 0; // <g, d(sampled)/dpx>, d/dpy
              for (int dy = 0; dy < 2; ++dy) {
                const Index yy = y0 + dy;
                if (yy < 0 || yy >= H) continue;
                for (int dx = 0; dx < 2; ++dx) {
                  const Index xx = x0 + dx;
                  if (xx < 0 || xx >= W) continue;
                  const S cy = dy ? fy : 1 - fy;
                  const S cx = dx ? fx : 1 - fx;
                  const S* src = vt + (yy * W + xx) * C + h * Ch;
                  S dot = 0;
                  for (Index c = 0; c < Ch; ++c) dot += g[c] * src[c];
                  dot_gv += cy * cx * dot;
                  ddx += cy * (dx ? dot : -dot);
                  ddy += cx * (dy ? dot : -dot);
                  if (gv[l]) {
                    S* dst = gv[l] + (t * H * W + yy * W + xx) * C + h * Ch;
                    const S ww = w * cy * cx;
                    for (Index c = 0; c < Ch; ++c) dst[c] += ww * g[c];
                  }
                }
              }
              if (gw) gw[base] += dot_gv;
              if (gl) {
                gl[base * 2 + 0] += w * ddx * S(W);
                gl[base * 2 + 1] += w * ddy * S(H);
              }
            }
          }
        }
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// grouped max
// ---------------------------------------------------------------------------

/// x (G*q, inner...) -> (G, inner...), elementwise max over each group of q
/// consecutive front rows. Ties resolve to the lowest row.
template <class S>
VarT<S> group_max_front(const VarT<S>& x, Index q) {
  const Index R = x->value.dim(0);
  if (q <= 0 || R % q != 0) throw std::invalid_argument("group_max_front: bad group size");
  const Index G = R / q;
  const Index inner = x->value.size() / R;
  Shape out_shape = x->value.shape();
  out_shape[0] = G;
  TensorT<S> out(std::move(out_shape));
  std::vector<Index> arg((std::size_t)(G * inner));
  for (Index g = 0; g < G; ++g) {
    for (Index i = 0; i < inner; ++i) {
      S best = x->value[(g * q) * inner + i];
      Index bi = 0;
      for (Index j = 1; j < q; ++j) {
        const S v = x->value[(g * q + j) * inner + i];
        if (v > best) {
          best = v;
          bi = j;
        }
      }
      out[g * inner + i] = best;
      arg[(std::size_t)(g * inner + i)] = bi;
    }
  }
  auto n = make_var<S>(std::move(out));
  if (tape_active<S>({x})) {
    n->requires_grad = true;
    n->parents = {x};
    n->backward_fn = [x, arg = std::move(arg), G, q, inner](NodeT<S>& self) {
      auto& gx = x->ensure_grad();
      for (Index g = 0; g < G; ++g)
        for (Index i = 0; i < inner; ++i)
          gx[(g * q + arg[(std::size_t)(g * inner + i)]) * inner + i] += self.grad[g * inner + i];
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// loss kernels
// ---------------------------------------------------------------------------

/// Mean cross-entropy of row-wise softmax vs integer labels. logits: (P, C).
template <class S>
VarT<S> softmax_cross_entropy(const VarT<S>& logits, const std::vector<Index>& labels) {
  const Index P = logits->value.rows(), C = logits->value.cols();
  if ((Index)labels.size() != P) throw std::invalid_argument("softmax_cross_entropy: label count");
  for (Index l : labels)
    if (l < 0 || l >= C) throw std::out_of_range("softmax_cross_entropy: label out of range");
  TensorT<S> probs({P, C});
  S loss = 0;
  auto X = logits->value.mat(P, C);
  auto Pm = probs.mat(P, C);
  for (Index r = 0; r < P; ++r) {
    const S m = X.row(r).maxCoeff();
    Pm.row(r) = (X.row(r).array() - m).exp();
    const S z = Pm.row(r).sum();
    Pm.row(r) /= z;
    loss += std::log(z) + m - X(r, labels[(std::size_t)r]);
  }
  auto n = make_var<S>(TensorT<S>::scalar(loss / S(P)));
  if (tape_active<S>({logits})) {
    n->requires_grad = true;
    n->parents = {logits};
    n->backward_fn = [logits, probs, labels, P, C](NodeT<S>& self) {
      const S g = self.grad[0] / S(P);
      auto D = logits->ensure_grad().mat(P, C);
      D += probs.mat(P, C) * g;
      for (Index r = 0; r < P; ++r) D(r, labels[(std::size_t)r]) -= g;
    };
  }
  return n;
}

/// Mean binary cross-entropy with logits. pred and target share a shape.
template <class S>
VarT<S> bce_with_logits(const VarT<S>& pred, const TensorT<S>& target) {
  if (!pred->value.same_shape(target)) throw std::invalid_argument("bce_with_logits: shape mismatch");
  const Index P = pred->value.size();
  S loss = 0;
  for (Index i = 0; i < P; ++i) {
    const S x = pred->value[i], t = target[i];
    loss += std::max(x, S(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  auto n = make_var<S>(TensorT<S>::scalar(loss / S(P)));
  if (tape_active<S>({pred})) {
    n->requires_grad = true;
    n->parents = {pred};
    n->backward_fn = [pred, target, P](NodeT<S>& self) {
      const S g = self.grad[0] / S(P);
      auto& D = pred->ensure_grad();
      for (Index i = 0; i < P; ++i) {
        const S x = pred->value[i];
        const S s = x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
        D[i] += g * (s - target[i]);
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// plain tensor helpers (no tape)
// ---------------------------------------------------------------------------

/// Bilinear resize of a single (H, W) plane, align_corners=false, edge clamped.
template <class S>
TensorT<S> bilinear_resize_plane(const TensorT<S>& x, Index Ho, Index Wo) {
  const Index H = x.dim(0), W = x.dim(1);
  TensorT<S> out({Ho, Wo});
  for (Index oy = 0; oy < Ho; ++oy) {
    S v = (S(oy) + S(0.5)) * S(H) / S(Ho) - S(0.5);
    v = std::min(std::max(v, S(0)), S(H - 1));
    const Index y0 = (Index)std::floor(v);
    const Index y1 = std::min(y0 + 1, H - 1);
    const S wy = v - S(y0);
    for (Index ox = 0; ox < Wo; ++ox) {
      S u = (S(ox) + S(0.5)) * S(W) / S(Wo) - S(0.5);
      u = std::min(std::max(u, S(0)), S(W - 1));
      const Index x0 = (Index)std::floor(u);
      const Index x1 = std::min(x0 + 1, W - 1);
      const S wx = u - S(x0);
      out.at(oy, ox) = (1 - wy) * ((1 - wx) * x.at(y0, x0) + wx * x.at(y0, x1)) +
                       wy * ((1 - wx) * x.at(y1, x0) + wx * x.at(y1, x1));
    }
  }
  return out;
}

}  // namespace tarvis

#endif
