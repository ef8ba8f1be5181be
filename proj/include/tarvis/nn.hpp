#ifndef TARVIS_NN_HPP
#define TARVIS_NN_HPP

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tarvis/ops.hpp"
#include "tarvis/rng.hpp"

namespace tarvis {

/// Ordered registry of named trainable parameters. Modules register their
/// tensors here; the optimizer and checkpoints iterate it by insertion order.
class ParamStore {
 public:
  Var create(const std::string& name, Shape shape) {
    if (by_name_.count(name)) throw std::invalid_argument("param exists: " + name);
    auto v = make_var<double>(Tensor(std::move(shape)), true, name);
    by_name_[name] = v;
    ordered_.push_back(v);
    return v;
  }

  Var get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("no such param: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  const std::vector<Var>& params() const { return ordered_; }
  std::size_t size() const { return ordered_.size(); }

  Index total_scalars() const {
    Index n = 0;
    for (const auto& p : ordered_) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : ordered_) p->zero_grad();
  }

 private:
  std::map<std::string, Var> by_name_;
  std::vector<Var> ordered_;
};

// ---------------------------------------------------------------------------
// initializers
// ---------------------------------------------------------------------------

inline void init_uniform(const Var& v, Rng& rng, double a) {
  for (Index i = 0; i < v->value.size(); ++i) v->value[i] = rng.uniform(-a, a);
}
inline void init_normal(const Var& v, Rng& rng, double std) {
  for (Index i = 0; i < v->value.size(); ++i) v->value[i] = rng.normal() * std;
}
inline void init_constant(const Var& v, double c) { v->value.array().setConstant(c); }

// ---------------------------------------------------------------------------
// modules
// ---------------------------------------------------------------------------

struct Linear {
  Var w, b;  // w: (in, out)

  void init(ParamStore& ps, const std::string& name, Index in, Index out, Rng& rng) {
    w = ps.create(name + ".w", {in, out});
    b = ps.create(name + ".b", {out});
    init_uniform(w, rng, std::sqrt(6.0 / double(in + out)));
  }

  Var operator()(const Var& x) const { return add_rowvec(matmul(x, w), b); }
};

struct LayerNorm {
  Var gamma, beta;

  void init(ParamStore& ps, const std::string& name, Index dim) {
    gamma = ps.create(name + ".gamma", {dim});
    beta = ps.create(name + ".beta", {dim});
    init_constant(gamma, 1.0);
  }

  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

struct Mlp {
  Linear fc1, fc2;

  void init(ParamStore& ps, const std::string& name, Index dim, Index hidden, Rng& rng) {
    fc1.init(ps, name + ".fc1", dim, hidden, rng);
    fc2.init(ps, name + ".fc2", hidden, dim, rng);
  }

  Var operator()(const Var& x) const { return fc2(relu(fc1(x))); }
};

/// Stack of linear+relu layers ending in a plain linear; used for mask
/// embeddings and small heads.
struct MlpStack {
  std::vector<Linear> layers;

  void init(ParamStore& ps, const std::string& name, Index in, Index hidden, Index out,
            Index num_layers, Rng& rng) {
    layers.resize((std::size_t)num_layers);
    for (Index i = 0; i < num_layers; ++i) {
      const Index a = i == 0 ? in : hidden;
      const Index b = i == num_layers - 1 ? out : hidden;
      layers[(std::size_t)i].init(ps, name + ".l" + std::to_string(i), a, b, rng);
    }
  }

  Var operator()(Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }
};

/// Standard multi-head attention over flat token sets. query: (Nq, D),
/// key/value: (Nk, D). attn_bias, if given, is an additive (Nq, Nk) constant
/// shared across heads (use large negatives to mask).
struct MultiheadAttention {
  Index heads = 0, d_model = 0;
  Linear wq, wk, wv, wo;

  void init(ParamStore& ps, const std::string& name, Index dim, Index num_heads, Rng& rng) {
    if (dim % num_heads != 0) throw std::invalid_argument("attention: dim % heads != 0");
    heads = num_heads;
    d_model = dim;
    wq.init(ps, name + ".q", dim, dim, rng);
    wk.init(ps, name + ".k", dim, dim, rng);
    wv.init(ps, name + ".v", dim, dim, rng);
    wo.init(ps, name + ".o", dim, dim, rng);
  }

  Var operator()(const Var& query, const Var& key, const Var& value,
                 const Tensor* attn_bias = nullptr) const {
    const Index dh = d_model / heads;
    const double scale = 1.0 / std::sqrt(double(dh));
    Var q = wq(query), k = wk(key), v = wv(value);
    Var bias = attn_bias ? make_const<double>(*attn_bias) : nullptr;
    std::vector<Var> outs;
    outs.reserve((std::size_t)heads);
    for (Index h = 0; h < heads; ++h) {
      Var qh = slice_last(q, h * dh, dh);
      Var kh = slice_last(k, h * dh, dh);
      Var vh = slice_last(v, h * dh, dh);
      Var scores = mul_scalar(matmul_nt(qh, kh), scale);
      if (bias) scores = add(scores, bias);
      Var attn = softmax_lastdim(scores);
      outs.push_back(matmul(attn, vh));
    }
    return wo(concat_last(outs));
  }
};

}  // namespace tarvis

#endif
