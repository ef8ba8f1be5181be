#ifndef TARVIS_OPTIMIZER_HPP
#define TARVIS_OPTIMIZER_HPP

#include <cmath>
#include <vector>

#include "tarvis/nn.hpp"

namespace tarvis {

/// Adaptive moment estimation with decoupled weight decay.
class AdamW {
 public:
  struct Hyper {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double grad_clip = 10.0;  // global-norm clip; 0 disables
  };

  void init(const ParamStore& params, const Hyper& hp) {
    params_ = &params;
    hp_ = hp;
    t_ = 0;
    m_.clear();
    v_.clear();
    for (const auto& p : params.params()) {
      m_.push_back(Tensor::zeros(p->value.shape()));
      v_.push_back(Tensor::zeros(p->value.shape()));
    }
  }

  /// Applies one update from accumulated gradients. lr_scale multiplies the
  /// base learning rate (step-decay schedule lives in the caller).
  void step(double lr_scale = 1.0) {
    ++t_;
    const double lr = hp_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(hp_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(hp_.beta2, double(t_));

    double clip_scale = 1.0;
    if (hp_.grad_clip > 0) {
      double sq = 0;
      for (const auto& p : params_->params())
        if (p->has_grad()) sq += (p->grad.array() * p->grad.array()).sum();
      const double norm = std::sqrt(sq);
      if (norm > hp_.grad_clip) clip_scale = hp_.grad_clip / norm;
    }

    const auto& ps = params_->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps[i];
      if (!p->has_grad()) continue;
      auto g = (p->grad.array() * clip_scale).eval();
      m_[i].array() = hp_.beta1 * m_[i].array() + (1 - hp_.beta1) * g;
      v_[i].array() = hp_.beta2 * v_[i].array() + (1 - hp_.beta2) * g.square();
      p->value.array() -= lr * ((m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + hp_.eps) +
                                hp_.weight_decay * p->value.array());
    }
  }

  Index steps() const { return t_; }
  void set_steps(Index t) { t_ = t; }
  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }
  const Hyper& hyper() const { return hp_; }

 private:
  const ParamStore* params_ = nullptr;
  Hyper hp_;
  Index t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace tarvis

#endif
