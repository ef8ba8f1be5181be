#include "tarvis/backbone.hpp"

namespace tarvis {

void Backbone::Conv::init(ParamStore& ps, const std::string& name, Index kh, Index kw, Index ci,
                          Index co, Index stride_, Index pad_, Rng& rng) {
  w = ps.create(name + ".w", {kh, kw, ci, co});
  b = ps.create(name + ".b", {co});
  init_normal(w, rng, std::sqrt(2.0 / double(kh * kw * ci)));
  stride = stride_;
  pad = pad_;
}

void Backbone::Norm::init(ParamStore& ps, const std::string& name, Index c, Index groups_) {
  gamma = ps.create(name + ".gamma", {c});
  beta = ps.create(name + ".beta", {c});
  init_constant(gamma, 1.0);
  groups = c % groups_ == 0 ? groups_ : 1;
}

Var Backbone::Block::operator()(const Var& x) const {
  Var y = relu(n1(conv1(x)));
  y = n2(conv2(y));
  Var skip = has_shortcut ? ns(shortcut(x)) : x;
  return relu(add(y, skip));
}

void Backbone::init(ParamStore& ps, const std::string& name, const BackboneConfig& cfg, Rng& rng) {
  cfg_ = cfg;
  for (Index c : cfg.stage_channels)
    if (c <= 0) throw std::invalid_argument("backbone: stage widths must be positive");
  const Index c0 = cfg.stage_channels[0];
  stem1_.init(ps, name + ".stem1", 5, 5, 3, c0, 2, 2, rng);
  stem_n1_.init(ps, name + ".stem1.n", c0, cfg.gn_groups);
  stem2_.init(ps, name + ".stem2", 3, 3, c0, c0, 2, 1, rng);
  stem_n2_.init(ps, name + ".stem2.n", c0, cfg.gn_groups);
  stages_.resize(4);
  for (Index s = 0; s < 4; ++s) {
    const Index cin_stage = s == 0 ? c0 : cfg.stage_channels[(std::size_t)s - 1];
    const Index cout = cfg.stage_channels[(std::size_t)s];
    stages_[(std::size_t)s].resize((std::size_t)cfg.blocks_per_stage);
    for (Index b = 0; b < cfg.blocks_per_stage; ++b) {
      Block& blk = stages_[(std::size_t)s][(std::size_t)b];
      const bool first = b == 0;
      const Index ci = first ? cin_stage : cout;
      const Index stride = (first && s > 0) ? 2 : 1;
      const std::string bn = name + ".s" + std::to_string(s) + ".b" + std::to_string(b);
      blk.conv1.init(ps, bn + ".conv1", 3, 3, ci, cout, stride, 1, rng);
      blk.n1.init(ps, bn + ".n1", cout, cfg.gn_groups);
      blk.conv2.init(ps, bn + ".conv2", 3, 3, cout, cout, 1, 1, rng);
      blk.n2.init(ps, bn + ".n2", cout, cfg.gn_groups);
      blk.has_shortcut = ci != cout || stride != 1;
      if (blk.has_shortcut) {
        blk.shortcut.init(ps, bn + ".sc", 1, 1, ci, cout, stride, 0, rng);
        blk.ns.init(ps, bn + ".nsc", cout, cfg.gn_groups);
      }
    }
  }
}

RawPyramid Backbone::forward(const Var& clip) const {
  if (clip->value.rank() != 4 || clip->value.dim(3) != 3)
    throw std::invalid_argument("backbone: clip must be (T,H,W,3)");
  if (clip->value.dim(1) % 32 != 0 || clip->value.dim(2) % 32 != 0)
    throw std::invalid_argument("backbone: H and W must be divisible by 32");
  Var x = relu(stem_n1_(stem1_(clip)));
  x = relu(stem_n2_(stem2_(x)));  // stride 4
  RawPyramid pyr;
  for (Index s = 0; s < 4; ++s) {
    for (const auto& blk : stages_[(std::size_t)s]) x = blk(x);
    (s == 0 ? pyr.s4 : s == 1 ? pyr.s8 : s == 2 ? pyr.s16 : pyr.s32) = x;
  }
  return pyr;
}

}  // namespace tarvis
