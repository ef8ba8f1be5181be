#ifndef TARVIS_BACKBONE_HPP
#define TARVIS_BACKBONE_HPP

#include <array>
#include <vector>

#include "tarvis/nn.hpp"

namespace tarvis {

struct BackboneConfig {
  std::array<Index, 4> stage_channels = {32, 64, 128, 256};  // strides 4, 8, 16, 32
  Index blocks_per_stage = 1;
  Index gn_groups = 8;
};

/// Per-frame feature maps straight out of the backbone, before projection.
struct RawPyramid {
  Var s4, s8, s16, s32;  // (T, H/s, W/s, c_s)
};

/// Residual 2-D CNN applied frame-by-frame; no temporal mixing.
class Backbone {
 public:
  void init(ParamStore& ps, const std::string& name, const BackboneConfig& cfg, Rng& rng);
  RawPyramid forward(const Var& clip) const;  // clip: (T, H, W, 3), H and W divisible by 32

  const BackboneConfig& config() const { return cfg_; }

 private:
  struct Conv {
    Var w, b;
    Index stride = 1, pad = 1;
    void init(ParamStore& ps, const std::string& name, Index kh, Index kw, Index ci, Index co,
              Index stride, Index pad, Rng& rng);
    Var operator()(const Var& x) const { return conv2d(x, w, b, stride, pad); }
  };
  struct Norm {
    Var gamma, beta;
    Index groups = 8;
    void init(ParamStore& ps, const std::string& name, Index c, Index groups);
    Var operator()(const Var& x) const { return group_norm(x, gamma, beta, groups); }
  };
  struct Block {
    Conv conv1, conv2, shortcut;
    Norm n1, n2, ns;
    bool has_shortcut = false;
    Var operator()(const Var& x) const;
  };

  BackboneConfig cfg_;
  Conv stem1_, stem2_;
  Norm stem_n1_, stem_n2_;
  std::vector<std::vector<Block>> stages_;
};

}  // namespace tarvis

#endif
