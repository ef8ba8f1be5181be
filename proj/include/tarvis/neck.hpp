#ifndef TARVIS_NECK_HPP
#define TARVIS_NECK_HPP

#include <vector>

#include "tarvis/backbone.hpp"
#include "tarvis/nn.hpp"

namespace tarvis {

struct NeckConfig {
  Index d_model = 64;
  Index num_layers = 6;
  Index num_heads = 8;
  Index deform_points = 4;   // K samples per head per level
  Index temporal_grid = 2;   // cell size in F32 pixels
  Index ffn_hidden = 0;      // 0 -> 4 * d_model
  bool temporal_attention = true;  // off = deformable-only neck ablation
};

/// Temporally consistent multi-scale features. All levels share d_model
/// channels; f32/f16/f8 carry positional and level embeddings from
/// projection onward.
struct FeaturePyramid {
  Var f4, f8, f16, f32;  // (T, H/s, W/s, D)
  Index T = 0, H = 0, W = 0;

  Index hs(Index stride) const { return H / stride; }
  Index ws(Index stride) const { return W / stride; }
  const Var& level(Index stride) const {
    if (stride == 4) return f4;
    if (stride == 8) return f8;
    if (stride == 16) return f16;
    if (stride == 32) return f32;
    throw std::invalid_argument("feature pyramid: bad stride");
  }
};

/// Fixed 3-D sinusoidal positional encoding over (x, y, t): (T, H, W, D).
Tensor sinusoidal_position_encoding(Index T, Index H, Index W, Index D);

class TemporalNeck {
 public:
  void init(ParamStore& ps, const std::string& name, const NeckConfig& cfg,
            const std::array<Index, 4>& in_channels, Rng& rng);

  FeaturePyramid project_inputs(const RawPyramid& raw) const;
  /// Residual + sampled attention only (the layer then applies norms and FFN).
  FeaturePyramid deformable_attention_core(const FeaturePyramid& pyr, Index layer) const;
  FeaturePyramid deformable_attention_layer(const FeaturePyramid& pyr, Index layer) const;
  FeaturePyramid temporal_attention_layer(const FeaturePyramid& pyr, Index layer) const;
  FeaturePyramid forward(const RawPyramid& raw) const;

  /// Test hook: the parameter bundle of one deformable layer.
  struct DeformLayerRefs {
    Var offsets_w, offsets_b, attn_w, attn_b, value_w, value_b, out_w, out_b;
  };
  DeformLayerRefs deform_layer_refs(Index layer) const;

  const NeckConfig& config() const { return cfg_; }

 private:
  struct DeformLayer {
    Linear offsets, attn, value, out;
    LayerNorm ln1, ln2;
    Mlp ffn;
  };
  struct TemporalLayer {
    MultiheadAttention mha;
    LayerNorm ln1, ln2;
    Mlp ffn;
  };

  NeckConfig cfg_;
  Linear proj_[4];         // per level 1x1 projections to D (index: 4,8,16,32)
  Var level_embed_;        // (4, D)
  std::vector<DeformLayer> deform_;
  std::vector<TemporalLayer> temporal_;
  Var f4_fuse_w_, f4_fuse_b_;  // 3x3 conv after lateral fusion
};

}  // namespace tarvis

#endif
