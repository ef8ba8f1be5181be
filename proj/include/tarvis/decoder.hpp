#ifndef TARVIS_DECODER_HPP
#define TARVIS_DECODER_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tarvis/queries.hpp"

namespace tarvis {

struct DecoderConfig {
  Index num_layers = 9;  // cycles levels 32 -> 16 -> 8
  Index num_heads = 8;
  Index ffn_hidden = 0;        // 0 -> 4 * d_model
  Index mask_mlp_layers = 3;   // 0 = identity (plain inner-product heads)
  double mask_threshold = 0.5;
  bool linear_classifier = false;  // ablation: per-dataset linear layer instead of semantic queries
};

struct LayerOutput {
  Var mask_logits;   // (N, T, H4, W4), one row per query
  Var class_logits;  // (I, C+1); null when no instance queries are present
};

struct SegmentationOutput {
  std::vector<LayerOutput> layers;  // num_layers + 1 head evaluations
  std::vector<RoleTag> roles;
  Index T = 0, H4 = 0, W4 = 0;

  const LayerOutput& final_layer() const { return layers.back(); }
};

// --- head primitives (also used standalone in tests) ------------------------

/// <F4, queries>: per-query mask logits (N, T, H4, W4).
Var mask_inner_product(const FeaturePyramid& pyr, const Var& queries);
/// <Q_inst, concat(Q_sem, Q_bg)>: (I, C+1) classification logits.
Var classification_inner_product(const Var& inst, const Var& sem, const Var& bg);
/// Elementwise max over each object's q_o sub-query mask rows.
Var object_mask_max(const Var& object_rows, Index q_o);

/// Index of the shared catch-all background query (a == -1), or -1.
Index vis_background_index(const std::vector<RoleTag>& roles);
/// Indices of object-encoder background queries (a >= 0).
std::vector<Index> vos_background_indices(const std::vector<RoleTag>& roles);

/// Additive cross-attention bias from the previous layer's mask logits:
/// sigmoid, bilinear resize to the level, threshold at mask_threshold.
/// Rows that would mask out every token fall back to unmasked attention.
Tensor attention_bias_from_masks(const Tensor& mask_logits, Index hs, Index ws, double threshold);

class Decoder {
 public:
  void init(ParamStore& ps, const std::string& name, Index d_model, const DecoderConfig& cfg,
            Rng& rng);
  /// Linear-classifier mode needs a per-dataset head; no-op otherwise.
  void register_dataset(const std::string& dataset, Index num_thing_classes, Rng& rng);

  std::pair<TargetQuerySet, SegmentationOutput> forward(
      const TargetQuerySet& qs, const FeaturePyramid& pyr,
      const std::optional<std::string>& dataset = std::nullopt) const;

  /// One refinement step against a single level's tokens (test hook).
  Var layer_step(Index layer, const Var& queries, const Var& embeddings, const Var& tokens,
                 const Tensor* attn_bias) const;

  const DecoderConfig& config() const { return cfg_; }

 private:
  struct Layer {
    MultiheadAttention cross_attn, self_attn;
    LayerNorm ln1, ln2, ln3;
    Mlp ffn;
  };

  LayerOutput eval_heads(const Var& queries, const std::vector<RoleTag>& roles,
                         const FeaturePyramid& pyr,
                         const std::optional<std::string>& dataset) const;

  DecoderConfig cfg_;
  Index d_model_ = 0;
  ParamStore* ps_ = nullptr;
  std::string name_;
  std::vector<Layer> layers_;
  MlpStack mask_mlp_;
  std::map<std::string, Linear> cls_linear_;  // linear-classifier ablation
};

}  // namespace tarvis

#endif
