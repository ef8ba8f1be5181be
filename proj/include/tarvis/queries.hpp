#ifndef TARVIS_QUERIES_HPP
#define TARVIS_QUERIES_HPP

#include <map>
#include <string>
#include <vector>

#include "tarvis/neck.hpp"
#include "tarvis/nn.hpp"
#include "tarvis/synth.hpp"

namespace tarvis {

enum class QueryRole { Semantic, Instance, Background, Object };

struct RoleTag {
  QueryRole role = QueryRole::Instance;
  int a = -1;  // semantic: class id; instance: slot; object: object index; background: cell index
  int b = -1;  // object: sub-query index within the object
};

inline bool operator==(const RoleTag& x, const RoleTag& y) {
  return x.role == y.role && x.a == y.a && x.b == y.b;
}

/// An ordered set of target queries with role metadata and the learned
/// positional embeddings used in attention affinities.
struct TargetQuerySet {
  Var queries;     // (N, D)
  Var embeddings;  // (N, D)
  std::vector<RoleTag> roles;

  Index size() const { return (Index)roles.size(); }
};

std::vector<Index> role_indices(const std::vector<RoleTag>& roles, QueryRole role);
TargetQuerySet concat_task_queries(const std::vector<TargetQuerySet>& parts);

/// Learned query tables: per-dataset semantic sets; instance and background
/// queries shared across datasets.
class QueryBank {
 public:
  struct DatasetEntry {
    std::vector<int> order;  // class ids, things first then stuff
    Index num_things = 0;
    Var sem_q, sem_e;  // (C_d, D)
  };

  void init(ParamStore& ps, const std::string& name, Index d_model, Index instance_count,
            bool use_semantic, Rng& rng);
  void register_dataset(const std::string& dataset, const ClassTable& classes, Rng& rng);
  bool has_dataset(const std::string& dataset) const { return datasets_.count(dataset) > 0; }
  const DatasetEntry& entry(const std::string& dataset) const;
  const std::map<std::string, DatasetEntry>& datasets() const { return datasets_; }

  TargetQuerySet build_vis_queries(const std::string& dataset) const;
  TargetQuerySet build_vps_queries(const std::string& dataset) const;

  Index instance_count() const { return instance_count_; }
  bool use_semantic() const { return use_semantic_; }
  Var instance_queries() const { return inst_q_; }
  Var background_query() const { return bg_q_; }

 private:
  ParamStore* ps_ = nullptr;
  std::string name_;
  Index d_model_ = 0, instance_count_ = 0;
  bool use_semantic_ = true;
  Var inst_q_, inst_e_, bg_q_, bg_e_;
  std::map<std::string, DatasetEntry> datasets_;
  Rng* unused_ = nullptr;
};

struct ObjectEncoderConfig {
  Index queries_per_object = 4;  // q_o for mask cues; point cues always use 1
  Index max_points = 128;        // p_max feature points per object
  Index grid = 4;                // background pooling grid (B = grid^2)
  Index layers = 3;              // refinement depth
  Index num_heads = 8;
  Index ffn_hidden = 0;          // 0 -> 4 * d_model
  bool background_queries = true;
  bool self_attention = true;  // test/ablation hook
};

/// A ground-truth cue resolved against a specific clip frame.
struct CueInput {
  Index frame = 0;
  std::vector<std::uint8_t> mask;  // full-resolution H*W binary
};

/// HODOR-style object encoder with hard-masked cross-attention; one weight
/// set serves both mask (VOS) and point (PET) cues.
class ObjectEncoder {
 public:
  void init(ParamStore& ps, const std::string& name, Index d_model, const ObjectEncoderConfig& cfg,
            Rng& rng);

  TargetQuerySet encode_from_masks(const std::vector<CueInput>& cues, const FeaturePyramid& pyr,
                                   Index queries_per_object, Rng& rng) const;
  TargetQuerySet encode_from_points(const std::vector<std::array<Index, 3>>& points /* (t,y,x) */,
                                    const FeaturePyramid& pyr, Rng& rng) const;

  /// Partition mask pixels into q_o runs along the principal axis. Returns
  /// flat pixel index lists; they are disjoint and cover the mask.
  static std::vector<std::vector<Index>> split_mask_into_segments(
      const std::vector<std::uint8_t>& mask, Index height, Index width, Index q_o);

  /// All points when |mask| <= p_max, otherwise a uniform sample without
  /// replacement of exactly p_max.
  static std::vector<Index> subsample_points(const std::vector<Index>& mask_pixels, Index p_max,
                                             Rng& rng);

  /// Additive attention bias implementing the hard mask: query i may only see
  /// token block [block_of_query[i]]; rows with an empty block see everything.
  static Tensor build_hard_mask_bias(const std::vector<Index>& block_of_query,
                                     const std::vector<std::pair<Index, Index>>& blocks,
                                     Index num_tokens);

  /// 16 grid-pooled background queries (learned fallback for empty cells).
  Var init_background_queries(const Var& f4_flat, Index frame, Index h4, Index w4,
                              const std::vector<std::uint8_t>& non_object_mask_f4) const;

  const ObjectEncoderConfig& config() const { return cfg_; }
  ObjectEncoderConfig& mutable_config() { return cfg_; }

 private:
  struct Layer {
    MultiheadAttention self_attn, cross_attn;
    LayerNorm ln1, ln2, ln3;
    Mlp ffn;
  };

  TargetQuerySet refine(TargetQuerySet qs, const Var& f4_flat,
                        const std::vector<std::vector<Index>>& object_points,
                        const std::vector<Index>& background_points) const;

  ObjectEncoderConfig cfg_;
  Index d_model_ = 0;
  Linear embed_map_;   // query embeddings for dynamically built queries
  Var cell_fallback_;  // (1, D) learned embedding for empty background cells
  std::vector<Layer> layers_;
};

}  // namespace tarvis

#endif
