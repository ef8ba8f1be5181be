#include "tarvis/decoder.hpp"

namespace tarvis {

Var mask_inner_product(const FeaturePyramid& pyr, const Var& queries) {
  const Index D = queries->value.cols();
  const Index h4 = pyr.hs(4), w4 = pyr.ws(4);
  Var f4_flat = reshape(pyr.f4, {pyr.T * h4 * w4, D});
  Var logits = matmul_nt(queries, f4_flat);  // (N, T*H4*W4)
  return reshape(logits, {queries->value.dim(0), pyr.T, h4, w4});
}

Var classification_inner_product(const Var& inst, const Var& sem, const Var& bg) {
  return matmul_nt(inst, concat_front<double>({sem, bg}));
}

Var object_mask_max(const Var& object_rows, Index q_o) { return group_max_front(object_rows, q_o); }

Index vis_background_index(const std::vector<RoleTag>& roles) {
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i].role == QueryRole::Background && roles[i].a == -1) return (Index)i;
  return -1;
}

std::vector<Index> vos_background_indices(const std::vector<RoleTag>& roles) {
  std::vector<Index> out;
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i].role == QueryRole::Background && roles[i].a >= 0) out.push_back((Index)i);
  return out;
}

Tensor attention_bias_from_masks(const Tensor& mask_logits, Index hs, Index ws, double threshold) {
  const Index N = mask_logits.dim(0), T = mask_logits.dim(1);
  const Index h4 = mask_logits.dim(2), w4 = mask_logits.dim(3);
  Tensor bias({N, T * hs * ws});
  for (Index n = 0; n < N; ++n) {
    bool any = false;
    for (Index t = 0; t < T; ++t) {
      Tensor plane({h4, w4});
      for (Index i = 0; i < h4 * w4; ++i) {
        const double v = mask_logits[((n * T + t) * h4 * w4) + i];
        plane[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      }
      Tensor resized = bilinear_resize_plane(plane, hs, ws);
      for (Index i = 0; i < hs * ws; ++i) {
        const bool on = resized[i] > threshold;
        any |= on;
        bias.at(n, t * hs * ws + i) = on ? 0.0 : -1e30;
      }
    }
    if (!any) {
      for (Index i = 0; i < T * hs * ws; ++i) bias.at(n, i) = 0.0;  // fallback: attend unmasked
    }
  }
  return bias;
}

void Decoder::init(ParamStore& ps, const std::string& name, Index d_model, const DecoderConfig& cfg,
                   Rng& rng) {
  if (cfg.num_layers < 1) throw std::invalid_argument("decoder: num_layers must be >= 1");
  cfg_ = cfg;
  if (cfg_.ffn_hidden == 0) cfg_.ffn_hidden = 4 * d_model;
  d_model_ = d_model;
  ps_ = &ps;
  name_ = name;
  layers_.resize((std::size_t)cfg.num_layers);
  for (Index i = 0; i < cfg.num_layers; ++i) {
    auto& l = layers_[(std::size_t)i];
    const std::string ln = name + ".l" + std::to_string(i);
    l.cross_attn.init(ps, ln + ".cross", d_model, cfg.num_heads, rng);
    l.self_attn.init(ps, ln + ".self", d_model, cfg.num_heads, rng);
    l.ln1.init(ps, ln + ".ln1", d_model);
    l.ln2.init(ps, ln + ".ln2", d_model);
    l.ln3.init(ps, ln + ".ln3", d_model);
    l.ffn.init(ps, ln + ".ffn", d_model, cfg_.ffn_hidden, rng);
  }
  if (cfg.mask_mlp_layers > 0)
    mask_mlp_.init(ps, name + ".mask_mlp", d_model, d_model, d_model, cfg.mask_mlp_layers, rng);
}

void Decoder::register_dataset(const std::string& dataset, Index num_thing_classes, Rng& rng) {
  if (!cfg_.linear_classifier) return;
  if (cls_linear_.count(dataset)) throw std::invalid_argument("decoder: dataset already registered");
  cls_linear_[dataset].init(*ps_, name_ + ".cls." + dataset, d_model_, num_thing_classes + 1, rng);
}

LayerOutput Decoder::eval_heads(const Var& queries, const std::vector<RoleTag>& roles,
                                const FeaturePyramid& pyr,
                                const std::optional<std::string>& dataset) const {
  LayerOutput out;
  Var embed = cfg_.mask_mlp_layers > 0 ? mask_mlp_(queries) : queries;
  out.mask_logits = mask_inner_product(pyr, embed);

  const auto inst = role_indices(roles, QueryRole::Instance);
  if (!inst.empty()) {
    Var qi = gather_front(queries, inst);
    if (cfg_.linear_classifier) {
      if (!dataset || !cls_linear_.count(*dataset))
        throw std::invalid_argument("decoder: linear classifier needs a registered dataset");
      out.class_logits = cls_linear_.at(*dataset)(qi);
    } else {
      const auto sem = role_indices(roles, QueryRole::Semantic);
      const Index bg = vis_background_index(roles);
      if (sem.empty() || bg < 0)
        throw std::invalid_argument("decoder: instance classification needs semantic and background queries");
      out.class_logits = classification_inner_product(qi, gather_front(queries, sem),
                                                      slice_front(queries, bg, 1));
    }
  }
  return out;
}

Var Decoder::layer_step(Index layer, const Var& queries, const Var& embeddings, const Var& tokens,
                        const Tensor* attn_bias) const {
  const auto& l = layers_[(std::size_t)layer];
  Var x = queries;
  Var q = add(x, embeddings);
  x = l.ln1(add(x, l.cross_attn(q, tokens, tokens, attn_bias)));
  Var qk = add(x, embeddings);
  x = l.ln2(add(x, l.self_attn(qk, qk, x)));
  x = l.ln3(add(x, l.ffn(x)));
  return x;
}

std::pair<TargetQuerySet, SegmentationOutput> Decoder::forward(
    const TargetQuerySet& qs, const FeaturePyramid& pyr,
    const std::optional<std::string>& dataset) const {
  SegmentationOutput seg;
  seg.roles = qs.roles;
  seg.T = pyr.T;
  seg.H4 = pyr.hs(4);
  seg.W4 = pyr.ws(4);
  seg.layers.push_back(eval_heads(qs.queries, qs.roles, pyr, dataset));

  const Index strides[3] = {32, 16, 8};
  Var x = qs.queries;
  for (Index l = 0; l < cfg_.num_layers; ++l) {
    const Index s = strides[l % 3];
    const Index hs = pyr.hs(s), ws = pyr.ws(s);
    Var tokens = reshape(pyr.level(s), {pyr.T * hs * ws, d_model_});
    Tensor bias =
        attention_bias_from_masks(seg.layers.back().mask_logits->value, hs, ws, cfg_.mask_threshold);
    x = layer_step(l, x, qs.embeddings, tokens, &bias);
    seg.layers.push_back(eval_heads(x, qs.roles, pyr, dataset));
  }
  TargetQuerySet refined = qs;
  refined.queries = x;
  return {std::move(refined), std::move(seg)};
}

}  // namespace tarvis
