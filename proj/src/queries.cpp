#include "tarvis/queries.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>

namespace tarvis {

std::vector<Index> role_indices(const std::vector<RoleTag>& roles, QueryRole role) {
  std::vector<Index> idx;
  for (std::size_t i = 0; i < roles.size(); ++i)
    if (roles[i].role == role) idx.push_back((Index)i);
  return idx;
}

TargetQuerySet concat_task_queries(const std::vector<TargetQuerySet>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_task_queries: empty");
  const Index D = parts[0].queries->value.cols();
  std::vector<Var> qs, es;
  TargetQuerySet out;
  for (const auto& p : parts) {
    if (p.queries->value.cols() != D) throw std::invalid_argument("concat_task_queries: D mismatch");
    if (p.size() == 0) continue;
    qs.push_back(p.queries);
    es.push_back(p.embeddings);
    out.roles.insert(out.roles.end(), p.roles.begin(), p.roles.end());
  }
  if (qs.empty()) return parts[0];
  out.queries = qs.size() == 1 ? qs[0] : concat_front<double>(qs);
  out.embeddings = es.size() == 1 ? es[0] : concat_front<double>(es);
  return out;
}

// ---------------------------------------------------------------------------
// QueryBank
// ---------------------------------------------------------------------------

void QueryBank::init(ParamStore& ps, const std::string& name, Index d_model, Index instance_count,
                     bool use_semantic, Rng& rng) {
  ps_ = &ps;
  name_ = name;
  d_model_ = d_model;
  instance_count_ = instance_count;
  use_semantic_ = use_semantic;
  inst_q_ = ps.create(name + ".inst.q", {instance_count, d_model});
  inst_e_ = ps.create(name + ".inst.e", {instance_count, d_model});
  init_normal(inst_q_, rng, 0.5);
  init_normal(inst_e_, rng, 0.5);
  bg_q_ = ps.create(name + ".bg.q", {1, d_model});
  bg_e_ = ps.create(name + ".bg.e", {1, d_model});
  init_normal(bg_q_, rng, 0.5);
  init_normal(bg_e_, rng, 0.5);
}

void QueryBank::register_dataset(const std::string& dataset, const ClassTable& classes, Rng& rng) {
  if (datasets_.count(dataset)) throw std::invalid_argument("dataset already registered: " + dataset);
  DatasetEntry e;
  e.order = class_order(classes, true);
  for (const auto& c : classes)
    if (c.is_thing) ++e.num_things;
  if (use_semantic_) {
    const Index C = (Index)e.order.size();
    e.sem_q = ps_->create(name_ + ".sem." + dataset + ".q", {C, d_model_});
    e.sem_e = ps_->create(name_ + ".sem." + dataset + ".e", {C, d_model_});
    init_normal(e.sem_q, rng, 0.5);
    init_normal(e.sem_e, rng, 0.5);
  }
  datasets_[dataset] = std::move(e);
}

const QueryBank::DatasetEntry& QueryBank::entry(const std::string& dataset) const {
  auto it = datasets_.find(dataset);
  if (it == datasets_.end()) throw std::out_of_range("unknown dataset: " + dataset);
  return it->second;
}

TargetQuerySet QueryBank::build_vis_queries(const std::string& dataset) const {
  const DatasetEntry& e = entry(dataset);
  TargetQuerySet qs;
  std::vector<Var> q_parts, e_parts;
  if (use_semantic_) {
    q_parts.push_back(slice_front(e.sem_q, 0, e.num_things));
    e_parts.push_back(slice_front(e.sem_e, 0, e.num_things));
    for (Index c = 0; c < e.num_things; ++c)
      qs.roles.push_back({QueryRole::Semantic, e.order[(std::size_t)c], -1});
  }
  q_parts.push_back(inst_q_);
  e_parts.push_back(inst_e_);
  for (Index i = 0; i < instance_count_; ++i) qs.roles.push_back({QueryRole::Instance, (int)i, -1});
  if (use_semantic_) {
    q_parts.push_back(bg_q_);
    e_parts.push_back(bg_e_);
    qs.roles.push_back({QueryRole::Background, -1, -1});
  }
  qs.queries = q_parts.size() == 1 ? q_parts[0] : concat_front<double>(q_parts);
  qs.embeddings = e_parts.size() == 1 ? e_parts[0] : concat_front<double>(e_parts);
  return qs;
}

TargetQuerySet QueryBank::build_vps_queries(const std::string& dataset) const {
  if (!use_semantic_) throw std::invalid_argument("vps requires semantic queries");
  const DatasetEntry& e = entry(dataset);
  TargetQuerySet qs;
  for (int cid : e.order) qs.roles.push_back({QueryRole::Semantic, cid, -1});
  for (Index i = 0; i < instance_count_; ++i) qs.roles.push_back({QueryRole::Instance, (int)i, -1});
  qs.roles.push_back({QueryRole::Background, -1, -1});
  qs.queries = concat_front<double>({e.sem_q, inst_q_, bg_q_});
  qs.embeddings = concat_front<double>({e.sem_e, inst_e_, bg_e_});
  return qs;
}

// ---------------------------------------------------------------------------
// ObjectEncoder
// ---------------------------------------------------------------------------

void ObjectEncoder::init(ParamStore& ps, const std::string& name, Index d_model,
                         const ObjectEncoderConfig& cfg, Rng& rng) {
  cfg_ = cfg;
  if (cfg_.ffn_hidden == 0) cfg_.ffn_hidden = 4 * d_model;
  if (cfg_.queries_per_object < 1) throw std::invalid_argument("object encoder: q_o must be >= 1");
  if (cfg_.max_points < 1) throw std::invalid_argument("object encoder: p_max must be >= 1");
  d_model_ = d_model;
  embed_map_.init(ps, name + ".embed_map", d_model, d_model, rng);
  cell_fallback_ = ps.create(name + ".cell_fallback", {1, d_model});
  init_normal(cell_fallback_, rng, 0.5);
  layers_.resize((std::size_t)cfg_.layers);
  for (Index i = 0; i < cfg_.layers; ++i) {
    auto& l = layers_[(std::size_t)i];
    const std::string ln = name + ".l" + std::to_string(i);
    l.self_attn.init(ps, ln + ".self", d_model, cfg_.num_heads, rng);
    l.cross_attn.init(ps, ln + ".cross", d_model, cfg_.num_heads, rng);
    l.ln1.init(ps, ln + ".ln1", d_model);
    l.ln2.init(ps, ln + ".ln2", d_model);
    l.ln3.init(ps, ln + ".ln3", d_model);
    l.ffn.init(ps, ln + ".ffn", d_model, cfg_.ffn_hidden, rng);
  }
}

std::vector<std::vector<Index>> ObjectEncoder::split_mask_into_segments(
    const std::vector<std::uint8_t>& mask, Index height, Index width, Index q_o) {
  std::vector<Index> pixels;
  for (Index i = 0; i < height * width; ++i)
    if (mask[(std::size_t)i]) pixels.push_back(i);
  if (pixels.empty()) throw std::invalid_argument("split_mask_into_segments: empty mask");
  if (q_o < 1) throw std::invalid_argument("split_mask_into_segments: q_o must be >= 1");

  // principal axis of the pixel cloud
  double my = 0, mx = 0;
  for (Index p : pixels) {
    my += double(p / width);
    mx += double(p % width);
  }
  my /= double(pixels.size());
  mx /= double(pixels.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (Index p : pixels) {
    const double dy = double(p / width) - my, dx = double(p % width) - mx;
    cov(0, 0) += dy * dy;
    cov(0, 1) += dy * dx;
    cov(1, 0) += dy * dx;
    cov(1, 1) += dx * dx;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const Eigen::Vector2d axis = es.eigenvectors().col(1);  // largest eigenvalue

  std::vector<std::pair<double, Index>> keyed;
  keyed.reserve(pixels.size());
  for (Index p : pixels)
    keyed.emplace_back(axis(0) * double(p / width) + axis(1) * double(p % width), p);
  std::sort(keyed.begin(), keyed.end());

  const Index n = (Index)keyed.size();
  std::vector<std::vector<Index>> segments((std::size_t)q_o);
  const Index base = n / q_o, extra = n % q_o;
  Index pos = 0;
  for (Index s = 0; s < q_o; ++s) {
    const Index len = base + (s < extra ? 1 : 0);
    for (Index i = 0; i < len; ++i) segments[(std::size_t)s].push_back(keyed[(std::size_t)(pos + i)].second);
    pos += len;
  }
  return segments;
}

std::vector<Index> ObjectEncoder::subsample_points(const std::vector<Index>& mask_pixels, Index p_max,
                                                   Rng& rng) {
  if (mask_pixels.empty()) throw std::invalid_argument("subsample_points: empty mask");
  if (p_max < 1) throw std::invalid_argument("subsample_points: p_max must be >= 1");
  if ((Index)mask_pixels.size() <= p_max) return mask_pixels;
  auto pick = rng.sample_without_replacement((Index)mask_pixels.size(), p_max);
  std::vector<Index> out;
  out.reserve((std::size_t)p_max);
  for (Index i : pick) out.push_back(mask_pixels[(std::size_t)i]);
  return out;
}

Tensor ObjectEncoder::build_hard_mask_bias(const std::vector<Index>& block_of_query,
                                           const std::vector<std::pair<Index, Index>>& blocks,
                                           Index num_tokens) {
  const Index nq = (Index)block_of_query.size();
  Tensor bias = Tensor::full({nq, num_tokens}, -1e30);
  for (Index q = 0; q < nq; ++q) {
    const auto [start, count] = blocks[(std::size_t)block_of_query[(std::size_t)q]];
    if (count == 0) {
      for (Index t = 0; t < num_tokens; ++t) bias.at(q, t) = 0.0;  // nothing to mask against
    } else {
      for (Index t = start; t < start + count; ++t) bias.at(q, t) = 0.0;
    }
  }
  return bias;
}

namespace {

Var mean_rows(const Var& x) {
  const Index n = x->value.dim(0);
  Tensor ones({1, n});
  ones.array().setConstant(1.0 / double(n));
  return matmul(make_const<double>(ones), x);
}

/// Downsample a full-resolution mask to the stride-4 grid; a cell is set when
/// any of its source pixels is set.
std::vector<std::uint8_t> anypool_mask_to_f4(const std::vector<std::uint8_t>& mask, Index H, Index W) {
  const Index h4 = H / 4, w4 = W / 4;
  std::vector<std::uint8_t> out((std::size_t)(h4 * w4), 0);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      if (mask[(std::size_t)(y * W + x)]) out[(std::size_t)((y / 4) * w4 + x / 4)] = 1;
  return out;
}

}  // namespace

Var ObjectEncoder::init_background_queries(const Var& f4_flat, Index frame, Index h4, Index w4,
                                           const std::vector<std::uint8_t>& non_object_mask_f4) const {
  const Index g = cfg_.grid;
  std::vector<Var> cells;
  for (Index cy = 0; cy < g; ++cy)
    for (Index cx = 0; cx < g; ++cx) {
      std::vector<Index> pix;
      for (Index y = cy * h4 / g; y < (cy + 1) * h4 / g; ++y)
        for (Index x = cx * w4 / g; x < (cx + 1) * w4 / g; ++x)
          if (non_object_mask_f4[(std::size_t)(y * w4 + x)]) pix.push_back(frame * h4 * w4 + y * w4 + x);
      if (pix.empty()) {
        cells.push_back(cell_fallback_);
      } else {
        cells.push_back(mean_rows(gather_front(f4_flat, pix)));
      }
    }
  return concat_front<double>(cells);
}

TargetQuerySet ObjectEncoder::encode_from_masks(const std::vector<CueInput>& cues,
                                                const FeaturePyramid& pyr, Index queries_per_object,
                                                Rng& rng) const {
  if (cues.empty()) throw std::invalid_argument("encode_from_masks: no cues");
  const Index H = pyr.H, W = pyr.W, h4 = pyr.hs(4), w4 = pyr.ws(4), D = d_model_;
  const Index q_o = queries_per_object;
  Var f4_flat = reshape(pyr.f4, {pyr.T * h4 * w4, D});

  std::vector<Var> init_parts;
  std::vector<std::vector<Index>> object_points;
  std::vector<std::vector<std::uint8_t>> f4_masks;
  TargetQuerySet qs;
  for (std::size_t o = 0; o < cues.size(); ++o) {
    const CueInput& cue = cues[o];
    if ((Index)cue.mask.size() != H * W) throw std::invalid_argument("encode_from_masks: mask size");
    bool any = false;
    for (auto v : cue.mask) any |= v != 0;
    if (!any) throw std::invalid_argument("encode_from_masks: empty object mask");
    auto m4 = anypool_mask_to_f4(cue.mask, H, W);
    auto segments = split_mask_into_segments(m4, h4, w4, q_o);
    std::vector<Index> all_pix;
    for (Index i = 0; i < h4 * w4; ++i)
      if (m4[(std::size_t)i]) all_pix.push_back(i);
    for (Index s = 0; s < q_o; ++s) {
      const auto& seg = segments[(std::size_t)s].empty() ? all_pix : segments[(std::size_t)s];
      std::vector<Index> global;
      for (Index p : seg) global.push_back(cue.frame * h4 * w4 + p);
      init_parts.push_back(mean_rows(gather_front(f4_flat, global)));
      qs.roles.push_back({QueryRole::Object, (int)o, (int)s});
    }
    std::vector<Index> pts = subsample_points(all_pix, cfg_.max_points, rng);
    std::vector<Index> global_pts;
    for (Index p : pts) global_pts.push_back(cue.frame * h4 * w4 + p);
    object_points.push_back(std::move(global_pts));
    f4_masks.push_back(std::move(m4));
  }

  std::vector<Index> bg_points;
  if (cfg_.background_queries) {
    const Index ref_frame = cues[0].frame;
    std::vector<std::uint8_t> non_object((std::size_t)(h4 * w4), 1);
    for (std::size_t o = 0; o < cues.size(); ++o) {
      if (cues[o].frame != ref_frame) continue;
      for (Index i = 0; i < h4 * w4; ++i)
        if (f4_masks[o][(std::size_t)i]) non_object[(std::size_t)i] = 0;
    }
    init_parts.push_back(init_background_queries(f4_flat, ref_frame, h4, w4, non_object));
    for (Index b = 0; b < cfg_.grid * cfg_.grid; ++b) qs.roles.push_back({QueryRole::Background, (int)b, -1});
    std::vector<Index> bg_pix;
    for (Index i = 0; i < h4 * w4; ++i)
      if (non_object[(std::size_t)i]) bg_pix.push_back(ref_frame * h4 * w4 + i);
    if (!bg_pix.empty()) bg_points = subsample_points(bg_pix, cfg_.max_points, rng);
  }

  qs.queries = concat_front<double>(init_parts);
  qs.embeddings = embed_map_(qs.queries);
  return refine(std::move(qs), f4_flat, object_points, bg_points);
}

TargetQuerySet ObjectEncoder::encode_from_points(const std::vector<std::array<Index, 3>>& points,
                                                 const FeaturePyramid& pyr, Rng& rng) const {
  std::vector<CueInput> cues;
  for (const auto& p : points) {
    const auto [t, y, x] = p;
    if (t < 0 || t >= pyr.T || y < 0 || y >= pyr.H || x < 0 || x >= pyr.W)
      throw std::out_of_range("encode_from_points: point outside frame bounds");
    CueInput cue;
    cue.frame = t;
    cue.mask.assign((std::size_t)(pyr.H * pyr.W), 0);
    cue.mask[(std::size_t)(y * pyr.W + x)] = 1;
    cues.push_back(std::move(cue));
  }
  return encode_from_masks(cues, pyr, 1, rng);
}

TargetQuerySet ObjectEncoder::refine(TargetQuerySet qs, const Var& f4_flat,
                                     const std::vector<std::vector<Index>>& object_points,
                                     const std::vector<Index>& background_points) const {
  if (layers_.empty()) return qs;

  // token set: object point blocks then the background block
  std::vector<Index> all_points;
  std::vector<std::pair<Index, Index>> blocks;
  for (const auto& pts : object_points) {
    blocks.emplace_back((Index)all_points.size(), (Index)pts.size());
    all_points.insert(all_points.end(), pts.begin(), pts.end());
  }
  blocks.emplace_back((Index)all_points.size(), (Index)background_points.size());
  all_points.insert(all_points.end(), background_points.begin(), background_points.end());

  std::vector<Index> block_of_query;
  for (const auto& r : qs.roles)
    block_of_query.push_back(r.role == QueryRole::Object ? (Index)r.a : (Index)object_points.size());
  Tensor bias = build_hard_mask_bias(block_of_query, blocks, (Index)all_points.size());

  Var tokens = gather_front(f4_flat, all_points);
  Var x = qs.queries;
  for (const auto& l : layers_) {
    if (cfg_.self_attention) {
      Var qk = add(x, qs.embeddings);
      x = l.ln1(add(x, l.self_attn(qk, qk, x)));
    }
    Var q = add(x, qs.embeddings);
    x = l.ln2(add(x, l.cross_attn(q, tokens, tokens, &bias)));
    x = l.ln3(add(x, l.ffn(x)));
  }
  qs.queries = x;
  return qs;
}

}  // namespace tarvis
