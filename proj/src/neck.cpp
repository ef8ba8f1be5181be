#include "tarvis/neck.hpp"

#include <cmath>

namespace tarvis {

namespace {
double tau_angle(Index i, Index n) { return 6.283185307179586 * double(i) / double(n); }
}  // namespace

Tensor sinusoidal_position_encoding(Index T, Index H, Index W, Index D) {
  if (D % 2 != 0) throw std::invalid_argument("position encoding: D must be even");
  const Index pairs_x = D / 6, pairs_y = D / 6;
  const Index pairs_t = D / 2 - pairs_x - pairs_y;
  Tensor pe({T, H, W, D});
  const double tau = 6.283185307179586;
  for (Index t = 0; t < T; ++t) {
    const double pt = T > 1 ? (double(t) + 0.5) / double(T) : 0.5;
    for (Index y = 0; y < H; ++y) {
      const double py = (double(y) + 0.5) / double(H);
      for (Index x = 0; x < W; ++x) {
        const double px = (double(x) + 0.5) / double(W);
        Index c = 0;
        double f = tau;
        for (Index k = 0; k < pairs_x; ++k, f *= 2) {
          pe.at(t, y, x, c++) = std::sin(px * f);
          pe.at(t, y, x, c++) = std::cos(px * f);
        }
        f = tau;
        for (Index k = 0; k < pairs_y; ++k, f *= 2) {
          pe.at(t, y, x, c++) = std::sin(py * f);
          pe.at(t, y, x, c++) = std::cos(py * f);
        }
        f = tau;
        for (Index k = 0; k < pairs_t; ++k, f *= 2) {
          pe.at(t, y, x, c++) = std::sin(pt * f);
          pe.at(t, y, x, c++) = std::cos(pt * f);
        }
      }
    }
  }
  return pe;
}

void TemporalNeck::init(ParamStore& ps, const std::string& name, const NeckConfig& cfg,
                        const std::array<Index, 4>& in_channels, Rng& rng) {
  cfg_ = cfg;
  if (cfg_.ffn_hidden == 0) cfg_.ffn_hidden = 4 * cfg.d_model;
  if (cfg.num_layers < 0) throw std::invalid_argument("neck: num_layers must be >= 0");
  if (cfg.temporal_grid < 1) throw std::invalid_argument("neck: temporal_grid must be >= 1");
  const Index D = cfg.d_model;
  const char* lvl_names[4] = {"p4", "p8", "p16", "p32"};
  for (Index l = 0; l < 4; ++l)
    proj_[l].init(ps, name + ".proj." + lvl_names[l], in_channels[(std::size_t)l], D, rng);
  level_embed_ = ps.create(name + ".level_embed", {4, D});
  init_normal(level_embed_, rng, 0.02);

  const Index L = 3, K = cfg.deform_points, h = cfg.num_heads;
  deform_.resize((std::size_t)cfg.num_layers);
  temporal_.resize((std::size_t)cfg.num_layers);
  for (Index i = 0; i < cfg.num_layers; ++i) {
    auto& d = deform_[(std::size_t)i];
    const std::string dn = name + ".deform" + std::to_string(i);
    d.offsets.init(ps, dn + ".offsets", D, h * L * K * 2, rng);
    d.attn.init(ps, dn + ".attn", D, h * L * K, rng);
    d.value.init(ps, dn + ".value", D, D, rng);
    d.out.init(ps, dn + ".out", D, D, rng);
    d.ln1.init(ps, dn + ".ln1", D);
    d.ln2.init(ps, dn + ".ln2", D);
    d.ffn.init(ps, dn + ".ffn", D, cfg_.ffn_hidden, rng);
    // near-identity start: zero offsets around a small radial pattern, uniform weights
    init_constant(d.offsets.w, 0.0);
    init_constant(d.attn.w, 0.0);
    init_constant(d.attn.b, 0.0);
    for (Index hh = 0; hh < h; ++hh) {
      const double th = tau_angle(hh, h);
      for (Index l = 0; l < L; ++l)
        for (Index k = 0; k < K; ++k) {
          d.offsets.b->value[((hh * L + l) * K + k) * 2 + 0] = std::cos(th) * double(k + 1);
          d.offsets.b->value[((hh * L + l) * K + k) * 2 + 1] = std::sin(th) * double(k + 1);
        }
    }
    auto& tl = temporal_[(std::size_t)i];
    const std::string tn = name + ".temporal" + std::to_string(i);
    tl.mha.init(ps, tn + ".mha", D, h, rng);
    tl.ln1.init(ps, tn + ".ln1", D);
    tl.ln2.init(ps, tn + ".ln2", D);
    tl.ffn.init(ps, tn + ".ffn", D, cfg_.ffn_hidden, rng);
  }
  f4_fuse_w_ = ps.create(name + ".f4_fuse.w", {3, 3, D, D});
  f4_fuse_b_ = ps.create(name + ".f4_fuse.b", {D});
  init_normal(f4_fuse_w_, rng, std::sqrt(2.0 / double(9 * D)));
}

FeaturePyramid TemporalNeck::project_inputs(const RawPyramid& raw) const {
  FeaturePyramid pyr;
  pyr.T = raw.s4->value.dim(0);
  pyr.H = raw.s4->value.dim(1) * 4;
  pyr.W = raw.s4->value.dim(2) * 4;
  const Index D = cfg_.d_model;
  const Var* raws[4] = {&raw.s4, &raw.s8, &raw.s16, &raw.s32};
  Var* outs[4] = {&pyr.f4, &pyr.f8, &pyr.f16, &pyr.f32};
  for (Index l = 0; l < 4; ++l) {
    const Var& x = *raws[l];
    Var y = proj_[l](x);
    y = add(y, make_const<double>(
                   sinusoidal_position_encoding(x->value.dim(0), x->value.dim(1), x->value.dim(2), D)));
    y = add_rowvec(y, slice_front(level_embed_, l, 1));
    *outs[l] = y;
  }
  return pyr;
}

namespace {

struct TokenMeta {
  Index nq = 0;                       // total query tokens over {32,16,8}
  std::array<Index, 3> counts{};      // per level
  std::vector<Index> qframe;          // frame per token
  Tensor ref;                         // (nq, 2) normalized (x, y)
};

TokenMeta token_meta(const FeaturePyramid& pyr) {
  TokenMeta m;
  const Index strides[3] = {32, 16, 8};
  for (Index li = 0; li < 3; ++li) {
    const Index Hl = pyr.hs(strides[li]), Wl = pyr.ws(strides[li]);
    m.counts[(std::size_t)li] = pyr.T * Hl * Wl;
    m.nq += m.counts[(std::size_t)li];
  }
  m.qframe.resize((std::size_t)m.nq);
  m.ref = Tensor({m.nq, 2});
  Index q = 0;
  for (Index li = 0; li < 3; ++li) {
    const Index Hl = pyr.hs(strides[li]), Wl = pyr.ws(strides[li]);
    for (Index t = 0; t < pyr.T; ++t)
      for (Index y = 0; y < Hl; ++y)
        for (Index x = 0; x < Wl; ++x, ++q) {
          m.qframe[(std::size_t)q] = t;
          m.ref.at(q, 0) = (double(x) + 0.5) / double(Wl);
          m.ref.at(q, 1) = (double(y) + 0.5) / double(Hl);
        }
  }
  return m;
}

}  // namespace

FeaturePyramid TemporalNeck::deformable_attention_core(const FeaturePyramid& pyr, Index layer) const {
  const auto& d = deform_[(std::size_t)layer];
  const Index D = cfg_.d_model, h = cfg_.num_heads, K = cfg_.deform_points, L = 3;
  const TokenMeta meta = token_meta(pyr);

  Var x32 = reshape(pyr.f32, {meta.counts[0], D});
  Var x16 = reshape(pyr.f16, {meta.counts[1], D});
  Var x8 = reshape(pyr.f8, {meta.counts[2], D});
  Var x = concat_front<double>({x32, x16, x8});

  Var offs = reshape(d.offsets(x), {meta.nq, h, L, K, 2});
  // scale into normalized units of the sampled level; add shared reference point
  Tensor scale({meta.nq, h, L, K, 2});
  Tensor refs({meta.nq, h, L, K, 2});
  const Index strides[3] = {32, 16, 8};
  for (Index q = 0; q < meta.nq; ++q)
    for (Index hh = 0; hh < h; ++hh)
      for (Index l = 0; l < L; ++l) {
        const double invw = 1.0 / double(pyr.ws(strides[l]));
        const double invh = 1.0 / double(pyr.hs(strides[l]));
        for (Index k = 0; k < K; ++k) {
          scale.at(q, hh, l, k, (Index)0) = invw;
          scale.at(q, hh, l, k, (Index)1) = invh;
          refs.at(q, hh, l, k, (Index)0) = meta.ref.at(q, 0);
          refs.at(q, hh, l, k, (Index)1) = meta.ref.at(q, 1);
        }
      }
  Var locs = add(mul(offs, make_const<double>(scale)), make_const<double>(refs));
  Var attn = reshape(softmax_lastdim(reshape(d.attn(x), {meta.nq * h, L * K})), {meta.nq, h, L, K});

  Var v = d.value(x);
  std::vector<Var> values = {
      reshape(slice_front(v, 0, meta.counts[0]), {pyr.T, pyr.hs(32), pyr.ws(32), D}),
      reshape(slice_front(v, meta.counts[0], meta.counts[1]), {pyr.T, pyr.hs(16), pyr.ws(16), D}),
      reshape(slice_front(v, meta.counts[0] + meta.counts[1], meta.counts[2]),
              {pyr.T, pyr.hs(8), pyr.ws(8), D})};
  Var sampled = ms_deform_sample<double>(values, locs, attn, meta.qframe);
  Var y = add(x, d.out(sampled));

  FeaturePyramid out = pyr;
  out.f32 = reshape(slice_front(y, 0, meta.counts[0]), {pyr.T, pyr.hs(32), pyr.ws(32), D});
  out.f16 = reshape(slice_front(y, meta.counts[0], meta.counts[1]), {pyr.T, pyr.hs(16), pyr.ws(16), D});
  out.f8 = reshape(slice_front(y, meta.counts[0] + meta.counts[1], meta.counts[2]),
                   {pyr.T, pyr.hs(8), pyr.ws(8), D});
  return out;
}

FeaturePyramid TemporalNeck::deformable_attention_layer(const FeaturePyramid& pyr, Index layer) const {
  const auto& d = deform_[(std::size_t)layer];
  FeaturePyramid out = deformable_attention_core(pyr, layer);
  for (Var* f : {&out.f32, &out.f16, &out.f8}) {
    Var y = d.ln1(*f);
    y = d.ln2(add(y, d.ffn(y)));
    *f = y;
  }
  return out;
}

FeaturePyramid TemporalNeck::temporal_attention_layer(const FeaturePyramid& pyr, Index layer) const {
  const auto& tl = temporal_[(std::size_t)layer];
  const Index D = cfg_.d_model, g = cfg_.temporal_grid;
  const Index H32 = pyr.hs(32), W32 = pyr.ws(32), H16 = pyr.hs(16), W16 = pyr.ws(16);
  if (H32 % g != 0 || W32 % g != 0)
    throw std::invalid_argument("temporal attention: H/32 and W/32 must be divisible by the grid size");
  const Index T = pyr.T;
  Var flat32 = reshape(pyr.f32, {T * H32 * W32, D});
  Var flat16 = reshape(pyr.f16, {T * H16 * W16, D});

  std::vector<Var> parts32, parts16;
  std::vector<Index> perm32, perm16;
  for (Index cy = 0; cy < H32 / g; ++cy)
    for (Index cx = 0; cx < W32 / g; ++cx) {
      std::vector<Index> idx32, idx16;
      for (Index t = 0; t < T; ++t) {
        for (Index y = cy * g; y < (cy + 1) * g; ++y)
          for (Index x = cx * g; x < (cx + 1) * g; ++x) idx32.push_back(t * H32 * W32 + y * W32 + x);
        for (Index y = cy * 2 * g; y < (cy + 1) * 2 * g; ++y)
          for (Index x = cx * 2 * g; x < (cx + 1) * 2 * g; ++x)
            idx16.push_back(t * H16 * W16 + y * W16 + x);
      }
      Var t32 = gather_front(flat32, idx32);
      Var t16 = gather_front(flat16, idx16);
      Var tok = concat_front<double>({t32, t16});
      Var refined = add(tok, tl.mha(tok, tok, tok));
      parts32.push_back(slice_front(refined, 0, (Index)idx32.size()));
      parts16.push_back(slice_front(refined, (Index)idx32.size(), (Index)idx16.size()));
      perm32.insert(perm32.end(), idx32.begin(), idx32.end());
      perm16.insert(perm16.end(), idx16.begin(), idx16.end());
    }
  auto invert = [](const std::vector<Index>& perm) {
    std::vector<Index> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[(std::size_t)perm[i]] = (Index)i;
    return inv;
  };
  Var y32 = gather_front(concat_front<double>(parts32), invert(perm32));
  Var y16 = gather_front(concat_front<double>(parts16), invert(perm16));
  for (Var* f : {&y32, &y16}) {
    Var y = tl.ln1(*f);
    y = tl.ln2(add(y, tl.ffn(y)));
    *f = y;
  }
  FeaturePyramid out = pyr;  // f8 and f4 pass through untouched
  out.f32 = reshape(y32, {T, H32, W32, D});
  out.f16 = reshape(y16, {T, H16, W16, D});
  return out;
}

FeaturePyramid TemporalNeck::forward(const RawPyramid& raw) const {
  FeaturePyramid pyr = project_inputs(raw);
  for (Index l = 0; l < cfg_.num_layers; ++l) {
    pyr = deformable_attention_layer(pyr, l);
    if (cfg_.temporal_attention) pyr = temporal_attention_layer(pyr, l);
  }
  Var fused = add(pyr.f4, bilinear_upsample2x(pyr.f8));
  pyr.f4 = conv2d(fused, f4_fuse_w_, f4_fuse_b_, 1, 1);
  return pyr;
}

TemporalNeck::DeformLayerRefs TemporalNeck::deform_layer_refs(Index layer) const {
  const auto& d = deform_[(std::size_t)layer];
  return {d.offsets.w, d.offsets.b, d.attn.w, d.attn.b, d.value.w, d.value.b, d.out.w, d.out.b};
}

}  // namespace tarvis
