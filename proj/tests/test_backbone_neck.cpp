#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "tarvis/model.hpp"

using namespace tarvis;
using tarvis::testing::gradcheck;
using tarvis::testing::randn_var;

namespace {

BackboneConfig tiny_backbone() {
  BackboneConfig cfg;
  cfg.stage_channels = {8, 8, 8, 8};
  cfg.blocks_per_stage = 1;
  cfg.gn_groups = 4;
  return cfg;
}

FeaturePyramid random_pyramid(Index T, Index H, Index W, Index D, Rng& rng) {
  FeaturePyramid pyr;
  pyr.T = T;
  pyr.H = H;
  pyr.W = W;
  pyr.f32 = randn_var({T, H / 32, W / 32, D}, rng, 1.0, false);
  pyr.f16 = randn_var({T, H / 16, W / 16, D}, rng, 1.0, false);
  pyr.f8 = randn_var({T, H / 8, W / 8, D}, rng, 1.0, false);
  pyr.f4 = randn_var({T, H / 4, W / 4, D}, rng, 1.0, false);
  return pyr;
}

double bilinear_at(const Tensor& map, Index t, double ny, double nx) {
  const Index H = map.dim(1), W = map.dim(2), C = map.dim(3);
  (void)C;
  const double py = ny * double(H) - 0.5, px = nx * double(W) - 0.5;
  const Index y0 = (Index)std::floor(py), x0 = (Index)std::floor(px);
  const double fy = py - y0, fx = px - x0;
  double v = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const Index yy = y0 + dy, xx = x0 + dx;
      if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
      v += (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx) * map.at(t, yy, xx, (Index)0);
    }
  return v;
}

}  // namespace

TEST_CASE("backbone: stride arithmetic and per-frame purity") {
  Rng rng(1);
  ParamStore ps;
  Backbone bb;
  bb.init(ps, "backbone", tiny_backbone(), rng);

  auto clip = randn_var({3, 64, 64, 3}, rng, 1.0, false);
  auto pyr = bb.forward(clip);
  CHECK(pyr.s4->value.shape() == Shape{3, 16, 16, 8});
  CHECK(pyr.s8->value.shape() == Shape{3, 8, 8, 8});
  CHECK(pyr.s16->value.shape() == Shape{3, 4, 4, 8});
  CHECK(pyr.s32->value.shape() == Shape{3, 2, 2, 8});

  // reverse the frame order: outputs are reversed per frame, nothing mixes
  Tensor rev({3, 64, 64, 3});
  for (Index t = 0; t < 3; ++t)
    std::copy(clip->value.data() + t * 64 * 64 * 3, clip->value.data() + (t + 1) * 64 * 64 * 3,
              rev.data() + (2 - t) * 64 * 64 * 3);
  auto pyr2 = bb.forward(make_const<double>(rev));
  const Index fsz = 16 * 16 * 8;
  for (Index t = 0; t < 3; ++t)
    for (Index i = 0; i < fsz; ++i)
      CHECK(pyr.s4->value[t * fsz + i] == pyr2.s4->value[(2 - t) * fsz + i]);

  CHECK_THROWS(bb.forward(randn_var({1, 48, 64, 3}, rng, 1.0, false)));
}

TEST_CASE("backbone: analytic gradients match central differences (1e-4)") {
  Rng rng(2);
  ParamStore ps;
  Backbone bb;
  bb.init(ps, "backbone", tiny_backbone(), rng);
  auto clip = randn_var({1, 32, 32, 3}, rng, 0.5, true);
  auto rnd = randn_var({1, 1, 1, 8}, rng, 1.0, false);

  auto f = [&] {
    auto pyr = bb.forward(clip);
    return sum(mul(pyr.s32, add_rowvec(mul_scalar(pyr.s32, 0.0), reshape(rnd, {8}))));
  };
  std::vector<Var> leaves = {clip, ps.get("backbone.stem1.w"), ps.get("backbone.s0.b0.conv1.w"),
                             ps.get("backbone.s2.b0.conv2.w"), ps.get("backbone.s3.b0.sc.w"),
                             ps.get("backbone.s1.b0.n1.gamma"), ps.get("backbone.stem2.b")};
  CHECK(gradcheck(f, leaves, rng, 8) < 1e-4);
}

TEST_CASE("neck: projection shapes, zero-linearity and Jacobian") {
  Rng rng(3);
  ParamStore ps;
  TemporalNeck neck;
  NeckConfig ncfg;
  ncfg.d_model = 16;
  ncfg.num_layers = 1;
  ncfg.num_heads = 4;
  neck.init(ps, "neck", ncfg, {8, 8, 8, 8}, rng);

  RawPyramid raw;
  raw.s4 = randn_var({2, 16, 16, 8}, rng, 1.0, false);
  raw.s8 = randn_var({2, 8, 8, 8}, rng, 1.0, false);
  raw.s16 = randn_var({2, 4, 4, 8}, rng, 1.0, false);
  raw.s32 = randn_var({2, 2, 2, 8}, rng, 1.0, false);
  auto pyr = neck.project_inputs(raw);
  CHECK(pyr.f4->value.dim(3) == 16);
  CHECK(pyr.f32->value.dim(3) == 16);

  // zero input and zero bias: output minus (positional + level embedding) vanishes
  RawPyramid zero = raw;
  zero.s32 = make_const<double>(Tensor::zeros({2, 2, 2, 8}));
  init_constant(ps.get("neck.proj.p32.b"), 0.0);
  auto pz = neck.project_inputs(zero);
  Tensor expected = sinusoidal_position_encoding(2, 2, 2, 16);
  Var le = ps.get("neck.level_embed");
  for (Index i = 0; i < pz.f32->value.size(); ++i) {
    const Index c = i % 16;
    CHECK(pz.f32->value[i] - expected[i] - le->value.at((Index)3, c) == doctest::Approx(0.0).epsilon(1e-12));
  }

  // projection Jacobian w.r.t. the input equals the projection matrix
  auto x = randn_var({1, 2, 2, 8}, rng, 1.0, true);
  RawPyramid raw1;
  raw1.s4 = randn_var({1, 16, 16, 8}, rng, 1.0, false);
  raw1.s8 = randn_var({1, 8, 8, 8}, rng, 1.0, false);
  raw1.s16 = randn_var({1, 4, 4, 8}, rng, 1.0, false);
  raw1.s32 = x;
  auto f = [&] { return sum(neck.project_inputs(raw1).f32); };
  CHECK(gradcheck(f, {x, ps.get("neck.proj.p32.w")}, rng, 10) < 1e-6);
  // column sums of W are d(sum)/dx for every pixel
  x->zero_grad();
  auto out = f();
  backward(out);
  Var w = ps.get("neck.proj.p32.w");
  for (Index c = 0; c < 8; ++c) {
    double colsum = 0;
    for (Index d = 0; d < 16; ++d) colsum += w->value.at(c, d);
    CHECK(x->grad[c] == doctest::Approx(colsum).epsilon(1e-10));
  }
}

TEST_CASE("neck: deformable collapse to cross-level mean at the reference point") {
  Rng rng(4);
  ParamStore ps;
  TemporalNeck neck;
  NeckConfig ncfg;
  ncfg.d_model = 8;
  ncfg.num_layers = 1;
  ncfg.num_heads = 1;
  ncfg.deform_points = 1;  // K=1
  neck.init(ps, "neck", ncfg, {8, 8, 8, 8}, rng);

  // offsets == 0, uniform weights, identity value/output projections
  init_constant(ps.get("neck.deform0.offsets.w"), 0.0);
  init_constant(ps.get("neck.deform0.offsets.b"), 0.0);
  init_constant(ps.get("neck.deform0.attn.w"), 0.0);
  init_constant(ps.get("neck.deform0.attn.b"), 0.0);
  for (const char* n : {"neck.deform0.value", "neck.deform0.out"}) {
    Var w = ps.get(std::string(n) + ".w");
    init_constant(w, 0.0);
    for (Index i = 0; i < 8; ++i) w->value.at(i, i) = 1.0;
    init_constant(ps.get(std::string(n) + ".b"), 0.0);
  }

  FeaturePyramid pyr = random_pyramid(2, 64, 64, 8, rng);
  FeaturePyramid out = neck.deformable_attention_core(pyr, 0);

  // check an f32 pixel: residual + mean over the three levels at its location
  const Index t = 1, y = 1, x = 0;
  const double nx = (0 + 0.5) / 2.0, ny = (1 + 0.5) / 2.0;
  double expect0 = pyr.f32->value.at(t, y, x, (Index)0);
  double mean = (bilinear_at(pyr.f32->value, t, ny, nx) + bilinear_at(pyr.f16->value, t, ny, nx) +
                 bilinear_at(pyr.f8->value, t, ny, nx)) /
                3.0;
  CHECK(out.f32->value.at(t, y, x, (Index)0) == doctest::Approx(expect0 + mean).epsilon(1e-10));
}

TEST_CASE("neck: deformable layer never mixes frames") {
  Rng rng(5);
  ParamStore ps;
  TemporalNeck neck;
  NeckConfig ncfg;
  ncfg.d_model = 8;
  ncfg.num_layers = 1;
  ncfg.num_heads = 2;
  ncfg.deform_points = 2;
  neck.init(ps, "neck", ncfg, {8, 8, 8, 8}, rng);

  Rng rng2(77);
  FeaturePyramid a = random_pyramid(3, 64, 64, 8, rng2);
  FeaturePyramid b = a;
  Tensor f16b = a.f16->value;
  const Index fsz = f16b.size() / 3;
  for (Index i = 0; i < fsz; ++i) f16b[1 * fsz + i] += 0.5;  // perturb frame 1 only
  b.f16 = make_const<double>(f16b);

  FeaturePyramid oa = neck.deformable_attention_layer(a, 0);
  FeaturePyramid ob = neck.deformable_attention_layer(b, 0);
  for (const auto& [va, vb] : {std::pair{oa.f32, ob.f32}, {oa.f16, ob.f16}, {oa.f8, ob.f8}}) {
    const Index sz = va->value.size() / 3;
    for (Index i = 0; i < sz; ++i) {
      CHECK(va->value[0 * sz + i] == vb->value[0 * sz + i]);  // exact zeros
      CHECK(va->value[2 * sz + i] == vb->value[2 * sz + i]);
    }
  }
}

TEST_CASE("neck: deformable offset/weight gradients match finite differences (1e-3)") {
  Rng rng(6);
  ParamStore ps;
  TemporalNeck neck;
  NeckConfig ncfg;
  ncfg.d_model = 8;
  ncfg.num_layers = 1;
  ncfg.num_heads = 2;
  ncfg.deform_points = 2;
  neck.init(ps, "neck", ncfg, {8, 8, 8, 8}, rng);
  // push sampling locations off the integer grid
  Var ob = ps.get("neck.deform0.offsets.b");
  for (Index i = 0; i < ob->value.size(); ++i) ob->value[i] = 0.3 + 0.4 * rng.uniform();

  FeaturePyramid pyr = random_pyramid(1, 32, 32, 8, rng);
  auto f = [&] {
    FeaturePyramid out = neck.deformable_attention_layer(pyr, 0);
    return add(sum(square(out.f32)), add(sum(square(out.f16)), sum(square(out.f8))));
  };
  std::vector<Var> leaves = {ps.get("neck.deform0.offsets.b"), ps.get("neck.deform0.offsets.w"),
                             ps.get("neck.deform0.attn.w"), ps.get("neck.deform0.value.w"),
                             ps.get("neck.deform0.ffn.fc1.w")};
  CHECK(gradcheck(f, leaves, rng, 8, 1e-6) < 1e-3);
}

TEST_CASE("neck: temporal attention respects cell locality and passes f8/f4 through") {
  Rng rng(7);
  ParamStore ps;
  TemporalNeck neck;
  NeckConfig ncfg;
  ncfg.d_model = 8;
  ncfg.num_layers = 1;
  ncfg.num_heads = 2;
  ncfg.temporal_grid = 2;
  neck.init(ps, "neck", ncfg, {8, 8, 8, 8}, rng);

  // 128x128 -> H32 = 4, grid 2 -> 4 cells
  Rng rng2(99);
  FeaturePyramid a = random_pyramid(2, 128, 128, 8, rng2);
  FeaturePyramid b = a;
  Tensor f32b = a.f32->value;
  f32b.at((Index)0, (Index)0, (Index)0, (Index)0) += 1.0;  // cell (0,0)
  b.f32 = make_const<double>(f32b);

  FeaturePyramid oa = neck.temporal_attention_layer(a, 0);
  FeaturePyramid ob = neck.temporal_attention_layer(b, 0);

  // f8 and f4 pass through bit-exactly (same nodes)
  CHECK(oa.f8.get() == a.f8.get());
  CHECK(oa.f4.get() == a.f4.get());

  // pixels in cell (1,1) of f32 and the matching f16 region are untouched
  for (Index t = 0; t < 2; ++t)
    for (Index y = 2; y < 4; ++y)
      for (Index x = 2; x < 4; ++x)
        for (Index d = 0; d < 8; ++d)
          CHECK(oa.f32->value.at(t, y, x, d) == ob.f32->value.at(t, y, x, d));
  for (Index t = 0; t < 2; ++t)
    for (Index y = 4; y < 8; ++y)
      for (Index x = 4; x < 8; ++x)
        for (Index d = 0; d < 8; ++d)
          CHECK(oa.f16->value.at(t, y, x, d) == ob.f16->value.at(t, y, x, d));

  // same-cell, different-frame pixels are influenced (temporally global)
  bool influences_other_frame = false;
  for (Index d = 0; d < 8; ++d)
    influences_other_frame |=
        oa.f32->value.at((Index)1, (Index)0, (Index)0, d) != ob.f32->value.at((Index)1, (Index)0, (Index)0, d);
  CHECK(influences_other_frame);

  // grid misfit is rejected: H/32 = 2 not divisible by g = 4
  NeckConfig bad = ncfg;
  bad.temporal_grid = 4;
  ParamStore ps2;
  TemporalNeck neck2;
  Rng rng3(1);
  neck2.init(ps2, "neck2", bad, {8, 8, 8, 8}, rng3);
  FeaturePyramid small = random_pyramid(1, 64, 64, 8, rng2);
  CHECK_THROWS(neck2.temporal_attention_layer(small, 0));
}

TEST_CASE("neck: temporal layer gradients match finite differences (1e-3)") {
  Rng rng(8);
  ParamStore ps;
  TemporalNeck neck;
  NeckConfig ncfg;
  ncfg.d_model = 8;
  ncfg.num_layers = 1;
  ncfg.num_heads = 2;
  neck.init(ps, "neck", ncfg, {8, 8, 8, 8}, rng);
  FeaturePyramid pyr = random_pyramid(2, 64, 64, 8, rng);
  auto f = [&] {
    FeaturePyramid out = neck.temporal_attention_layer(pyr, 0);
    return add(sum(square(out.f32)), sum(square(out.f16)));
  };
  std::vector<Var> leaves = {ps.get("neck.temporal0.mha.q.w"), ps.get("neck.temporal0.mha.o.w"),
                             ps.get("neck.temporal0.ffn.fc1.w"), ps.get("neck.temporal0.ln1.gamma")};
  CHECK(gradcheck(f, leaves, rng, 8, 1e-6) < 1e-3);
}

TEST_CASE("neck forward: contract shapes, finiteness, ablation to projection") {
  Rng rng(9);
  ParamStore ps;
  TemporalNeck neck;
  NeckConfig ncfg;
  ncfg.d_model = 16;
  ncfg.num_layers = 2;
  ncfg.num_heads = 4;
  neck.init(ps, "neck", ncfg, {8, 8, 8, 8}, rng);

  RawPyramid raw;
  raw.s4 = randn_var({2, 16, 16, 8}, rng, 1.0, false);
  raw.s8 = randn_var({2, 8, 8, 8}, rng, 1.0, false);
  raw.s16 = randn_var({2, 4, 4, 8}, rng, 1.0, false);
  raw.s32 = randn_var({2, 2, 2, 8}, rng, 1.0, false);
  auto pyr = neck.forward(raw);
  CHECK(pyr.f4->value.shape() == Shape{2, 16, 16, 16});
  CHECK(pyr.f8->value.shape() == Shape{2, 8, 8, 16});
  CHECK(pyr.f16->value.shape() == Shape{2, 4, 4, 16});
  CHECK(pyr.f32->value.shape() == Shape{2, 2, 2, 16});
  for (const Var& f : {pyr.f4, pyr.f8, pyr.f16, pyr.f32}) CHECK(f->value.all_finite());

  // num_layers = 0 reduces to projection + lateral fusion
  ParamStore ps0;
  TemporalNeck neck0;
  NeckConfig cfg0 = ncfg;
  cfg0.num_layers = 0;
  Rng rng0(9);
  neck0.init(ps0, "neck", cfg0, {8, 8, 8, 8}, rng0);
  auto p0 = neck0.forward(raw);
  auto proj = neck0.project_inputs(raw);
  for (Index i = 0; i < p0.f32->value.size(); ++i) CHECK(p0.f32->value[i] == proj.f32->value[i]);
  for (Index i = 0; i < p0.f8->value.size(); ++i) CHECK(p0.f8->value[i] == proj.f8->value[i]);
}

TEST_CASE("neck forward: end-to-end gradient through one layer (1e-3)") {
  Rng rng(10);
  ParamStore ps;
  TemporalNeck neck;
  NeckConfig ncfg;
  ncfg.d_model = 8;
  ncfg.num_layers = 1;
  ncfg.num_heads = 2;
  ncfg.temporal_grid = 1;  // 32x32 input -> a single 1x1 cell on F32
  neck.init(ps, "neck", ncfg, {8, 8, 8, 8}, rng);
  Var ob = ps.get("neck.deform0.offsets.b");
  for (Index i = 0; i < ob->value.size(); ++i) ob->value[i] = 0.25 + 0.5 * rng.uniform();

  RawPyramid raw;
  raw.s4 = randn_var({2, 8, 8, 8}, rng, 0.7, true);
  raw.s8 = randn_var({2, 4, 4, 8}, rng, 0.7, false);
  raw.s16 = randn_var({2, 2, 2, 8}, rng, 0.7, false);
  raw.s32 = randn_var({2, 1, 1, 8}, rng, 0.7, false);
  auto f = [&] {
    auto pyr = neck.forward(raw);
    return add(sum(square(pyr.f4)), sum(square(pyr.f32)));
  };
  std::vector<Var> leaves = {raw.s4, ps.get("neck.proj.p8.w"), ps.get("neck.f4_fuse.w"),
                             ps.get("neck.deform0.value.w"), ps.get("neck.temporal0.mha.v.w")};
  CHECK(gradcheck(f, leaves, rng, 6, 1e-6) < 1e-3);
}
