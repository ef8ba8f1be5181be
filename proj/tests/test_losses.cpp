#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "tarvis/losses.hpp"

using namespace tarvis;
using tarvis::testing::randn_var;

namespace {

/// Exhaustive assignment oracle: minimum total cost over all injections of
/// columns into rows.
double brute_force_min_cost(const Tensor& cost) {
  const Index I = cost.dim(0), G = cost.dim(1);
  std::vector<bool> used((std::size_t)I, false);
  double best = 1e300;
  std::function<void(Index, double)> rec = [&](Index g, double acc) {
    if (g == G) {
      best = std::min(best, acc);
      return;
    }
    for (Index i = 0; i < I; ++i) {
      if (used[(std::size_t)i]) continue;
      used[(std::size_t)i] = true;
      rec(g + 1, acc + cost.at(i, g));
      used[(std::size_t)i] = false;
    }
  };
  rec(0, 0.0);
  return best;
}

double assignment_cost(const Tensor& cost, const std::vector<std::pair<Index, Index>>& pairs) {
  double s = 0;
  for (auto [i, g] : pairs) s += cost.at(i, g);
  return s;
}

/// GT scene: two discs on a stuff background over T frames.
TaskSample two_disc_sample(Task task, Index T, Index H, Index W) {
  TaskSample s;
  s.task = task;
  s.clip.rgb = Tensor({T, H, W, 3});
  s.ann.frames.resize((std::size_t)T);
  for (Index t = 0; t < T; ++t) {
    PanopticFrame& fr = s.ann.frames[(std::size_t)t];
    fr.height = H;
    fr.width = W;
    fr.segment_map.assign((std::size_t)(H * W), 1);
    auto put_disc = [&](Index cy, Index cx, Index r, std::uint16_t id) {
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
            fr.segment_map[(std::size_t)(y * W + x)] = id;
    };
    put_disc(H / 4 + t, W / 4 + t, H / 6, 2);
    put_disc(3 * H / 4 - t, 3 * W / 4 - t, H / 6, 3);
    fr.segments.push_back({1, 10, false, -1});
    fr.segments.push_back({2, 1, true, 0});
    fr.segments.push_back({3, 2, true, 1});
  }
  s.target_tracks = {0, 1};
  return s;
}

/// A fabricated decoder output whose logits saturate toward the ground truth.
SegmentationOutput perfect_output(const TaskSample& s, const std::vector<int>& thing_order,
                                  Index num_sem, bool with_stuff, double scale) {
  const Index T = (Index)s.ann.frames.size();
  const Index H = s.ann.frames[0].height, W = s.ann.frames[0].width;
  const Index H4 = H / 4, W4 = W / 4;
  const Index I = 4;
  SegmentationOutput seg;
  seg.T = T;
  seg.H4 = H4;
  seg.W4 = W4;
  for (Index c = 0; c < num_sem; ++c) seg.roles.push_back({QueryRole::Semantic, (int)c + 1, -1});
  for (Index i = 0; i < I; ++i) seg.roles.push_back({QueryRole::Instance, (int)i, -1});
  seg.roles.push_back({QueryRole::Background, -1, -1});
  const Index N = num_sem + I + 1;

  auto gt = build_track_gt(s.ann, s.target_tracks, thing_order);
  std::vector<Index> sem_of_class;  // thing class row for semantic planting
  Tensor ml({N, T, H4, W4});
  ml.array().setConstant(-scale);
  auto plant = [&](Index row, const std::vector<std::uint8_t>& mask) {
    for (Index t = 0; t < T; ++t)
      for (Index y4 = 0; y4 < H4; ++y4)
        for (Index x4 = 0; x4 < W4; ++x4) {
          // a stride-4 cell is on when its center full-res pixel is on
          const Index y = y4 * 4 + 2, x = x4 * 4 + 2;
          if (mask[(std::size_t)((t * H + y) * W + x)])
            ml.at(row, t, y4, x4) = scale;
        }
  };
  // instances 0..1 match tracks 0..1; semantic rows follow the class layout
  for (std::size_t g = 0; g < gt.size(); ++g) plant(num_sem + (Index)g, gt[g].masks);
  if (with_stuff) {
    for (Index c = 0; c < num_sem; ++c) {
      std::vector<std::uint8_t> m((std::size_t)(T * H * W), 0);
      for (Index t = 0; t < T; ++t) {
        auto order = std::vector<int>{1, 2, 10};
        auto sem = semantic_index_map(s.ann.frames[(std::size_t)t], order);
        for (Index i = 0; i < H * W; ++i)
          if (sem[(std::size_t)i] == c) m[(std::size_t)(t * H * W + i)] = 1;
      }
      plant(c, m);
    }
  }
  // background query mask: complement of the things
  {
    std::vector<std::uint8_t> m = non_object_mask(gt, T, H, W);
    plant(num_sem + I, m);
  }
  Tensor cls({I, num_sem + 1});
  cls.array().setConstant(-scale);
  for (std::size_t g = 0; g < gt.size(); ++g) cls.at((Index)(num_sem + 0) * 0 + (Index)g, gt[g].class_idx) = scale;
  for (Index i = (Index)gt.size(); i < I; ++i) cls.at(i, num_sem) = scale;  // background column

  LayerOutput lo;
  lo.mask_logits = make_var<double>(ml, true);
  lo.class_logits = make_var<double>(cls, true);
  seg.layers.push_back(lo);
  return seg;
}

TrainConfig test_train_cfg() {
  TrainConfig cfg;
  cfg.num_points = 256;
  return cfg;
}

}  // namespace

TEST_CASE("hungarian: inspection cases") {
  Tensor c = Tensor::from({2, 2}, {1, 2, 3, 1});
  auto pairs = hungarian_match(c);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == std::pair<Index, Index>{0, 0});
  CHECK(pairs[1] == std::pair<Index, Index>{1, 1});
  CHECK(assignment_cost(c, pairs) == 2.0);

  Tensor d = Tensor::full({4, 4}, 1.0);
  for (Index i = 0; i < 4; ++i) d.at(i, i) = 0.0;
  auto id = hungarian_match(d);
  for (auto [i, g] : id) CHECK(i == g);

  CHECK_THROWS(hungarian_match(Tensor::zeros({2, 3})));  // G > I
  Tensor nf = Tensor::zeros({2, 2});
  nf.at((Index)0, (Index)0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS(hungarian_match(nf));
}

TEST_CASE("hungarian equals the exhaustive permutation oracle (square and rectangular)") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor c({6, 6});
    for (Index i = 0; i < c.size(); ++i) c[i] = rng.uniform(-5, 5);
    auto pairs = hungarian_match(c);
    CHECK(pairs.size() == 6);
    CHECK(assignment_cost(c, pairs) == doctest::Approx(brute_force_min_cost(c)).epsilon(1e-12));
  }
  for (int trial = 0; trial < 300; ++trial) {
    Tensor c({7, (Index)1 + (Index)(trial % 5)});
    for (Index i = 0; i < c.size(); ++i) c[i] = rng.uniform(0, 10);
    auto pairs = hungarian_match(c);
    CHECK((Index)pairs.size() == c.dim(1));
    CHECK(assignment_cost(c, pairs) == doctest::Approx(brute_force_min_cost(c)).epsilon(1e-12));
  }
}

TEST_CASE("dice: closed-form spot values and symmetry") {
  // p == 0 against half-ones over 100 points: 1 - 1/51
  auto zero_logits = make_var<double>(Tensor::full({100}, -1000.0), true);
  Tensor half({100});
  for (Index i = 0; i < 50; ++i) half[i] = 1.0;
  CHECK(dice_loss(zero_logits, half)->value[0] == doctest::Approx(1.0 - 1.0 / 51.0).epsilon(1e-9));

  // saturated correct prediction: loss -> 0
  Tensor gt({64});
  Tensor logits({64});
  Rng rng(3);
  for (Index i = 0; i < 64; ++i) {
    gt[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    logits[i] = gt[i] > 0.5 ? 1000.0 : -1000.0;
  }
  CHECK(dice_loss(make_var<double>(logits, true), gt)->value[0] == doctest::Approx(0.0).epsilon(1e-9));

  // symmetric in (p, g) when p is binary
  Tensor a({10}), b({10});
  for (Index i = 0; i < 10; ++i) {
    a[i] = i < 4 ? 1.0 : 0.0;
    b[i] = i % 2 == 0 ? 1.0 : 0.0;
  }
  Tensor a_logits({10}), b_logits({10});
  for (Index i = 0; i < 10; ++i) {
    a_logits[i] = a[i] > 0.5 ? 1000.0 : -1000.0;
    b_logits[i] = b[i] > 0.5 ? 1000.0 : -1000.0;
  }
  CHECK(dice_loss(make_var<double>(a_logits), b)->value[0] ==
        doctest::Approx(dice_loss(make_var<double>(b_logits), a)->value[0]).epsilon(1e-12));
}

TEST_CASE("bce and mce: analytic values and independent recomputation") {
  // perfect one-hot logits -> 0
  Tensor gt({32});
  Tensor logits({32});
  Rng rng(5);
  for (Index i = 0; i < 32; ++i) {
    gt[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    logits[i] = gt[i] > 0.5 ? 20.0 : -20.0;
  }
  CHECK(bce_loss(make_var<double>(logits, true), gt)->value[0] < 1e-3);

  // uniform logits, C=5 -> ln 5
  auto uni = make_var<double>(Tensor::zeros({48, 5}), true);
  std::vector<Index> labels(48);
  for (Index i = 0; i < 48; ++i) labels[(std::size_t)i] = i % 5;
  CHECK(mce_loss(uni, labels)->value[0] == doctest::Approx(std::log(5.0)).epsilon(1e-9));

  // random case vs an independent scalar recomputation
  auto rl = randn_var({40}, rng);
  Tensor rg({40});
  for (Index i = 0; i < 40; ++i) rg[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  double expect = 0;
  for (Index i = 0; i < 40; ++i) {
    const double x = rl->value[i];
    const double p = 1.0 / (1.0 + std::exp(-x));
    expect += -(rg[i] * std::log(p) + (1 - rg[i]) * std::log(1 - p));
  }
  expect /= 40;
  CHECK(bce_loss(rl, rg)->value[0] == doctest::Approx(expect).epsilon(1e-6));

  auto rc = randn_var({16, 7}, rng);
  std::vector<Index> rlab(16);
  for (Index i = 0; i < 16; ++i) rlab[(std::size_t)i] = rng.uniform_int(7);
  double mexpect = 0;
  for (Index i = 0; i < 16; ++i) {
    double z = 0;
    for (Index c = 0; c < 7; ++c) z += std::exp(rc->value.at(i, c));
    mexpect += std::log(z) - rc->value.at(i, rlab[(std::size_t)i]);
  }
  mexpect /= 16;
  CHECK(mce_loss(rc, rlab)->value[0] == doctest::Approx(mexpect).epsilon(1e-6));
}

TEST_CASE("sample_supervision_points: uniform mode, exact count, hard-negative focus") {
  Rng rng(7);
  PointSampleConfig cfg{200, 3.0, 0.0};
  Tensor flat = Tensor::zeros({2, 8, 8});
  Tensor pts = sample_supervision_points(flat, 32, 32, cfg, rng);
  CHECK(pts.dim(0) == 200);
  for (Index i = 0; i < 200; ++i) {
    CHECK(pts.at(i, (Index)0) < 2);
    CHECK(pts.at(i, (Index)1) < 8);  // logit-grid coordinates
    CHECK(pts.at(i, (Index)2) < 8);
  }

  // equal logits: importance mode still returns the exact count
  cfg.importance_ratio = 0.75;
  Tensor pts2 = sample_supervision_points(flat, 32, 32, cfg, rng);
  CHECK(pts2.dim(0) == 200);

  // planted decision boundary: top half |logit| = 0, bottom half = 100
  Tensor logits({1, 8, 8});
  for (Index y = 0; y < 8; ++y)
    for (Index x = 0; x < 8; ++x) logits.at((Index)0, y, x) = y < 4 ? 0.0 : 100.0;
  Tensor pts3 = sample_supervision_points(logits, 32, 32, cfg, rng);
  Index in_band = 0;
  for (Index i = 0; i < 200; ++i)
    if (pts3.at(i, (Index)1) < 4) ++in_band;  // the uncertain half
  CHECK(in_band >= 150);  // at least the importance fraction
}

TEST_CASE("vis_cost_matrix: planted optimum, zero weights, independent recomputation") {
  const Index T = 1, H = 32, W = 32, H4 = 8, W4 = 8;
  TaskSample s = two_disc_sample(Task::VIS, T, H, W);
  auto gt = build_track_gt(s.ann, s.target_tracks, {1, 2});

  // mask logits: row 0 matches track 1, row 1 matches track 0
  Tensor ml({2, T, H4, W4});
  ml.array().setConstant(-30.0);
  for (Index y4 = 0; y4 < H4; ++y4)
    for (Index x4 = 0; x4 < W4; ++x4) {
      const Index y = y4 * 4 + 2, x = x4 * 4 + 2;
      if (gt[1].masks[(std::size_t)(y * W + x)]) ml.at((Index)0, (Index)0, y4, x4) = 30.0;
      if (gt[0].masks[(std::size_t)(y * W + x)]) ml.at((Index)1, (Index)0, y4, x4) = 30.0;
    }
  Tensor cls({2, 3});
  cls.array().setConstant(-10.0);
  cls.at((Index)0, (Index)1) = 10.0;  // row 0 -> class idx 1 (track 1's class)
  cls.at((Index)1, (Index)0) = 10.0;

  Rng rng(9);
  PointSampleConfig pcfg{128, 3.0, 0.0};
  std::vector<Tensor> row_pts;
  for (Index i = 0; i < 2; ++i) {
    Tensor row({T, H4, W4}, ml.array().segment(i * T * H4 * W4, T * H4 * W4));
    row_pts.push_back(sample_supervision_points(row, H, W, pcfg, rng));
  }
  MatchWeights w;
  Tensor cost = vis_cost_matrix(ml, cls, gt, row_pts, H, W, w);
  auto pairs = hungarian_match(cost);
  // the crossed assignment is optimal
  CHECK(pairs[0] == std::pair<Index, Index>{1, 0});
  CHECK(pairs[1] == std::pair<Index, Index>{0, 1});
  CHECK(cost.at((Index)0, (Index)1) < cost.at((Index)0, (Index)0));

  MatchWeights zero{0, 0, 0};
  Tensor zc = vis_cost_matrix(ml, cls, gt, row_pts, H, W, zero);
  for (Index i = 0; i < zc.size(); ++i) CHECK(zc[i] == 0.0);

  // independent recomputation of one entry
  const Index i = 0, g = 1;
  const Tensor& pts = row_pts[(std::size_t)i];
  double bce = 0, inter = 0, psum = 0, gsum = 0, prob;
  {
    double m = std::max({cls.at(i, (Index)0), cls.at(i, (Index)1), cls.at(i, (Index)2)});
    double z = 0;
    for (Index c = 0; c < 3; ++c) z += std::exp(cls.at(i, c) - m);
    prob = std::exp(cls.at(i, gt[(std::size_t)g].class_idx) - m) / z;
  }
  for (Index p = 0; p < pts.dim(0); ++p) {
    const Index t = (Index)pts.at(p, (Index)0);
    const Index y4 = (Index)pts.at(p, (Index)1), x4 = (Index)pts.at(p, (Index)2);
    const double x = ml.at(i, t, y4, x4);
    const double gv = gt[(std::size_t)g].masks[(std::size_t)((t * H + (y4 * 4 + 2)) * W + (x4 * 4 + 2))];
    bce += std::max(x, 0.0) - x * gv + std::log1p(std::exp(-std::abs(x)));
    const double pr = 1.0 / (1.0 + std::exp(-x));
    inter += pr * gv;
    psum += pr;
    gsum += gv;
  }
  bce /= double(pts.dim(0));
  const double dice = 1.0 - (2 * inter + 1) / (psum + gsum + 1);
  CHECK(cost.at(i, g) == doctest::Approx(w.cls * (-prob) + w.bce * bce + w.dice * dice).epsilon(1e-6));
}

TEST_CASE("vis_loss: zero tracks leave only background terms; perfect prediction is tiny") {
  TrainConfig cfg = test_train_cfg();
  TaskSample s = two_disc_sample(Task::VIS, 1, 32, 32);

  // no ground-truth tracks at all
  TaskSample empty = s;
  empty.target_tracks.clear();
  SegmentationOutput seg = perfect_output(empty, {1, 2}, 2, false, 20.0);
  Rng rng(1);
  auto res = vis_loss(seg, empty, {1, 2}, cfg, rng);
  CHECK(res.report.terms.semantic_mce == 0.0);
  CHECK(res.report.terms.mask_bce >= 0.0);  // background query mask term
  CHECK(res.total->value[0] == doctest::Approx(res.report.total).epsilon(1e-6));

  // with soft logits the background-class CE is visibly positive
  SegmentationOutput soft = perfect_output(empty, {1, 2}, 2, false, 2.0);
  Rng rng_soft(8);
  auto soft_res = vis_loss(soft, empty, {1, 2}, cfg, rng_soft);
  CHECK(soft_res.report.terms.cls > 0.0);

  // saturated perfect prediction
  SegmentationOutput good = perfect_output(s, {1, 2}, 2, false, 20.0);
  Rng rng2(2);
  auto perfect = vis_loss(good, s, {1, 2}, cfg, rng2);
  CHECK(perfect.total->value[0] < 2e-3);

  // gradients exist and are finite
  backward(perfect.total);
  CHECK(good.layers[0].mask_logits->has_grad());
  CHECK(good.layers[0].mask_logits->grad.all_finite());
}

TEST_CASE("vis_loss: invariant under permuting instance queries") {
  TrainConfig cfg = test_train_cfg();
  TaskSample s = two_disc_sample(Task::VIS, 2, 32, 32);
  Rng rr(31);
  SegmentationOutput seg = perfect_output(s, {1, 2}, 2, false, 3.0);
  // blur the planted logits so matching is non-trivial but unambiguous
  for (Index i = 0; i < seg.layers[0].mask_logits->value.size(); ++i)
    seg.layers[0].mask_logits->value[i] += 0.3 * rr.normal();

  SegmentationOutput per = seg;
  const Index N = seg.layers[0].mask_logits->value.dim(0);
  const Index plane = seg.layers[0].mask_logits->value.size() / N;
  std::vector<Index> perm = {0, 1, 4, 5, 2, 3, 6};  // swap instance slots (0,1) <-> (2,3)
  Tensor pm({N, seg.T, seg.H4, seg.W4});
  for (Index r = 0; r < N; ++r)
    pm.array().segment(r * plane, plane) =
        seg.layers[0].mask_logits->value.array().segment(perm[(std::size_t)r] * plane, plane);
  Tensor pc({4, 3});
  const Index iperm[4] = {2, 3, 0, 1};
  for (Index i = 0; i < 4; ++i)
    for (Index c = 0; c < 3; ++c) pc.at(i, c) = seg.layers[0].class_logits->value.at(iperm[i], c);
  per.layers[0].mask_logits = make_var<double>(pm, true);
  per.layers[0].class_logits = make_var<double>(pc, true);

  Rng rng_a(5), rng_b(5);
  auto a = vis_loss(seg, s, {1, 2}, cfg, rng_a);
  auto b = vis_loss(per, s, {1, 2}, cfg, rng_b);
  CHECK(a.total->value[0] == doctest::Approx(b.total->value[0]).epsilon(1e-12));
}

TEST_CASE("vps_loss: adds a semantic term; perfect prediction stays tiny") {
  TrainConfig cfg = test_train_cfg();
  TaskSample s = two_disc_sample(Task::VPS, 1, 32, 32);
  SegmentationOutput seg = perfect_output(s, {1, 2}, 3, true, 20.0);
  Rng rng(3);
  auto res = vps_loss(seg, s, {1, 2, 10}, {1, 2}, cfg, rng);
  CHECK(res.report.terms.semantic_mce >= 0.0);
  CHECK(res.report.terms.semantic_mce < 1e-3);
  CHECK(res.total->value[0] < 2e-3);
  CHECK(res.total->value[0] == doctest::Approx(res.report.total).epsilon(1e-6));
}

TEST_CASE("vos_pet_loss: identity correspondence, background partition, perfect case") {
  TrainConfig cfg = test_train_cfg();
  TaskSample s = two_disc_sample(Task::VOS, 2, 32, 32);
  const Index T = 2, H = 32, W = 32, H4 = 8, W4 = 8;
  auto gt = build_track_gt(s.ann, s.target_tracks, {});

  const Index q_o = 2, O = 2, B = 4;
  SegmentationOutput seg;
  seg.T = T;
  seg.H4 = H4;
  seg.W4 = W4;
  for (Index o = 0; o < O; ++o)
    for (Index qq = 0; qq < q_o; ++qq) seg.roles.push_back({QueryRole::Object, (int)o, (int)qq});
  for (Index b = 0; b < B; ++b) seg.roles.push_back({QueryRole::Background, (int)b, 0});

  Tensor ml({O * q_o + B, T, H4, W4});
  ml.array().setConstant(-20.0);
  auto plant = [&](Index row, const std::vector<std::uint8_t>& mask) {
    for (Index t = 0; t < T; ++t)
      for (Index y4 = 0; y4 < H4; ++y4)
        for (Index x4 = 0; x4 < W4; ++x4)
          if (mask[(std::size_t)((t * H + y4 * 4 + 2) * W + x4 * 4 + 2)]) ml.at(row, t, y4, x4) = 20.0;
  };
  plant(0, gt[0].masks);  // only one of each object's sub-queries fires; max covers it
  plant(2, gt[1].masks);
  auto bg = non_object_mask(gt, T, H, W);
  plant(4, bg);
  LayerOutput lo;
  lo.mask_logits = make_var<double>(ml, true);
  seg.layers.push_back(lo);

  Rng rng(4);
  auto res = vos_pet_loss(seg, s, cfg, rng);
  CHECK(res.report.terms.cls == 0.0);  // no Hungarian matching, no classification
  CHECK(res.total->value[0] < 2e-3);

  backward(res.total);
  CHECK(lo.mask_logits->grad.all_finite());

  // BCE targets are consistent: no point is supervised as both object and background
  for (std::size_t i = 0; i < bg.size(); ++i) {
    int owners = bg[i] ? 1 : 0;
    for (const auto& g : gt) owners += g.masks[i] ? 1 : 0;
    CHECK(owners >= 1);
  }
}

TEST_CASE("vos_pet_loss: full-frame object degenerates gracefully") {
  TrainConfig cfg = test_train_cfg();
  TaskSample s = two_disc_sample(Task::VOS, 1, 32, 32);
  // make track 0 cover the entire frame
  for (auto& fr : s.ann.frames)
    for (auto& id : fr.segment_map) id = 2;
  for (auto& fr : s.ann.frames) {
    fr.segments.clear();
    fr.segments.push_back({2, 1, true, 0});
  }
  s.target_tracks = {0};

  SegmentationOutput seg;
  seg.T = 1;
  seg.H4 = 8;
  seg.W4 = 8;
  seg.roles.push_back({QueryRole::Object, 0, 0});
  seg.roles.push_back({QueryRole::Background, 0, 0});
  Tensor ml({2, 1, 8, 8});
  ml.array().setConstant(0.0);
  ml.array().segment(0, 64).setConstant(20.0);   // object everywhere
  ml.array().segment(64, 64).setConstant(-20.0); // background nowhere
  LayerOutput lo;
  lo.mask_logits = make_var<double>(ml, true);
  seg.layers.push_back(lo);
  Rng rng(6);
  auto res = vos_pet_loss(seg, s, cfg, rng);
  CHECK(std::isfinite(res.total->value[0]));
  // background supervised on an empty set: only the eps-regularized dice remains
  CHECK(res.total->value[0] < 0.1);
}
