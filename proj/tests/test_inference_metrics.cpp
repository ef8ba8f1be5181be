#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "tarvis/metrics.hpp"
#include "tarvis/viz.hpp"

using namespace tarvis;

namespace {

std::vector<std::uint8_t> box_mask(Index H, Index W, Index y0, Index x0, Index y1, Index x1) {
  std::vector<std::uint8_t> m((std::size_t)(H * W), 0);
  for (Index y = y0; y < y1; ++y)
    for (Index x = x0; x < x1; ++x) m[(std::size_t)(y * W + x)] = 1;
  return m;
}

}  // namespace

TEST_CASE("window_video: schedule arithmetic and delay bound") {
  InferenceConfig cfg;
  cfg.t_clip = 12;
  cfg.t_ov = 6;
  auto w = window_video(24, cfg);
  REQUIRE(w.size() == 3);
  CHECK(w[0] == std::pair<Index, Index>{0, 12});
  CHECK(w[1] == std::pair<Index, Index>{6, 18});
  CHECK(w[2] == std::pair<Index, Index>{12, 24});

  // single window when the video fits in one clip
  CHECK(window_video(9, cfg).size() == 1);
  CHECK(window_video(12, cfg).size() == 1);

  // every frame covered; the structural delay bound is t_clip - t_ov - 1
  for (Index tv : {13, 20, 24, 37, 100}) {
    auto ws = window_video(tv, cfg);
    Index worst = 0;
    for (Index f = 0; f < tv; ++f) {
      Index first_end = -1;
      for (auto [s, e] : ws)
        if (f >= s && f < e) {
          first_end = e;
          break;
        }
      REQUIRE(first_end >= 0);
      if (f >= ws[0].second) worst = std::max(worst, first_end - 1 - f);
    }
    CHECK(worst <= cfg.t_clip - cfg.t_ov - 1);
  }
  // the spec schedule attains the bound exactly
  Index worst = 0;
  for (Index f = 12; f < 24; ++f) {
    for (auto [s, e] : w)
      if (f >= s && f < e) {
        worst = std::max(worst, e - 1 - f);
        break;
      }
  }
  CHECK(worst == 5);

  InferenceConfig bad;
  bad.t_clip = 4;
  bad.t_ov = 4;
  CHECK_THROWS(window_video(10, bad));
}

TEST_CASE("associate_instances: identity, disjoint, and oracle agreement") {
  const Index H = 16, W = 16;
  auto a = box_mask(H, W, 0, 0, 8, 8);
  auto b = box_mask(H, W, 8, 8, 16, 16);
  auto c = box_mask(H, W, 0, 8, 8, 16);

  std::vector<std::vector<std::vector<std::uint8_t>>> prev = {{a, a}, {b, b}, {c, c}};
  auto ident = associate_instances(prev, prev, 0.4);
  REQUIRE(ident.size() == 3);
  for (auto [n, p] : ident) CHECK(n == p);

  std::vector<std::vector<std::vector<std::uint8_t>>> far = {
      {box_mask(H, W, 0, 0, 2, 2), box_mask(H, W, 0, 0, 2, 2)}};
  CHECK(associate_instances({{b, b}}, far, 0.4).empty());  // disjoint -> fresh ids

  // 3x3 IoU case equals the exhaustive assignment
  std::vector<std::vector<std::vector<std::uint8_t>>> next = {{c, c}, {a, a}, {b, b}};
  Tensor iou({3, 3});
  for (Index n = 0; n < 3; ++n)
    for (Index p = 0; p < 3; ++p) iou.at(n, p) = stack_iou(next[(std::size_t)n], prev[(std::size_t)p]);
  double best = -1;
  std::vector<Index> perm = {0, 1, 2}, best_perm;
  std::sort(perm.begin(), perm.end());
  do {
    double s = 0;
    for (Index n = 0; n < 3; ++n) s += iou.at(n, perm[(std::size_t)n]);
    if (s > best) {
      best = s;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  auto got = associate_instances(prev, next, 0.0);
  double got_sum = 0;
  for (auto [n, p] : got) got_sum += iou.at(n, p);
  CHECK(got_sum == doctest::Approx(best).epsilon(1e-12));

  CHECK_THROWS(stack_iou({a, a}, {a}));  // frame-count mismatch
}

TEST_CASE("merge_semantic: mean on overlap, pass-through elsewhere, argmax can flip") {
  Rng rng(3);
  Tensor a({2, 4, 2, 2}), b({2, 4, 2, 2});
  for (Index i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
  }
  Tensor m = merge_semantic(a, b, 1, 2);
  for (Index c = 0; c < 2; ++c)
    for (Index t = 0; t < 4; ++t)
      for (Index i = 0; i < 4; ++i) {
        const Index at = (c * 4 + t) * 4 + i;
        if (t >= 1 && t < 3) {
          CHECK(m[at] == doctest::Approx(0.5 * (a[at] + b[at])).epsilon(1e-12));
        } else {
          CHECK(m[at] == b[at]);
        }
      }
  Tensor same = merge_semantic(a, a, 0, 4);
  for (Index i = 0; i < a.size(); ++i) CHECK(same[i] == doctest::Approx(a[i]).epsilon(1e-12));

  // averaging can flip the argmax relative to both inputs at a pixel
  Tensor x({2, 1, 1, 1}), y({2, 1, 1, 1});
  x[0] = 3.0, x[1] = 0.0;   // argmax 0
  y[0] = -10.0, y[1] = 1.0; // argmax 1
  Tensor z = merge_semantic(x, y, 0, 1);
  CHECK(z[0] < z[1]);       // mean argmax = 1, differs from x's argmax
  CHECK(x[0] > x[1]);
}

TEST_CASE("rle: round-trip and row-major convention") {
  std::vector<std::uint8_t> m = {0, 0, 1, 1, 1, 0, 1, 0};
  auto counts = rle_encode(m);
  CHECK(counts == std::vector<Index>{2, 3, 1, 1, 1});
  CHECK(rle_decode(counts, 8) == m);

  std::vector<std::uint8_t> ones = {1, 1, 1};
  CHECK(rle_encode(ones) == std::vector<Index>{0, 3});  // leading zero run

  Rng rng(5);
  std::vector<std::uint8_t> rnd(257);
  for (auto& v : rnd) v = rng.uniform() < 0.3;
  CHECK(rle_decode(rle_encode(rnd), 257) == rnd);
}

TEST_CASE("mask_iou and boundary m-measure spot values") {
  const Index H = 8, W = 8;
  auto a = box_mask(H, W, 0, 0, 4, 4);
  CHECK(mask_iou(a, a) == 1.0);
  CHECK(mask_iou({}, {}) == 1.0);  // both empty -> 1 by convention
  CHECK(mask_iou(a, box_mask(H, W, 4, 4, 8, 8)) == 0.0);
  // half-overlap squares: 8 / 24 = 1/3
  CHECK(mask_iou(box_mask(H, W, 0, 0, 4, 4), box_mask(H, W, 2, 0, 6, 4)) ==
        doctest::Approx(1.0 / 3.0));

  CHECK(boundary_f_measure(a, a, H, W, 1) == 1.0);
  CHECK(boundary_f_measure({}, {}, H, W, 1) == 1.0);
  // 1-pixel shift is forgiven at tolerance 1
  CHECK(boundary_f_measure(box_mask(H, W, 1, 0, 5, 4), a, H, W, 1) == doctest::Approx(1.0));
  // far shift with thin masks matches nothing
  CHECK(boundary_f_measure(box_mask(H, W, 0, 0, 1, 2), box_mask(H, W, 6, 6, 7, 8), H, W, 1) == 0.0);
}

TEST_CASE("id switches: perfect, swapped, and unmatched cases") {
  SceneConfig cfg;
  cfg.seed = 21;
  cfg.num_frames = 4;
  cfg.min_things = 2;
  cfg.max_things = 2;
  auto [clip, ann] = generate_scene(cfg);
  auto tracks = list_tracks(ann);
  REQUIRE(tracks.size() == 2);

  auto stack = [&](int tid) {
    std::vector<std::vector<std::uint8_t>> out;
    for (const auto& fr : ann.frames) {
      auto m = track_mask(fr, tid);
      bool any = false;
      for (auto v : m) any |= v != 0;
      out.push_back(any ? m : std::vector<std::uint8_t>());
    }
    return out;
  };

  std::vector<TrackResult> perfect(2);
  perfect[0] = {1, -1, -1.0, stack(tracks[0])};
  perfect[1] = {2, -1, -1.0, stack(tracks[1])};
  CHECK(id_switch_count(perfect, ann) == 0);

  // swap identities mid-video: two gt tracks each switch once
  std::vector<TrackResult> swapped = perfect;
  for (Index t = 2; t < 4; ++t) std::swap(swapped[0].masks[(std::size_t)t], swapped[1].masks[(std::size_t)t]);
  CHECK(id_switch_count(swapped, ann) == 2);

  // dropping middle frames leaves gaps, not switches
  std::vector<TrackResult> gappy = perfect;
  gappy[0].masks[1].clear();
  gappy[0].masks[2].clear();
  CHECK(id_switch_count(gappy, ann) == 0);
}

TEST_CASE("evaluate: ground truth against itself is a fixed point") {
  SceneConfig cfg;
  cfg.seed = 33;
  cfg.num_frames = 4;
  cfg.min_things = 2;
  cfg.max_things = 3;
  auto [clip, ann] = generate_scene(cfg);
  auto tracks = list_tracks(ann);

  VideoResult res;
  res.task = "vis";
  res.T = 4;
  res.H = cfg.height;
  res.W = cfg.width;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    TrackResult tr;
    tr.id = (int)i + 1;
    tr.class_id = track_class(ann, tracks[i]);
    tr.score = 1.0;
    for (const auto& fr : ann.frames) {
      auto m = track_mask(fr, tracks[i]);
      bool any = false;
      for (auto v : m) any |= v != 0;
      tr.masks.push_back(any ? m : std::vector<std::uint8_t>());
    }
    res.tracks.push_back(std::move(tr));
  }
  EvalReport rep = evaluate(res, ann, Task::VIS);
  CHECK(*rep.mean_iou == doctest::Approx(1.0));
  CHECK(*rep.boundary_f == doctest::Approx(1.0));
  CHECK(*rep.jf == doctest::Approx(1.0));
  CHECK(*rep.id_switches == 0);
  CHECK(*rep.vis_ap50 == doctest::Approx(1.0));

  // empty predictions score zero J against nonempty gt
  VideoResult empty;
  empty.task = "vis";
  empty.T = 4;
  empty.H = cfg.height;
  empty.W = cfg.width;
  EvalReport zr = evaluate(empty, ann, Task::VIS);
  CHECK(*zr.mean_iou == 0.0);
  CHECK(*zr.vis_ap50 == 0.0);

  // vps: gt panoptic frames against themselves
  VideoResult vps = res;
  vps.task = "vps";
  vps.panoptic = ann.frames;
  EvalReport vr = evaluate(vps, ann, Task::VPS);
  CHECK(*vr.semantic_miou == doctest::Approx(1.0));

  // metrics are invariant to relabeling prediction ids
  VideoResult relabeled = res;
  for (auto& tr : relabeled.tracks) tr.id += 700;
  EvalReport rl = evaluate(relabeled, ann, Task::VIS);
  CHECK(*rl.mean_iou == doctest::Approx(*rep.mean_iou));
  CHECK(*rl.id_switches == *rep.id_switches);
}

TEST_CASE("hand-built two-track AP50 matches manual computation") {
  SceneConfig cfg;
  cfg.seed = 44;
  cfg.num_frames = 2;
  cfg.min_things = 2;
  cfg.max_things = 2;
  auto [clip, ann] = generate_scene(cfg);
  auto tracks = list_tracks(ann);
  REQUIRE(tracks.size() == 2);

  auto stack = [&](int tid) {
    std::vector<std::vector<std::uint8_t>> out;
    for (const auto& fr : ann.frames) out.push_back(track_mask(fr, tid));
    return out;
  };
  // one correct high-score track, one junk detection, one correct low-score track
  VideoResult res;
  res.task = "vis";
  res.T = 2;
  res.H = cfg.height;
  res.W = cfg.width;
  res.tracks.push_back({1, track_class(ann, tracks[0]), 0.9, stack(tracks[0])});
  res.tracks.push_back({2, 1, 0.8, {box_mask(64, 64, 0, 0, 3, 3), box_mask(64, 64, 0, 0, 3, 3)}});
  res.tracks.push_back({3, track_class(ann, tracks[1]), 0.7, stack(tracks[1])});
  // precision at the true positives: 1/1 and 2/3; AP = (1 + 2/3) / 2
  CHECK(vis_average_precision_50(res.tracks, ann) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("result files round-trip through result.json") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "tarvis_result_rt").string();
  fs::remove_all(dir);
  VideoResult res;
  res.task = "vos";
  res.T = 2;
  res.H = 8;
  res.W = 8;
  res.windows = {{0, 2}};
  res.emitted_after_window = {0, 0};
  res.target_tracks = {0, 2};
  TrackResult tr;
  tr.id = 1;
  tr.masks = {box_mask(8, 8, 0, 0, 4, 4), {}};
  res.tracks.push_back(tr);
  TrackResult tr2;
  tr2.id = 2;
  tr2.masks = {{}, box_mask(8, 8, 2, 2, 6, 6)};
  res.tracks.push_back(tr2);
  write_video_result(res, dir);
  VideoResult back = read_video_result(dir);
  CHECK(back.task == "vos");
  CHECK(back.target_tracks == res.target_tracks);
  REQUIRE(back.tracks.size() == 2);
  CHECK(back.tracks[0].masks[0] == res.tracks[0].masks[0]);
  CHECK(back.tracks[0].masks[1].empty());
  CHECK(back.tracks[1].masks[1] == res.tracks[1].masks[1]);
  CHECK_THROWS(read_video_result(dir + "_missing"));
  fs::remove_all(dir);
}

TEST_CASE("pca projection: sign-fixed and reproducible") {
  Rng rng(9);
  Tensor rows({20, 6});
  for (Index i = 0; i < rows.size(); ++i) rows[i] = rng.normal();
  Tensor a = pca_project_2d(rows);
  Tensor b = pca_project_2d(rows);
  for (Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(a.shape() == Shape{20, 2});
}
