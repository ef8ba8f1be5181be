#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "tarvis/dataset.hpp"
#include "tarvis/synth.hpp"

using namespace tarvis;

namespace {

SceneConfig small_config(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  cfg.num_frames = 4;
  cfg.seed = seed;
  return cfg;
}

void check_panoptic_complete(const VideoAnnotation& ann) {
  for (const auto& fr : ann.frames) {
    std::set<std::uint16_t> in_map(fr.segment_map.begin(), fr.segment_map.end());
    std::set<std::uint16_t> in_table;
    for (const auto& s : fr.segments) in_table.insert((std::uint16_t)s.segment_id);
    CHECK(in_map == in_table);
    CHECK(in_map.count(0) == 0);  // 0 = unassigned never occurs
  }
}

}  // namespace

TEST_CASE("empty-object case: all pixels stuff, zero tracks") {
  SceneConfig cfg = small_config(0);
  cfg.min_things = 0;
  cfg.max_things = 0;
  cfg.num_frames = 1;
  auto [clip, ann] = generate_scene(cfg);
  CHECK(list_tracks(ann).empty());
  for (const auto& s : ann.frames[0].segments) CHECK_FALSE(s.is_thing);
  check_panoptic_complete(ann);
}

TEST_CASE("determinism: same config and seed give bit-identical clips") {
  SceneConfig cfg = small_config(5);
  auto [c1, a1] = generate_scene(cfg);
  auto [c2, a2] = generate_scene(cfg);
  CHECK((c1.rgb.array() == c2.rgb.array()).all());
  for (std::size_t t = 0; t < a1.frames.size(); ++t)
    CHECK(a1.frames[t].segment_map == a2.frames[t].segment_map);
}

TEST_CASE("3 things over 8 frames produce exactly 3 tracks, each visible somewhere") {
  SceneConfig cfg = small_config(7);
  cfg.min_things = 3;
  cfg.max_things = 3;
  cfg.num_frames = 8;
  auto [clip, ann] = generate_scene(cfg);
  auto tracks = list_tracks(ann);
  CHECK(tracks.size() == 3);
  for (int tid : tracks) CHECK(first_visible_frame(ann, tid) >= 0);
  check_panoptic_complete(ann);
}

TEST_CASE("rejects sizes not divisible by 32") {
  SceneConfig cfg = small_config(1);
  cfg.height = 60;
  CHECK_THROWS(generate_scene(cfg));
}

TEST_CASE("track stability: no two simultaneous segments share a track id") {
  SceneConfig cfg = small_config(123);
  cfg.min_things = 2;
  cfg.max_things = 3;
  cfg.num_frames = 6;
  auto [clip, ann] = generate_scene(cfg);
  for (const auto& fr : ann.frames) {
    std::set<int> tids;
    for (const auto& s : fr.segments)
      if (s.is_thing) {
        CHECK(tids.count(s.track_id) == 0);
        tids.insert(s.track_id);
      }
  }
}

TEST_CASE("panoptic completeness over several seeds (bands and voronoi)") {
  for (std::uint64_t seed : {11ULL, 22ULL, 33ULL}) {
    SceneConfig cfg = small_config(seed);
    cfg.voronoi_stuff = seed % 2 == 0;
    auto [clip, ann] = generate_scene(cfg);
    check_panoptic_complete(ann);
    CHECK(clip.rgb.all_finite());
  }
}

TEST_CASE("augment: T=1 with identity settings reproduces the input frame") {
  SceneConfig cfg = small_config(3);
  auto [clip, ann] = generate_scene(cfg);
  Tensor still = clip.rgb.reshaped({cfg.num_frames, 64, 64, 3});
  Tensor frame0({64, 64, 3});
  std::copy(still.data(), still.data() + 64 * 64 * 3, frame0.data());
  AugmentConfig aug;
  aug.max_translate = aug.max_rotate = aug.max_scale = 0.0;
  aug.brightness = aug.contrast = 0.0;
  auto [pclip, pann] = augment_still_to_clip(frame0, ann.frames[0], 1, aug, 99);
  CHECK((pclip.rgb.array() == frame0.array()).all());
  CHECK(pann.frames[0].segment_map == ann.frames[0].segment_map);
}

TEST_CASE("augment: zero geometric jitter keeps all segment maps identical") {
  SceneConfig cfg = small_config(4);
  auto [clip, ann] = generate_scene(cfg);
  Tensor frame0({64, 64, 3});
  std::copy(clip.rgb.data(), clip.rgb.data() + 64 * 64 * 3, frame0.data());
  AugmentConfig aug;
  aug.max_translate = aug.max_rotate = aug.max_scale = 0.0;
  auto [pclip, pann] = augment_still_to_clip(frame0, ann.frames[0], 4, aug, 7);
  for (Index t = 1; t < 4; ++t)
    CHECK(pann.frames[(std::size_t)t].segment_map == pann.frames[0].segment_map);
}

TEST_CASE("augment: translation budget bounds centroid drift") {
  SceneConfig cfg = small_config(8);
  cfg.min_things = 1;
  cfg.max_things = 1;
  auto [clip, ann] = generate_scene(cfg);
  Tensor frame0({64, 64, 3});
  std::copy(clip.rgb.data(), clip.rgb.data() + 64 * 64 * 3, frame0.data());
  AugmentConfig aug;
  aug.max_rotate = aug.max_scale = 0.0;
  aug.max_translate = 5.0;
  auto [pclip, pann] = augment_still_to_clip(frame0, ann.frames[0], 4, aug, 21);
  const int tid = list_tracks(pann)[0];
  auto centroid = [&](Index t) {
    auto m = track_mask(pann.frames[(std::size_t)t], tid);
    double sy = 0, sx = 0, n = 0;
    for (Index y = 0; y < 64; ++y)
      for (Index x = 0; x < 64; ++x)
        if (m[(std::size_t)(y * 64 + x)]) {
          sy += y;
          sx += x;
          n += 1;
        }
    REQUIRE(n > 0);
    return std::pair<double, double>{sy / n, sx / n};
  };
  auto [y0, x0] = centroid(0);
  auto [y3, x3] = centroid(3);
  CHECK(std::hypot(y3 - y0, x3 - x0) <= 5.0 * 3 + 1.0);  // 3 steps of <=5px (plus raster slack)
}

TEST_CASE("derive_task_targets: VPS covers every pixel; PET emits single interior points") {
  SceneConfig cfg = small_config(15);
  cfg.min_things = 2;
  cfg.max_things = 3;
  ClassTable classes;
  for (int id : cfg.thing_classes) classes.push_back({id, true, "thing" + std::to_string(id)});
  for (int id : cfg.stuff_classes) classes.push_back({id, false, "stuff" + std::to_string(id)});
  auto [clip, ann] = generate_scene(cfg);
  Rng rng(5);

  TaskSample vps = derive_task_targets(clip, ann, classes, Task::VPS, rng);
  auto order = class_order(classes, true);
  for (const auto& fr : vps.ann.frames) {
    auto sem = semantic_index_map(fr, order);  // throws if any pixel is unlabeled
    CHECK(sem.size() == (std::size_t)(64 * 64));
  }

  TaskSample pet = derive_task_targets(clip, ann, classes, Task::PET, rng);
  for (const auto& cue : pet.cues) {
    Index nonzero = 0;
    for (auto v : cue.mask) nonzero += v;
    CHECK(nonzero == 1);  // exactly one non-zero pixel
    const auto& fr = pet.ann.frames[(std::size_t)cue.frame];
    auto gt = track_mask(fr, cue.track_id);
    CHECK(gt[(std::size_t)(cue.point_y * 64 + cue.point_x)] == 1);
  }

  // VOS subset determinism under a fixed rng
  Rng r1(77), r2(77);
  TaskSample a = derive_task_targets(clip, ann, classes, Task::VOS, r1);
  TaskSample b = derive_task_targets(clip, ann, classes, Task::VOS, r2);
  CHECK(a.target_tracks == b.target_tracks);
}

TEST_CASE("derive_task_targets: VOS on a clip with zero things fails") {
  SceneConfig cfg = small_config(0);
  cfg.min_things = 0;
  cfg.max_things = 0;
  ClassTable classes;
  for (int id : cfg.stuff_classes) classes.push_back({id, false, ""});
  auto [clip, ann] = generate_scene(cfg);
  Rng rng(0);
  CHECK_THROWS_WITH_AS(derive_task_targets(clip, ann, classes, Task::VOS, rng),
                       "no trackable objects", std::runtime_error);
}

TEST_CASE("sample_task: weights, determinism, frequencies") {
  std::map<Task, double> w = {
      {Task::VPS, 0.3}, {Task::VIS, 0.3}, {Task::VOS, 0.28}, {Task::PET, 0.12}};
  Rng rng(42);
  CHECK_NOTHROW(sample_task(w, rng));

  std::map<Task, double> only_vis = {{Task::VIS, 1.0}};
  for (int i = 0; i < 20; ++i) CHECK(sample_task(only_vis, rng) == Task::VIS);

  std::map<Task, double> bad = {{Task::VIS, 1.3}, {Task::VOS, -0.3}};
  CHECK_THROWS(sample_task(bad, rng));

  std::map<Task, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) counts[sample_task(w, rng)]++;
  for (const auto& [t, weight] : w)
    CHECK(std::abs(double(counts[t]) / n - weight) < 0.02);
}

TEST_CASE("dataset round-trip: segment maps bit-identical, manifest counts honored") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "tarvis_test_ds").string();
  fs::remove_all(dir);

  Dataset ds;
  ds.name = "synth-test";
  SceneConfig cfg = small_config(2);
  for (int id : cfg.thing_classes) ds.classes.push_back({id, true, "t" + std::to_string(id)});
  for (int id : cfg.stuff_classes) ds.classes.push_back({id, false, "s" + std::to_string(id)});
  for (int i = 0; i < 3; ++i) {
    cfg.seed = 100 + (std::uint64_t)i;
    auto [clip, ann] = generate_scene(cfg);
    ds.videos.push_back({"video_0000" + std::to_string(i), std::move(clip), std::move(ann)});
  }
  write_dataset(ds, dir);
  Dataset back = read_dataset(dir);
  CHECK(back.videos.size() == 3);
  CHECK(back.classes.size() == ds.classes.size());
  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t t = 0; t < 4; ++t)
      CHECK(back.videos[v].ann.frames[t].segment_map == ds.videos[v].ann.frames[t].segment_map);
  // quantized frames round-trip exactly (8-bit storage)
  CHECK(dataset_content_hash(back) == dataset_content_hash(ds));

  CHECK_THROWS(read_dataset(dir + "_missing"));
  fs::remove_all(dir);
}
