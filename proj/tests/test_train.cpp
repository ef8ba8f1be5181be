#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tarvis/trainer.hpp"

using namespace tarvis;

namespace {

namespace fs = std::filesystem;

RunConfig micro_config(const std::string& tag) {
  RunConfig cfg;
  cfg.seed = 3;
  cfg.model.d_model = 16;
  cfg.model.instance_queries = 4;
  cfg.model.backbone.stage_channels = {8, 8, 8, 8};
  cfg.model.neck.num_layers = 1;
  cfg.model.neck.num_heads = 2;
  cfg.model.neck.temporal_grid = 1;
  cfg.model.decoder.num_layers = 1;
  cfg.model.decoder.num_heads = 2;
  cfg.model.decoder.mask_mlp_layers = 2;
  cfg.model.object_encoder.layers = 1;
  cfg.model.object_encoder.num_heads = 2;
  cfg.model.object_encoder.queries_per_object = 2;
  cfg.train.main_steps = 5;
  cfg.train.clip_frames = 2;
  cfg.train.checkpoint_interval = 100;
  cfg.train.log_interval = 0;
  cfg.train.num_points = 64;
  cfg.run_dir = (fs::temp_directory_path() / ("tarvis_train_" + tag)).string();
  return cfg;
}

Dataset micro_dataset(Index n_videos = 2) {
  Dataset ds;
  ds.name = "synth";
  SceneConfig scene;
  scene.height = 32;
  scene.width = 32;
  scene.num_frames = 4;
  scene.min_things = 1;
  scene.max_things = 2;
  for (int id : scene.thing_classes) ds.classes.push_back({id, true, ""});
  for (int id : scene.stuff_classes) ds.classes.push_back({id, false, ""});
  for (Index i = 0; i < n_videos; ++i) {
    scene.seed = 50 + (std::uint64_t)i;
    auto [clip, ann] = generate_scene(scene);
    ds.videos.push_back({"video_0000" + std::to_string(i), std::move(clip), std::move(ann)});
  }
  return ds;
}

std::vector<std::string> log_lines(const std::string& run_dir) {
  std::ifstream in(fs::path(run_dir) / "train.log");
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l)) lines.push_back(l);
  return lines;
}

}  // namespace

TEST_CASE("multitask_step: single-task batch equals weighted task loss; zero weight kills gradient") {
  Dataset ds = micro_dataset(1);
  RunConfig cfg = micro_config("mt");
  cfg.model.seed = cfg.seed;
  TarvisModel model;
  model.init(cfg.model);
  model.register_dataset(ds.name, ds.classes);

  auto [clip, ann] = subclip(ds.videos[0].clip, ds.videos[0].ann, 0, 2);
  Rng drng(1);
  TaskSample sample = derive_task_targets(clip, ann, ds.classes, Task::VIS, drng);

  // Table S4 weights are accepted verbatim as loss weights
  cfg.train.loss_weights = {{Task::VPS, 0.3}, {Task::VIS, 0.3}, {Task::VOS, 0.28}, {Task::PET, 0.12}};
  Rng r1(7), r2(7);
  auto batch_res = multitask_step(model, {sample}, ds.name, cfg.train, r1);
  auto single = compute_task_loss(model, sample, ds.name, cfg.train, r2);
  CHECK(batch_res.total->value[0] == doctest::Approx(0.3 * single.total->value[0]).epsilon(1e-12));

  // zero-weight task contributes zero gradient
  cfg.train.loss_weights[Task::VIS] = 0.0;
  Rng r3(7);
  auto zero = multitask_step(model, {sample}, ds.name, cfg.train, r3);
  model.params().zero_grads();
  backward(zero.total);
  double grad_mag = 0;
  for (const auto& p : model.params().params())
    if (p->has_grad()) grad_mag += p->grad.array().abs().sum();
  CHECK(grad_mag == 0.0);

  cfg.train.loss_weights.erase(Task::VIS);
  Rng r4(7);
  CHECK_THROWS(multitask_step(model, {sample}, ds.name, cfg.train, r4));
}

TEST_CASE("one training step produces a loadable checkpoint with identical forward outputs") {
  Dataset ds = micro_dataset(1);
  RunConfig cfg = micro_config("ckpt");
  cfg.train.main_steps = 1;
  fs::remove_all(cfg.run_dir);
  Trainer trainer(cfg, ds);
  trainer.run();
  REQUIRE(fs::exists(trainer.final_checkpoint()));

  // forward on a fixed clip before and after the round-trip
  Var clip = make_const<double>(ds.videos[0].clip.rgb.reshaped({4, 32, 32, 3}));
  NoGradGuard ng;
  FeaturePyramid a = trainer.model().features(clip);

  LoadedCheckpoint ck = load_checkpoint(trainer.final_checkpoint());
  TarvisModel restored;
  ck.restore_model(restored);
  FeaturePyramid b = restored.features(clip);
  for (Index i = 0; i < a.f4->value.size(); ++i) CHECK(a.f4->value[i] == b.f4->value[i]);
  for (Index i = 0; i < a.f32->value.size(); ++i) CHECK(a.f32->value[i] == b.f32->value[i]);

  // decode runs identically too (hot-swap ready)
  TargetQuerySet qa = trainer.model().bank().build_vis_queries("synth");
  TargetQuerySet qb = restored.bank().build_vis_queries("synth");
  auto [ra, sa] = trainer.model().decode(qa, a, std::optional<std::string>("synth"));
  auto [rb, sb] = restored.decode(qb, b, std::optional<std::string>("synth"));
  for (Index i = 0; i < sa.final_layer().mask_logits->value.size(); ++i)
    CHECK(sa.final_layer().mask_logits->value[i] == sb.final_layer().mask_logits->value[i]);
  fs::remove_all(cfg.run_dir);
}

TEST_CASE("resume continues bitwise-identically to an uninterrupted run") {
  Dataset ds = micro_dataset(2);

  RunConfig full = micro_config("full");
  full.train.main_steps = 10;
  fs::remove_all(full.run_dir);
  Trainer t_full(full, ds);
  t_full.run();
  auto full_lines = log_lines(full.run_dir);
  REQUIRE(full_lines.size() == 10);

  RunConfig half = micro_config("half");
  half.train.main_steps = 10;
  half.train.checkpoint_interval = 5;
  fs::remove_all(half.run_dir);
  {
    Trainer t1(half, ds);
    t1.run("", 5);  // interrupt after step 5
  }
  const std::string ckpt = (fs::path(half.run_dir) / "checkpoint_000005.tvckpt").string();
  REQUIRE(fs::exists(ckpt));
  {
    Trainer t2(half, ds);
    t2.run(ckpt);
  }
  auto half_lines = log_lines(half.run_dir);
  REQUIRE(half_lines.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(half_lines[(std::size_t)i] == full_lines[(std::size_t)i]);

  // resuming under a different model config is rejected with a config diff
  RunConfig other = micro_config("diff");
  other.model.d_model = 32;
  Trainer t3(other, ds);
  CHECK_THROWS_WITH_AS(t3.run(ckpt), doctest::Contains("model.d_model"), std::runtime_error);
  fs::remove_all(full.run_dir);
  fs::remove_all(half.run_dir);
  fs::remove_all(other.run_dir);
}

TEST_CASE("fixed seed reproduces the training trajectory bitwise; run dir is locked") {
  Dataset ds = micro_dataset(1);
  RunConfig a = micro_config("det_a");
  RunConfig b = micro_config("det_b");
  fs::remove_all(a.run_dir);
  fs::remove_all(b.run_dir);
  Trainer ta(a, ds);
  ta.run();
  Trainer tb(b, ds);
  tb.run();
  auto la = log_lines(a.run_dir);
  auto lb = log_lines(b.run_dir);
  REQUIRE(la.size() == lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);

  // a held lock blocks a second trainer on the same run dir
  fs::create_directories(a.run_dir);
  std::ofstream((fs::path(a.run_dir) / ".lock")) << "held";
  Trainer tc(a, ds);
  CHECK_THROWS(tc.run());
  fs::remove_all(a.run_dir);
  fs::remove_all(b.run_dir);
}

TEST_CASE("config: schema validation and snapshot round-trip") {
  RunConfig cfg;
  CHECK_THROWS_WITH_AS(apply_config_line(cfg, "model.nope", "3"),
                       doctest::Contains("unknown config key"), std::invalid_argument);
  CHECK_THROWS(apply_config_line(cfg, "model.d_model", "abc"));
  apply_config_line(cfg, "train.task_weights", "vis:0.5,vos:0.5");
  CHECK(cfg.train.task_weights.at(Task::VIS) == 0.5);
  CHECK(cfg.train.task_weights.count(Task::VPS) == 0);

  cfg.model.d_model = 48;
  cfg.train.lr = 3e-4;
  cfg.synth.scene.thing_classes = {4, 9};
  auto snap = config_snapshot(cfg);
  RunConfig back = config_from_snapshot(snap);
  CHECK(back.model.d_model == 48);
  CHECK(back.train.lr == 3e-4);
  CHECK(back.synth.scene.thing_classes == std::vector<int>{4, 9});
  CHECK(config_model_diff(config_snapshot(cfg), config_snapshot(back)).empty());

  // an empty config file is fine; a malformed line is not
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "tarvis_cfg_test.conf";
  std::ofstream(path) << "# comment only\n";
  CHECK_NOTHROW(load_run_config(path.string()));
  std::ofstream(path) << "model.d_model 64\n";
  CHECK_THROWS(load_run_config(path.string()));
  fs::remove(path);
}

TEST_CASE("shared object-encoder weights serve both mask and point paths") {
  RunConfig cfg = micro_config("shared");
  cfg.model.seed = cfg.seed;
  TarvisModel model;
  model.init(cfg.model);
  // one parameter set under objenc.*; no per-path duplicates
  Index objenc_params = 0;
  for (const auto& p : model.params().params())
    if (p->name.rfind("objenc.", 0) == 0) ++objenc_params;
  CHECK(objenc_params > 0);
  CHECK(model.params().get("objenc.l0.cross.q.w").get() ==
        model.params().get("objenc.l0.cross.q.w").get());
  // the registry holds exactly one Var per name; encode paths share them
  CHECK_FALSE(model.params().has("objenc.point.l0.cross.q.w"));
}
