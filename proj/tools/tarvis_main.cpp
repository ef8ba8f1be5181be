#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>

#include <json.hpp>

#include "tarvis/checkpoint.hpp"
#include "tarvis/dataset.hpp"
#include "tarvis/metrics.hpp"
#include "tarvis/trainer.hpp"
#include "tarvis/viz.hpp"

namespace fs = std::filesystem;
using namespace tarvis;
using nlohmann::json;

namespace {

RunConfig load_config_opt(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

Index env_workers() {
  const char* v = std::getenv("TARVIS_NUM_WORKERS");
  if (!v) return 1;
  const long n = std::strtol(v, nullptr, 10);
  return n < 1 ? 1 : (Index)n;
}

ClassTable synth_class_table(const SceneConfig& scene) {
  ClassTable classes;
  for (int id : scene.thing_classes) classes.push_back({id, true, "thing_" + std::to_string(id)});
  for (int id : scene.stuff_classes) classes.push_back({id, false, "stuff_" + std::to_string(id)});
  return classes;
}

int cmd_synth(const std::string& config, std::uint64_t seed, bool seed_set, std::string out) {
  RunConfig cfg = load_config_opt(config);
  if (seed_set) cfg.seed = seed;
  if (out.empty()) out = cfg.dataset_dir;

  Dataset ds;
  ds.name = "synth";
  ds.classes = synth_class_table(cfg.synth.scene);
  ds.videos.resize((std::size_t)cfg.synth.num_videos);
  const Index workers = env_workers();
  std::vector<std::future<void>> jobs;
  std::atomic<Index> next{0};
  auto worker = [&] {
    while (true) {
      const Index i = next.fetch_add(1);
      if (i >= cfg.synth.num_videos) return;
      SceneConfig scene = cfg.synth.scene;
      scene.seed = splitmix64(cfg.seed) + (std::uint64_t)i * 7919;
      auto [clip, ann] = generate_scene(scene);
      char name[32];
      std::snprintf(name, sizeof(name), "video_%05d", (int)i);
      ds.videos[(std::size_t)i] = {name, std::move(clip), std::move(ann)};
    }
  };
  for (Index w = 0; w < workers; ++w) jobs.push_back(std::async(std::launch::async, worker));
  for (auto& j : jobs) j.get();

  write_dataset(ds, out);
  std::cout << "dataset: " << out << "\nvideos: " << ds.videos.size() << "\ncontent_hash: " << std::hex
            << dataset_content_hash(ds) << std::dec << "\n";
  return 0;
}

int cmd_train(const std::string& config, std::uint64_t seed, bool seed_set, std::string out,
              std::string data, const std::string& resume) {
  RunConfig cfg = load_config_opt(config);
  if (seed_set) cfg.seed = seed;
  if (!out.empty()) cfg.run_dir = out;
  if (!data.empty()) cfg.dataset_dir = data;
  Dataset ds = read_dataset(cfg.dataset_dir);
  Trainer trainer(cfg, std::move(ds));
  trainer.run(resume);
  std::cout << "final checkpoint: " << trainer.final_checkpoint() << "\n";
  return 0;
}

std::vector<ObjectCue> cues_from_gt(const VideoRecord& rec, Task task) {
  if (rec.ann.frames.empty())
    throw std::runtime_error("cues-from-gt: video has no annotations: " + rec.name);
  auto tracks = list_tracks(rec.ann);
  if (tracks.empty()) throw std::runtime_error("cues-from-gt: no trackable objects in " + rec.name);
  const Index H = rec.clip.height(), W = rec.clip.width();
  std::vector<ObjectCue> cues;
  for (int tid : tracks) {
    ObjectCue cue;
    cue.track_id = tid;
    cue.frame = first_visible_frame(rec.ann, tid);
    auto mask = track_mask(rec.ann.frames[(std::size_t)cue.frame], tid);
    if (task == Task::PET) {
      auto [py, px] = interior_centroid(mask, H, W);
      cue.point_y = py;
      cue.point_x = px;
      cue.mask.assign((std::size_t)(H * W), 0);
      cue.mask[(std::size_t)(py * W + px)] = 1;
    } else {
      cue.mask = std::move(mask);
    }
    cues.push_back(std::move(cue));
  }
  return cues;
}

std::vector<ObjectCue> cues_from_file(const std::string& path, Index H, Index W) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cue file: " + path);
  json j;
  in >> j;
  std::vector<ObjectCue> cues;
  for (const auto& c : j.at("cues")) {
    ObjectCue cue;
    cue.track_id = c.value("track_id", -1);
    cue.frame = c.value("frame", (Index)0);
    if (c.contains("mask")) {
      std::vector<Index> counts;
      for (const auto& v : c.at("mask").at("counts")) counts.push_back(v.get<Index>());
      cue.mask = rle_decode(counts, H * W);
    } else if (c.contains("point")) {
      cue.point_y = c.at("point").at(0).get<Index>();
      cue.point_x = c.at("point").at(1).get<Index>();
      cue.mask.assign((std::size_t)(H * W), 0);
      cue.mask[(std::size_t)(cue.point_y * W + cue.point_x)] = 1;
    } else {
      throw std::runtime_error("cue entry needs a mask or a point");
    }
    cues.push_back(std::move(cue));
  }
  if (cues.empty()) throw std::runtime_error("cue file lists no cues: " + path);
  return cues;
}

std::vector<std::pair<std::string, VideoRecord>> collect_videos(const std::string& video_path) {
  std::vector<std::pair<std::string, VideoRecord>> out;
  if (fs::exists(fs::path(video_path) / "manifest.json")) {
    Dataset ds = read_dataset(video_path);
    for (auto& v : ds.videos) out.emplace_back(v.name, std::move(v));
  } else {
    VideoRecord rec = read_video_record(video_path);
    out.emplace_back(rec.name, std::move(rec));
  }
  return out;
}

int cmd_infer(const std::string& checkpoint, const std::string& video_path, const std::string& task_s,
              const std::string& cue_file, bool gt_cues, const std::string& config,
              std::uint64_t seed, bool seed_set, std::string out) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  TarvisModel model;
  ck.restore_model(model);
  RunConfig cfg = ck.config;
  if (!config.empty()) cfg = load_run_config(config);
  if (seed_set) cfg.seed = seed;
  if (out.empty()) out = "results";
  if (model.registered_datasets().empty()) throw std::runtime_error("checkpoint has no datasets");
  const std::string dataset_name = model.registered_datasets()[0].first;

  const bool mixed = task_s == "mixed";
  const Task task = mixed ? Task::VOS : task_from_name(task_s);
  const bool needs_cues = mixed || task == Task::VOS || task == Task::PET;
  if (needs_cues && cue_file.empty() && !gt_cues)
    throw std::runtime_error("usage: task '" + task_s + "' requires --cues FILE or --cues-from-gt");

  for (auto& [name, rec] : collect_videos(video_path)) {
    VideoTargets targets;
    targets.dataset = dataset_name;
    if (needs_cues)
      targets.cues = cue_file.empty() ? cues_from_gt(rec, mixed ? Task::VOS : task)
                                      : cues_from_file(cue_file, rec.clip.height(), rec.clip.width());
    VideoResult res = mixed ? run_video_mixed(model, rec.clip, targets, cfg.infer, cfg.seed)
                            : run_video(model, rec.clip, task, targets, cfg.infer, cfg.seed);
    const std::string vdir = (fs::path(out) / name).string();
    write_video_result(res, vdir);
    std::cout << name << ": " << res.tracks.size() << " tracks -> " << vdir << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& results_dir, const std::string& data_dir, std::string out) {
  Dataset ds = read_dataset(data_dir);
  if (out.empty()) out = (fs::path(results_dir) / "eval.json").string();
  double mean_iou = 0, boundary = 0, jf = 0, ap = 0, miou = 0;
  Index switches = 0, n = 0, n_ap = 0, n_miou = 0;
  for (const auto& rec : ds.videos) {
    const fs::path vdir = fs::path(results_dir) / rec.name;
    if (!fs::exists(vdir / "result.json"))
      throw std::runtime_error("missing result for video: " + rec.name);
    VideoResult res = read_video_result(vdir.string());
    Task task = res.task == "mixed" ? Task::VIS : task_from_name(res.task);
    EvalReport rep = evaluate(res, rec.ann, task, res.target_tracks);
    mean_iou += rep.mean_iou.value_or(0);
    boundary += rep.boundary_f.value_or(0);
    jf += rep.jf.value_or(0);
    switches += rep.id_switches.value_or(0);
    if (rep.vis_ap50) {
      ap += *rep.vis_ap50;
      ++n_ap;
    }
    if (rep.semantic_miou) {
      miou += *rep.semantic_miou;
      ++n_miou;
    }
    ++n;
  }
  if (n == 0) throw std::runtime_error("eval: dataset lists no videos");
  EvalReport total;
  total.mean_iou = mean_iou / double(n);
  total.boundary_f = boundary / double(n);
  total.jf = jf / double(n);
  total.id_switches = switches;
  if (n_ap) total.vis_ap50 = ap / double(n_ap);
  if (n_miou) total.semantic_miou = miou / double(n_miou);
  write_eval_json(total, out);
  std::cout << "eval: J=" << *total.mean_iou << " F=" << *total.boundary_f << " J&F=" << *total.jf
            << " id_switches=" << *total.id_switches;
  if (total.vis_ap50) std::cout << " ap50=" << *total.vis_ap50;
  if (total.semantic_miou) std::cout << " semantic_miou=" << *total.semantic_miou;
  std::cout << "\n-> " << out << "\n";
  return 0;
}

int cmd_viz_queries(const std::string& checkpoint, const std::string& video_path,
                    const std::string& tasks_s, std::uint64_t seed, bool seed_set, std::string out) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  TarvisModel model;
  ck.restore_model(model);
  if (out.empty()) out = "viz_queries";
  VideoRecord rec = read_video_record(video_path);
  std::vector<Task> tasks;
  std::stringstream ss(tasks_s);
  std::string item;
  while (std::getline(ss, item, ',')) tasks.push_back(task_from_name(item));
  if (tasks.empty()) throw std::runtime_error("viz-queries: no tasks given");
  VideoTargets targets;
  targets.dataset = model.registered_datasets().at(0).first;
  bool needs_cues = false;
  for (Task t : tasks) needs_cues |= t == Task::VOS || t == Task::PET;
  if (needs_cues) targets.cues = cues_from_gt(rec, Task::VOS);
  QueryVizStats stats =
      viz_queries(model, rec.clip, tasks, targets, out, seed_set ? seed : ck.config.seed);
  std::cout << "queries: " << stats.rows << " rows -> " << out << "/queries.csv\n"
            << "spread first-layer=" << stats.first_layer_spread
            << " last-layer=" << stats.last_layer_spread << "\n";
  return 0;
}

int cmd_viz_overlay(const std::string& results_dir, const std::string& video_path, std::string out) {
  VideoRecord rec = read_video_record(video_path);
  VideoResult res;
  if (fs::exists(fs::path(results_dir) / "result.json")) {
    res = read_video_result(results_dir);
  } else {
    res.task = "vis";  // empty results: plain frames are copied
    res.T = rec.clip.frames();
    res.H = rec.clip.height();
    res.W = rec.clip.width();
  }
  if (out.empty()) out = "overlays";
  viz_overlay(res, rec.clip, out);
  std::cout << rec.clip.frames() << " frames -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tarvis: unified target-based video segmentation (desk-scale)"};
  app.require_subcommand(1);

  std::string config, out, data, resume, checkpoint, video, task = "vis", cues, results;
  std::string tasks_s = "vis,vos";
  std::uint64_t seed = 0;
  bool gt_cues = false, seed_set = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run config file (key = value lines)");
    sub->add_option("--seed", seed, "override the global seed")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--out", out, "output directory");
  };

  auto* synth = app.add_subcommand("synth", "generate and persist a synthetic dataset");
  add_common(synth);

  auto* train = app.add_subcommand("train", "joint multi-task training");
  add_common(train);
  train->add_option("--data", data, "dataset directory (overrides paths.dataset)");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* infer = app.add_subcommand("infer", "near-online whole-video inference");
  add_common(infer);
  infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer->add_option("--video", video, "video directory or dataset directory")->required();
  infer->add_option("--task", task, "vis|vps|vos|pet|mixed");
  infer->add_option("--cues", cues, "cue file for vos/pet/mixed");
  infer->add_flag("--cues-from-gt", gt_cues, "derive cues from the video's annotations");

  auto* evalc = app.add_subcommand("eval", "score results against ground truth");
  add_common(evalc);
  evalc->add_option("--results", results, "directory with per-video results")->required();
  evalc->add_option("--data", data, "dataset directory with ground truth")->required();

  auto* vq = app.add_subcommand("viz-queries", "PCA scatter of refined target queries");
  add_common(vq);
  vq->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  vq->add_option("--video", video, "video directory")->required();
  vq->add_option("--tasks", tasks_s, "comma list, e.g. vis,vos");

  auto* vo = app.add_subcommand("viz-overlay", "per-frame RGB overlays of result masks");
  add_common(vo);
  vo->add_option("--results", results, "result directory for one video")->required();
  vo->add_option("--video", video, "video directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(config, seed, seed_set, out);
    if (train->parsed()) return cmd_train(config, seed, seed_set, out, data, resume);
    if (infer->parsed())
      return cmd_infer(checkpoint, video, task, cues, gt_cues, config, seed, seed_set, out);
    if (evalc->parsed()) return cmd_eval(results, data, out);
    if (vq->parsed()) return cmd_viz_queries(checkpoint, video, tasks_s, seed, seed_set, out);
    if (vo->parsed()) return cmd_viz_overlay(results, video, out);
  } catch (const std::exception& e) {
    std::cerr << "tarvis-error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
