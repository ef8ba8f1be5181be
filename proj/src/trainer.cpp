#include "tarvis/trainer.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

namespace tarvis {

namespace fs = std::filesystem;

TaskLossResult compute_task_loss(const TarvisModel& model, const TaskSample& sample,
                                 const std::string& dataset, const TrainConfig& cfg, Rng& rng) {
  Var clip = make_const<double>(sample.clip.rgb);
  FeaturePyramid pyr = model.features(clip);

  TaskTargets targets;
  targets.task = sample.task;
  targets.dataset = dataset;
  if (sample.task == Task::VOS) {
    for (const auto& cue : sample.cues) targets.mask_cues.push_back({cue.frame, cue.mask});
  } else if (sample.task == Task::PET) {
    for (const auto& cue : sample.cues) targets.point_cues.push_back({cue.frame, cue.point_y, cue.point_x});
  }
  TargetQuerySet qs = model.build_queries(targets, pyr, rng);
  auto [refined, seg] = model.decode(qs, pyr, dataset);

  if (sample.task == Task::VOS || sample.task == Task::PET) return vos_pet_loss(seg, sample, cfg, rng);
  const auto& entry = model.bank().entry(dataset);
  std::vector<int> thing_order(entry.order.begin(), entry.order.begin() + entry.num_things);
  if (sample.task == Task::VIS) return vis_loss(seg, sample, thing_order, cfg, rng);
  return vps_loss(seg, sample, entry.order, thing_order, cfg, rng);
}

TaskLossResult multitask_step(const TarvisModel& model, const std::vector<TaskSample>& batch,
                              const std::string& dataset, const TrainConfig& cfg, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("multitask_step: empty batch");
  TaskLossResult out;
  for (const auto& sample : batch) {
    auto it = cfg.loss_weights.find(sample.task);
    if (it == cfg.loss_weights.end()) throw std::invalid_argument("multitask_step: unknown task");
    TaskLossResult one = compute_task_loss(model, sample, dataset, cfg, rng);
    Var scaled = mul_scalar(one.total, it->second);
    out.total = out.total ? add(out.total, scaled) : scaled;
    out.report.total += it->second * one.report.total;
    out.report.terms.cls += it->second * one.report.terms.cls;
    out.report.terms.mask_bce += it->second * one.report.terms.mask_bce;
    out.report.terms.mask_dice += it->second * one.report.terms.mask_dice;
    out.report.terms.semantic_mce += it->second * one.report.terms.semantic_mce;
    for (const auto& l : one.report.layers) out.report.layers.push_back(l);
  }
  return out;
}

namespace {

/// Exclusive lock file: training owns its run directory.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw std::runtime_error("run directory is locked by another training process: " +
                               path_.string());
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

Index env_workers() {
  const char* v = std::getenv("TARVIS_NUM_WORKERS");
  if (!v) return 1;
  const long n = std::strtol(v, nullptr, 10);
  return n < 1 ? 1 : (Index)n;
}

}  // namespace

Trainer::Trainer(RunConfig cfg, Dataset dataset) : cfg_(std::move(cfg)), dataset_(std::move(dataset)) {
  if (dataset_.videos.empty()) throw std::invalid_argument("trainer: dataset has no videos");
  cfg_.model.seed = cfg_.seed;
  model_.init(cfg_.model);
  model_.register_dataset(dataset_.name, dataset_.classes);
  optimizer_.init(model_.params(), {cfg_.train.lr, 0.9, 0.999, 1e-8, cfg_.train.weight_decay,
                                    cfg_.train.grad_clip});
  rng_ = Rng(splitmix64(cfg_.seed) ^ 0x747261696eULL);
}

Trainer::SampleSpec Trainer::draw_spec(Index step, bool pretrain) {
  SampleSpec spec;
  spec.step = step;
  spec.pretrain = pretrain;
  spec.video = rng_.uniform_int((Index)dataset_.videos.size());
  spec.task = sample_task(cfg_.train.task_weights, rng_);
  const Index T = dataset_.videos[(std::size_t)spec.video].clip.frames();
  const Index len = std::min<Index>(cfg_.train.clip_frames, T);
  spec.start = T > len ? rng_.uniform_int(T - len + 1) : 0;
  spec.seed = rng_.next_u64();
  return spec;
}

TaskSample Trainer::materialize(const SampleSpec& spec) const {
  const VideoRecord& rec = dataset_.videos[(std::size_t)spec.video];
  const Index T = rec.clip.frames();
  const Index len = std::min<Index>(cfg_.train.clip_frames, T);
  Rng rng(spec.seed);

  VideoClip clip;
  VideoAnnotation ann;
  if (spec.pretrain) {
    // pseudo-video: augment the window's first frame into a clip
    const Index H = rec.clip.height(), W = rec.clip.width();
    Tensor still({H, W, 3});
    std::copy(rec.clip.rgb.data() + spec.start * H * W * 3,
              rec.clip.rgb.data() + (spec.start + 1) * H * W * 3, still.data());
    AugmentConfig aug;
    aug.max_translate = cfg_.train.aug_translate;
    aug.max_rotate = cfg_.train.aug_rotate;
    aug.max_scale = cfg_.train.aug_scale;
    aug.brightness = cfg_.train.aug_brightness;
    aug.contrast = cfg_.train.aug_contrast;
    std::tie(clip, ann) = augment_still_to_clip(still, rec.ann.frames[(std::size_t)spec.start], len,
                                                aug, rng.next_u64());
  } else {
    std::tie(clip, ann) = subclip(rec.clip, rec.ann, spec.start, len);
  }
  try {
    return derive_task_targets(clip, ann, dataset_.classes, spec.task, rng);
  } catch (const std::runtime_error&) {
    // no trackable objects in this window: fall back to VIS supervision
    return derive_task_targets(clip, ann, dataset_.classes, Task::VIS, rng);
  }
}

double Trainer::lr_scale(Index step, Index total) const {
  const double f = total > 0 ? double(step) / double(total) : 0.0;
  double scale = 1.0;
  if (f >= cfg_.train.lr_decay1) scale *= 0.1;
  if (f >= cfg_.train.lr_decay2) scale *= 0.1;
  return scale;
}

void Trainer::run(const std::string& resume_checkpoint, Index stop_after) {
  const fs::path run_dir(cfg_.run_dir);
  RunLock lock(run_dir);
  const Index total = cfg_.train.pretrain_steps + cfg_.train.main_steps;
  const Index until = stop_after > 0 ? std::min(stop_after, total) : total;

  Index start_step = 0;
  if (!resume_checkpoint.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume_checkpoint);
    auto diff = config_model_diff(config_snapshot(ck.config), config_snapshot(cfg_));
    if (!diff.empty()) {
      std::string keys;
      for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
      throw std::runtime_error("resume: checkpoint model config differs on: " + keys);
    }
    ck.restore_model(model_);
    optimizer_.init(model_.params(), optimizer_.hyper());
    if (!ck.restore_optimizer(optimizer_, model_))
      throw std::runtime_error("resume: checkpoint has no optimizer state");
    rng_.deserialize(ck.rng_state);
    start_step = ck.step;
  }

  std::ofstream log(run_dir / "train.log", std::ios::app);
  if (!log) throw std::runtime_error("cannot open train.log in " + run_dir.string());

  const Index workers = env_workers();
  std::deque<std::pair<SampleSpec, std::future<TaskSample>>> queue;
  Index next_drawn = start_step;
  auto enqueue = [&] {
    while (next_drawn < until && (Index)queue.size() < workers) {
      SampleSpec spec = draw_spec(next_drawn, next_drawn < cfg_.train.pretrain_steps);
      auto policy = workers > 1 ? std::launch::async : std::launch::deferred;
      queue.emplace_back(spec, std::async(policy, [this, spec] { return materialize(spec); }));
      ++next_drawn;
    }
  };

  for (Index step = start_step; step < until; ++step) {
    enqueue();
    auto [spec, fut] = std::move(queue.front());
    queue.pop_front();
    TaskSample sample = fut.get();

    Rng loss_rng(splitmix64(spec.seed ^ 0x6c6f7373ULL));
    TaskLossResult loss = multitask_step(model_, {sample}, dataset_.name, cfg_.train, loss_rng);
    model_.params().zero_grads();
    backward(loss.total);
    const double scale = lr_scale(step, total);
    optimizer_.step(scale);

    std::ostringstream line;
    line.precision(10);
    line << "step=" << step + 1 << " phase=" << (spec.pretrain ? "pretrain" : "main")
         << " task=" << task_name(sample.task) << " total=" << loss.report.total
         << " cls=" << loss.report.terms.cls << " bce=" << loss.report.terms.mask_bce
         << " dice=" << loss.report.terms.mask_dice << " mce=" << loss.report.terms.semantic_mce
         << " lr=" << cfg_.train.lr * scale;
    log << line.str() << "\n";
    log.flush();
    if (cfg_.train.log_interval > 0 && (step + 1) % cfg_.train.log_interval == 0)
      std::cout << line.str() << std::endl;

    if ((step + 1) % cfg_.train.checkpoint_interval == 0 || step + 1 == until) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.tvckpt", (int)(step + 1));
      save_checkpoint((run_dir / name).string(), model_, cfg_, step + 1, rng_.serialize(),
                      &optimizer_);
      final_checkpoint_ = (run_dir / name).string();
    }
  }
  if (final_checkpoint_.empty()) {
    final_checkpoint_ = (run_dir / "checkpoint_final.tvckpt").string();
    save_checkpoint(final_checkpoint_, model_, cfg_, until, rng_.serialize(), &optimizer_);
  }
  std::error_code ec;
  fs::copy_file(final_checkpoint_, run_dir / "checkpoint_final.tvckpt",
                fs::copy_options::overwrite_existing, ec);
}

}  // namespace tarvis
