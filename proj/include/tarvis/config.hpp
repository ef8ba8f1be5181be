#ifndef TARVIS_CONFIG_HPP
#define TARVIS_CONFIG_HPP

#include <map>
#include <string>

#include "tarvis/model.hpp"

namespace tarvis {

struct TrainConfig {
  Index pretrain_steps = 0;
  Index main_steps = 1000;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double lr_decay1 = 0.7, lr_decay2 = 0.9;  // step-decay points as fractions of the schedule
  Index clip_frames = 3;
  Index checkpoint_interval = 1000;
  Index log_interval = 25;
  std::map<Task, double> task_weights = {
      {Task::VPS, 0.3}, {Task::VIS, 0.3}, {Task::VOS, 0.28}, {Task::PET, 0.12}};
  std::map<Task, double> loss_weights = {
      {Task::VPS, 1.0}, {Task::VIS, 1.0}, {Task::VOS, 1.0}, {Task::PET, 1.0}};
  Index num_points = 1024;
  double oversample_ratio = 3.0;
  double importance_ratio = 0.75;
  double lambda_cls = 2.0, lambda_bce = 5.0, lambda_dice = 5.0;
  double grad_clip = 10.0;  // global-norm clip; 0 disables
  // pseudo-video augmentation magnitudes (pretraining phase)
  double aug_translate = 3.0;
  double aug_rotate = 0.05;
  double aug_scale = 0.03;
  double aug_brightness = 0.05;
  double aug_contrast = 0.05;
};

struct InferenceConfig {
  Index t_clip = 12;
  Index t_ov = 6;
  double iou_min = 0.4;
  double score_min = 0.5;
  double panoptic_overlap = 0.5;

  void validate() const {
    if (t_clip < 1 || t_ov < 0 || t_ov >= t_clip)
      throw std::invalid_argument("inference: need 0 <= t_ov < t_clip");
  }
};

struct SynthConfig {
  Index num_videos = 8;
  SceneConfig scene;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  InferenceConfig infer;
  SynthConfig synth;
  std::string dataset_dir = "data";
  std::string run_dir = "runs/default";
};

/// Parse the key-value config file (see docs/config_schema.md). Unknown keys
/// and malformed values are rejected before any work happens.
RunConfig load_run_config(const std::string& path);
void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value);

/// Flat key -> value snapshot of every schema key (used by checkpoints and
/// the resume compatibility check).
std::map<std::string, std::string> config_snapshot(const RunConfig& cfg);
RunConfig config_from_snapshot(const std::map<std::string, std::string>& kv);

/// Keys under model.* that must match between a checkpoint and the resuming
/// run; returns the differing keys.
std::vector<std::string> config_model_diff(const std::map<std::string, std::string>& a,
                                           const std::map<std::string, std::string>& b);

}  // namespace tarvis

#endif
