#ifndef TARVIS_TRAINER_HPP
#define TARVIS_TRAINER_HPP

#include "tarvis/checkpoint.hpp"
#include "tarvis/dataset.hpp"
#include "tarvis/inference.hpp"

namespace tarvis {

/// Forward + per-task supervision for one sample (graph is live on return).
TaskLossResult compute_task_loss(const TarvisModel& model, const TaskSample& sample,
                                 const std::string& dataset, const TrainConfig& cfg, Rng& rng);

/// Sum of per-sample task losses, each scaled by its configured task weight.
TaskLossResult multitask_step(const TarvisModel& model, const std::vector<TaskSample>& batch,
                              const std::string& dataset, const TrainConfig& cfg, Rng& rng);

class Trainer {
 public:
  Trainer(RunConfig cfg, Dataset dataset);

  /// Runs (or resumes) the two-phase schedule: pseudo-video pretraining, then
  /// clips from the stored videos. Appends to <run_dir>/train.log and writes
  /// checkpoints at the configured interval. stop_after > 0 interrupts the
  /// schedule at that absolute step (for resumption).
  void run(const std::string& resume_checkpoint = "", Index stop_after = 0);

  TarvisModel& model() { return model_; }
  const std::string& final_checkpoint() const { return final_checkpoint_; }

 private:
  struct SampleSpec {
    Index step = 0;
    bool pretrain = false;
    Index video = 0;
    Task task = Task::VIS;
    Index start = 0;
    std::uint64_t seed = 0;
  };

  SampleSpec draw_spec(Index step, bool pretrain);
  TaskSample materialize(const SampleSpec& spec) const;
  double lr_scale(Index step, Index total) const;

  RunConfig cfg_;
  Dataset dataset_;
  TarvisModel model_;
  AdamW optimizer_;
  Rng rng_;
  std::string final_checkpoint_;
};

}  // namespace tarvis

#endif
