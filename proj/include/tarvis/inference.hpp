#ifndef TARVIS_INFERENCE_HPP
#define TARVIS_INFERENCE_HPP

#include "tarvis/losses.hpp"
#include "tarvis/model.hpp"

namespace tarvis {

struct TrackResult {
  int id = -1;
  int class_id = -1;    // -1 for VOS/PET tracks
  double score = -1.0;  // -1 when not applicable
  std::vector<std::vector<std::uint8_t>> masks;  // per frame, H*W; empty = absent
};

struct VideoResult {
  std::string task;  // "vis" | "vps" | "vos" | "pet" | "mixed"
  Index T = 0, H = 0, W = 0;
  std::vector<TrackResult> tracks;
  std::vector<TrackResult> object_tracks;  // mixed mode: the VOS group
  std::vector<PanopticFrame> panoptic;     // VPS only
  std::vector<int> target_tracks;          // VOS/PET: gt track id per object index
  std::vector<std::pair<Index, Index>> windows;
  std::vector<Index> emitted_after_window;  // per frame: first covering window
};

/// Overlapping clip windows covering the whole video; stride t_clip - t_ov,
/// last window clamped to the end.
std::vector<std::pair<Index, Index>> window_video(Index t_video, const InferenceConfig& cfg);

/// Spatio-temporal IoU over aligned frame stacks; empty/empty -> 1.
double stack_iou(const std::vector<std::vector<std::uint8_t>>& a,
                 const std::vector<std::vector<std::uint8_t>>& b);

/// Hungarian assignment on negative IoU over the shared overlap frames;
/// pairs below iou_min are discarded. Returns new_slot -> prev_track index.
std::vector<std::pair<Index, Index>> associate_instances(
    const std::vector<std::vector<std::vector<std::uint8_t>>>& prev_overlap_masks,
    const std::vector<std::vector<std::vector<std::uint8_t>>>& new_overlap_masks, double iou_min);

/// Arithmetic mean on the given overlap frames, pass-through elsewhere.
/// Logits layout: (C, T, H4, W4).
Tensor merge_semantic(const Tensor& prev_logits, const Tensor& new_logits, Index overlap_start,
                      Index overlap_count);

/// The targets handed to whole-video inference.
struct VideoTargets {
  std::string dataset;  // VIS/VPS (and the VIS half of mixed)
  std::vector<ObjectCue> cues;  // VOS/PET (and the VOS half of mixed)
};

VideoResult run_video(const TarvisModel& model, const VideoClip& video, Task task,
                      const VideoTargets& targets, const InferenceConfig& cfg, std::uint64_t seed);
/// Fig.-4-style pass: VIS queries and VOS object queries concatenated.
VideoResult run_video_mixed(const TarvisModel& model, const VideoClip& video,
                            const VideoTargets& targets, const InferenceConfig& cfg,
                            std::uint64_t seed);

void write_video_result(const VideoResult& res, const std::string& dir);
VideoResult read_video_result(const std::string& dir);

/// COCO-style uncompressed RLE, row-major, starting with the zero run.
std::vector<Index> rle_encode(const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> rle_decode(const std::vector<Index>& counts, Index size);

}  // namespace tarvis

#endif
