#ifndef TARVIS_SYNTH_HPP
#define TARVIS_SYNTH_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tarvis/rng.hpp"
#include "tarvis/tensor.hpp"

namespace tarvis {

enum class Task { VIS, VPS, VOS, PET };

const char* task_name(Task t);
Task task_from_name(const std::string& s);

struct ClassInfo {
  int id = 0;
  bool is_thing = false;
  std::string name;
};
using ClassTable = std::vector<ClassInfo>;

/// Canonical class ordering used by query banks and heads: things first, then
/// stuff, each ascending by id.
std::vector<int> class_order(const ClassTable& classes, bool include_stuff);
Index class_index(const std::vector<int>& order, int class_id);

struct SceneConfig {
  Index height = 64, width = 64;
  Index num_frames = 8;
  Index min_things = 1, max_things = 3;
  std::vector<int> thing_classes = {1, 2, 3};
  std::vector<int> stuff_classes = {10, 11, 12};
  double min_size = 0.28, max_size = 0.42;   // half-extent as a fraction of min(H,W)/2
  double min_speed = 0.8, max_speed = 2.5;   // px/frame
  double velocity_jitter = 0.15;             // px/frame^2
  double rotation_jitter = 0.06;             // rad/frame
  double scale_jitter = 0.0;                 // relative/frame
  Index min_stuff_regions = 2, max_stuff_regions = 4;
  bool voronoi_stuff = false;                // default: horizontal bands
  std::uint64_t seed = 0;

  void validate() const;
};

struct SegmentInfo {
  int segment_id = 0;
  int class_id = 0;
  bool is_thing = false;
  int track_id = -1;  // -1 for stuff
};

/// Complete per-frame panoptic labeling: every pixel carries a segment id >= 1
/// and the table lists exactly the ids present in the map.
struct PanopticFrame {
  Index height = 0, width = 0;
  std::vector<std::uint16_t> segment_map;  // height*width
  std::vector<SegmentInfo> segments;

  std::uint16_t id_at(Index y, Index x) const { return segment_map[(std::size_t)(y * width + x)]; }
  const SegmentInfo* find(int segment_id) const;
};

struct VideoClip {
  Tensor rgb;  // (T, H, W, 3) in [0,1]
  Index frames() const { return rgb.dim(0); }
  Index height() const { return rgb.dim(1); }
  Index width() const { return rgb.dim(2); }
};

struct VideoAnnotation {
  std::vector<PanopticFrame> frames;
};

std::pair<VideoClip, VideoAnnotation> generate_scene(const SceneConfig& config);

struct AugmentConfig {
  double max_translate = 3.0;  // px per frame step
  double max_rotate = 0.05;    // rad per frame step
  double max_scale = 0.03;     // relative per frame step
  double brightness = 0.05;
  double contrast = 0.05;
};

/// Pseudo-video from a still: frame t applies a cumulative random affine plus
/// photometric jitter; annotations are warped with nearest-neighbor sampling
/// and keep their track ids.
std::pair<VideoClip, VideoAnnotation> augment_still_to_clip(const Tensor& still,
                                                            const PanopticFrame& annotation, Index T,
                                                            const AugmentConfig& aug,
                                                            std::uint64_t seed);

struct ObjectCue {
  int track_id = -1;
  Index frame = 0;                 // first frame the object is visible in
  std::vector<std::uint8_t> mask;  // H*W cue mask (VOS; single pixel for PET)
  Index point_y = -1, point_x = -1;  // PET only
};

struct TaskSample {
  Task task = Task::VIS;
  VideoClip clip;
  VideoAnnotation ann;
  std::vector<int> target_tracks;  // thing track ids in target order
  std::vector<ObjectCue> cues;     // VOS/PET only, aligned with target_tracks
};

TaskSample derive_task_targets(const VideoClip& clip, const VideoAnnotation& ann,
                               const ClassTable& classes, Task task, Rng& rng);

Task sample_task(const std::map<Task, double>& weights, Rng& rng);

/// Frames [start, start+len) of a video as an independent clip.
std::pair<VideoClip, VideoAnnotation> subclip(const VideoClip& clip, const VideoAnnotation& ann,
                                              Index start, Index len);

// --- ground-truth views used by losses, metrics and tests ------------------

/// Binary mask of one track in one frame (empty vector if absent).
std::vector<std::uint8_t> track_mask(const PanopticFrame& frame, int track_id);
/// All thing track ids present anywhere in the annotation, ascending.
std::vector<int> list_tracks(const VideoAnnotation& ann);
/// Class id of a track (first occurrence wins; tracks never change class).
int track_class(const VideoAnnotation& ann, int track_id);
/// Per-pixel class indices in canonical (things-then-stuff) order.
std::vector<Index> semantic_index_map(const PanopticFrame& frame, const std::vector<int>& order);
/// First frame index where the track is visible, or -1.
Index first_visible_frame(const VideoAnnotation& ann, int track_id);
/// Mask centroid snapped to the nearest interior pixel.
std::pair<Index, Index> interior_centroid(const std::vector<std::uint8_t>& mask, Index height,
                                          Index width);

}  // namespace tarvis

#endif
