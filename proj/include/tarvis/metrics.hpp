#ifndef TARVIS_METRICS_HPP
#define TARVIS_METRICS_HPP

#include <optional>

#include "tarvis/inference.hpp"

namespace tarvis {

struct EvalReport {
  std::optional<double> mean_iou;       // J: mean per-track per-frame IoU
  std::optional<double> boundary_f;     // F: boundary measure at the given tolerance
  std::optional<double> jf;             // (J + F) / 2
  std::optional<Index> id_switches;
  std::optional<double> vis_ap50;
  std::optional<double> semantic_miou;
};

/// |a ∩ b| / |a ∪ b|; two empty masks count as 1.
double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

/// Precision/recall of boundary pixels matched within Chebyshev distance
/// `tolerance`; both-empty boundaries count as 1.
double boundary_f_measure(const std::vector<std::uint8_t>& pred,
                          const std::vector<std::uint8_t>& gt, Index height, Index width,
                          Index tolerance = 1);

/// Frames where a ground-truth track's matched prediction (per-frame IoU >=
/// 0.5) differs from its previously matched id. Unmatched frames don't count.
Index id_switch_count(const std::vector<TrackResult>& pred, const VideoAnnotation& gt);

/// Greedy score-ordered track matching at spatio-temporal IoU >= 0.5;
/// precision averaged over the recall points.
double vis_average_precision_50(const std::vector<TrackResult>& pred, const VideoAnnotation& gt);

/// Per-class IoU of panoptic class maps, averaged over classes present in gt.
double semantic_mean_iou(const std::vector<PanopticFrame>& pred,
                         const std::vector<PanopticFrame>& gt);

/// Per-task dispatch. For VOS/PET, `target_tracks` aligns object indices with
/// ground-truth track ids.
EvalReport evaluate(const VideoResult& result, const VideoAnnotation& gt, Task task,
                    const std::vector<int>& target_tracks = {});

void write_eval_json(const EvalReport& report, const std::string& path);

}  // namespace tarvis

#endif
