#ifndef TARVIS_LOSSES_HPP
#define TARVIS_LOSSES_HPP

#include "tarvis/config.hpp"
#include "tarvis/decoder.hpp"
#include "tarvis/synth.hpp"

namespace tarvis {

/// Minimum-cost one-to-one assignment covering every column of an (I, G)
/// cost matrix, I >= G. Returns (row, column) pairs ordered by column.
std::vector<std::pair<Index, Index>> hungarian_match(const Tensor& cost);

struct PointSampleConfig {
  Index num_points = 1024;
  double oversample_ratio = 3.0;
  double importance_ratio = 0.75;
};

/// Supervision points for one mask row: oversampled uniform candidates, the
/// most uncertain (|logit| closest to 0) kept, remainder uniform. Points are
/// (t, y, x) cells of the logit grid; ground truth reads the cell's center
/// pixel of the full-resolution mask.
Tensor sample_supervision_points(const Tensor& pred_logits /* (T,H4,W4) */, Index height,
                                 Index width, const PointSampleConfig& cfg, Rng& rng);

/// Same procedure for the semantic head; uncertainty is the top-2 logit margin.
Tensor sample_semantic_points(const Tensor& sem_logits /* (C,T,H4,W4) */, Index height, Index width,
                              const PointSampleConfig& cfg, Rng& rng);

/// Bilinear sample of one mask row at full-resolution points -> (P).
Var sample_pred_at_points(const Var& mask_logits /* (N,T,H4,W4) */, Index row, const Tensor& pts,
                          Index height, Index width);
/// Ground-truth lookup at the same points -> (P) of {0,1}.
Tensor gt_at_points(const std::vector<std::uint8_t>& masks /* T*H*W */, Index height, Index width,
                    const Tensor& pts);

/// 1 - (2*sum(p*g)+eps) / (sum(p)+sum(g)+eps) over sampled points, eps = 1.
Var dice_loss(const Var& pred_logits_at_points, const Tensor& gt01);
/// Mean binary cross-entropy over sampled points.
Var bce_loss(const Var& pred_logits_at_points, const Tensor& gt01);
/// Mean multi-class cross-entropy of per-point class logits (P, C).
Var mce_loss(const Var& class_logits_at_points, const std::vector<Index>& labels);

/// Ground truth for one thing track over a clip.
struct TrackGt {
  int track_id = -1;
  Index class_idx = 0;              // index into the thing-class order
  std::vector<std::uint8_t> masks;  // T*H*W
};

std::vector<TrackGt> build_track_gt(const VideoAnnotation& ann, const std::vector<int>& track_ids,
                                    const std::vector<int>& thing_order);
/// Union complement of the given tracks: 1 where no track covers the pixel.
std::vector<std::uint8_t> non_object_mask(const std::vector<TrackGt>& tracks, Index T, Index height,
                                          Index width);

struct MatchWeights {
  double cls = 2.0, bce = 5.0, dice = 5.0;
};

/// -softmax class prob + point-sampled BCE + DICE per (query, gt) pair; the
/// per-row point sets are the ones the loss reuses afterwards.
Tensor vis_cost_matrix(const Tensor& inst_mask_logits /* (I,T,H4,W4) */,
                       const Tensor& class_logits /* (I,C+1) */, const std::vector<TrackGt>& gt,
                       const std::vector<Tensor>& row_points, Index height, Index width,
                       const MatchWeights& w);

struct LossTerms {
  double cls = 0, mask_bce = 0, mask_dice = 0, semantic_mce = 0;
};

struct LossReport {
  LossTerms terms;                // summed over head evaluations
  std::vector<LossTerms> layers;  // one entry per head evaluation
  double total = 0;               // weighted sum actually optimized
};

struct TaskLossResult {
  Var total;
  LossReport report;
};

/// Per-task supervision over all head evaluations (deep supervision, weight 1
/// per layer). Matching is recomputed per layer from detached logits.
TaskLossResult vis_loss(const SegmentationOutput& seg, const TaskSample& sample,
                        const std::vector<int>& thing_order, const TrainConfig& cfg, Rng& rng);
TaskLossResult vps_loss(const SegmentationOutput& seg, const TaskSample& sample,
                        const std::vector<int>& order_all, const std::vector<int>& thing_order,
                        const TrainConfig& cfg, Rng& rng);
TaskLossResult vos_pet_loss(const SegmentationOutput& seg, const TaskSample& sample,
                            const TrainConfig& cfg, Rng& rng);

}  // namespace tarvis

#endif
