#include "tarvis/losses.hpp"

#include <algorithm>
#include <functional>
#include <cmath>

namespace tarvis {

std::vector<std::pair<Index, Index>> hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) throw std::invalid_argument("hungarian_match: cost must be 2-D");
  const Index I = cost.dim(0), G = cost.dim(1);
  if (G > I) throw std::invalid_argument("hungarian_match: more ground-truth columns than rows");
  if (G == 0) return {};
  if (!cost.all_finite()) throw std::invalid_argument("hungarian_match: non-finite cost");

  // shortest augmenting path with potentials; rows of the working matrix are
  // the G ground-truth entries, columns the I queries (G <= I)
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u((std::size_t)G + 1, 0), v((std::size_t)I + 1, 0);
  std::vector<Index> p((std::size_t)I + 1, 0), way((std::size_t)I + 1, 0);
  for (Index g = 1; g <= G; ++g) {
    p[0] = g;
    Index j0 = 0;
    std::vector<double> minv((std::size_t)I + 1, INF);
    std::vector<bool> used((std::size_t)I + 1, false);
    do {
      used[(std::size_t)j0] = true;
      const Index g0 = p[(std::size_t)j0];
      Index j1 = -1;
      double delta = INF;
      for (Index j = 1; j <= I; ++j) {
        if (used[(std::size_t)j]) continue;
        const double cur = cost.at(j - 1, g0 - 1) - u[(std::size_t)g0] - v[(std::size_t)j];
        if (cur < minv[(std::size_t)j]) {
          minv[(std::size_t)j] = cur;
          way[(std::size_t)j] = j0;
        }
        if (minv[(std::size_t)j] < delta) {
          delta = minv[(std::size_t)j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= I; ++j) {
        if (used[(std::size_t)j]) {
          u[(std::size_t)p[(std::size_t)j]] += delta;
          v[(std::size_t)j] -= delta;
        } else {
          minv[(std::size_t)j] -= delta;
        }
      }
      j0 = j1;
    } while (p[(std::size_t)j0] != 0);
    do {
      const Index j1 = way[(std::size_t)j0];
      p[(std::size_t)j0] = p[(std::size_t)j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::pair<Index, Index>> pairs;
  for (Index j = 1; j <= I; ++j)
    if (p[(std::size_t)j] != 0) pairs.emplace_back(j - 1, p[(std::size_t)j] - 1);
  std::sort(pairs.begin(), pairs.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  return pairs;
}

namespace {

/// Supervision points live on the logit grid; ground truth is read at each
/// cell's center pixel of the full-resolution mask.
inline Index center_full(Index grid_coord, Index full_extent) {
  return std::min(grid_coord * 4 + 2, full_extent - 1);
}

Tensor draw_uniform_points(Index n, Index T, Index H4, Index W4, Rng& rng) {
  Tensor pts({n, 3});
  for (Index i = 0; i < n; ++i) {
    pts.at(i, (Index)0) = double(rng.uniform_int(T));
    pts.at(i, (Index)1) = double(rng.uniform_int(H4));
    pts.at(i, (Index)2) = double(rng.uniform_int(W4));
  }
  return pts;
}

Tensor sample_points_impl(Index T, Index H4, Index W4, const PointSampleConfig& cfg, Rng& rng,
                          const std::function<double(Index, Index, Index)>& uncertainty) {
  const Index n = cfg.num_points;
  if (n < 1) throw std::invalid_argument("sample points: num_points must be >= 1");
  Index n_imp = (Index)std::llround(cfg.importance_ratio * double(n));
  n_imp = std::clamp<Index>(n_imp, 0, n);
  if (n_imp == 0) return draw_uniform_points(n, T, H4, W4, rng);

  const Index n_cand = std::max<Index>(n, (Index)std::llround(double(n) * cfg.oversample_ratio));
  Tensor cand = draw_uniform_points(n_cand, T, H4, W4, rng);
  std::vector<std::pair<double, Index>> keyed((std::size_t)n_cand);
  for (Index i = 0; i < n_cand; ++i) {
    const double u = uncertainty((Index)cand.at(i, (Index)0), (Index)cand.at(i, (Index)1),
                                 (Index)cand.at(i, (Index)2));
    keyed[(std::size_t)i] = {u, i};
  }
  std::sort(keyed.begin(), keyed.end());
  Tensor pts({n, 3});
  for (Index i = 0; i < n_imp; ++i)
    for (Index c = 0; c < 3; ++c) pts.at(i, c) = cand.at(keyed[(std::size_t)i].second, c);
  if (n - n_imp > 0) {
    Tensor fill = draw_uniform_points(n - n_imp, T, H4, W4, rng);
    for (Index i = 0; i < n - n_imp; ++i)
      for (Index c = 0; c < 3; ++c) pts.at(n_imp + i, c) = fill.at(i, c);
  }
  return pts;
}

}  // namespace

Tensor sample_supervision_points(const Tensor& pred_logits, Index height, Index width,
                                 const PointSampleConfig& cfg, Rng& rng) {
  (void)height;
  (void)width;
  const Index T = pred_logits.dim(0), H4 = pred_logits.dim(1), W4 = pred_logits.dim(2);
  return sample_points_impl(T, H4, W4, cfg, rng, [&](Index t, Index y, Index x) {
    return std::abs(pred_logits[(t * H4 + y) * W4 + x]);  // closest to the decision boundary
  });
}

Tensor sample_semantic_points(const Tensor& sem_logits, Index height, Index width,
                              const PointSampleConfig& cfg, Rng& rng) {
  (void)height;
  (void)width;
  const Index C = sem_logits.dim(0), T = sem_logits.dim(1);
  const Index H4 = sem_logits.dim(2), W4 = sem_logits.dim(3);
  return sample_points_impl(T, H4, W4, cfg, rng, [&](Index t, Index y, Index x) {
    double best = -1e300, second = -1e300;
    for (Index c = 0; c < C; ++c) {
      const double v = sem_logits[((c * T + t) * H4 + y) * W4 + x];
      if (v > best) {
        second = best;
        best = v;
      } else if (v > second) {
        second = v;
      }
    }
    return C > 1 ? best - second : 0.0;  // small margin = uncertain
  });
}

Var sample_pred_at_points(const Var& mask_logits, Index row, const Tensor& pts, Index height,
                          Index width) {
  (void)height;
  (void)width;
  const Index T = mask_logits->value.dim(1), H4 = mask_logits->value.dim(2),
              W4 = mask_logits->value.dim(3);
  Var rowv = reshape(slice_front(mask_logits, row, 1), {T, H4, W4, 1});
  const Index P = pts.dim(0);
  std::vector<Index> flat((std::size_t)P);
  for (Index i = 0; i < P; ++i)
    flat[(std::size_t)i] = (((Index)pts.at(i, (Index)0) * H4 + (Index)pts.at(i, (Index)1)) * W4 +
                            (Index)pts.at(i, (Index)2));
  return reshape(gather_front(reshape(rowv, {T * H4 * W4, 1}), flat), {P});
}

Tensor gt_at_points(const std::vector<std::uint8_t>& masks, Index height, Index width,
                    const Tensor& pts) {
  const Index P = pts.dim(0);
  Tensor out({P});
  for (Index i = 0; i < P; ++i) {
    const Index t = (Index)pts.at(i, (Index)0);
    const Index y = center_full((Index)pts.at(i, (Index)1), height);
    const Index x = center_full((Index)pts.at(i, (Index)2), width);
    out[i] = masks[(std::size_t)((t * height + y) * width + x)] ? 1.0 : 0.0;
  }
  return out;
}

Var dice_loss(const Var& pred, const Tensor& gt01) {
  const double eps = 1.0;
  Var p = sigmoid(pred);
  Var inter = sum(mul(p, make_const<double>(gt01)));
  Var num = add_scalar(mul_scalar(inter, 2.0), eps);
  Var den = add_scalar(add(sum(p), make_const<double>(Tensor::scalar(gt01.array().sum()))), eps);
  return add_scalar(neg(div(num, den)), 1.0);
}

Var bce_loss(const Var& pred, const Tensor& gt01) { return bce_with_logits(pred, gt01); }

Var mce_loss(const Var& class_logits_at_points, const std::vector<Index>& labels) {
  return softmax_cross_entropy(class_logits_at_points, labels);
}

std::vector<TrackGt> build_track_gt(const VideoAnnotation& ann, const std::vector<int>& track_ids,
                                    const std::vector<int>& thing_order) {
  const Index T = (Index)ann.frames.size();
  const Index H = ann.frames[0].height, W = ann.frames[0].width;
  std::vector<TrackGt> out;
  for (int tid : track_ids) {
    TrackGt g;
    g.track_id = tid;
    g.class_idx = thing_order.empty() ? -1 : class_index(thing_order, track_class(ann, tid));
    g.masks.assign((std::size_t)(T * H * W), 0);
    for (Index t = 0; t < T; ++t) {
      auto m = track_mask(ann.frames[(std::size_t)t], tid);
      std::copy(m.begin(), m.end(), g.masks.begin() + (std::ptrdiff_t)(t * H * W));
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<std::uint8_t> non_object_mask(const std::vector<TrackGt>& tracks, Index T, Index height,
                                          Index width) {
  std::vector<std::uint8_t> out((std::size_t)(T * height * width), 1);
  for (const auto& g : tracks)
    for (std::size_t i = 0; i < out.size(); ++i)
      if (g.masks[i]) out[i] = 0;
  return out;
}

namespace {

double bce_scalar(const std::vector<double>& pred, const Tensor& gt) {
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double x = pred[i], t = gt[(Index)i];
    s += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  return s / double(pred.size());
}

double dice_scalar(const std::vector<double>& pred, const Tensor& gt) {
  const double eps = 1.0;
  double inter = 0, psum = 0, gsum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i] >= 0 ? 1.0 / (1.0 + std::exp(-pred[i]))
                                  : std::exp(pred[i]) / (1.0 + std::exp(pred[i]));
    inter += p * gt[(Index)i];
    psum += p;
    gsum += gt[(Index)i];
  }
  return 1.0 - (2.0 * inter + eps) / (psum + gsum + eps);
}

}  // namespace

Tensor vis_cost_matrix(const Tensor& inst_mask_logits, const Tensor& class_logits,
                       const std::vector<TrackGt>& gt, const std::vector<Tensor>& row_points,
                       Index height, Index width, const MatchWeights& w) {
  const Index I = inst_mask_logits.dim(0), G = (Index)gt.size();
  const Index C1 = class_logits.dim(1);
  Tensor cost({I, G});
  if (G == 0) return cost;
  for (Index i = 0; i < I; ++i) {
    // softmax class probabilities of row i
    double m = -1e300;
    for (Index c = 0; c < C1; ++c) m = std::max(m, class_logits.at(i, c));
    double z = 0;
    for (Index c = 0; c < C1; ++c) z += std::exp(class_logits.at(i, c) - m);
    // predicted logits at this row's supervision points
    const Tensor& pts = row_points[(std::size_t)i];
    const Index P = pts.dim(0);
    const Index Tm = inst_mask_logits.dim(1), H4 = inst_mask_logits.dim(2), W4 = inst_mask_logits.dim(3);
    (void)Tm;
    std::vector<double> pred((std::size_t)P);
    for (Index p = 0; p < P; ++p) {
      const Index t = (Index)pts.at(p, (Index)0);
      pred[(std::size_t)p] = inst_mask_logits[((i * inst_mask_logits.dim(1) + t) * H4 +
                                               (Index)pts.at(p, (Index)1)) * W4 +
                                              (Index)pts.at(p, (Index)2)];
    }
    for (Index g = 0; g < G; ++g) {
      const double prob =
          std::exp(class_logits.at(i, gt[(std::size_t)g].class_idx) - m) / z;
      Tensor gts = gt_at_points(gt[(std::size_t)g].masks, height, width, pts);
      cost.at(i, g) = w.cls * (-prob) + w.bce * bce_scalar(pred, gts) + w.dice * dice_scalar(pred, gts);
    }
  }
  return cost;
}

namespace {

struct TermAccum {
  Var cls, bce, dice, mce;
  void add_to(Var& dst, const Var& v) { dst = dst ? add(dst, v) : v; }
};

Tensor mask_row_values(const Tensor& ml, Index row) {
  const Index T = ml.dim(1), H4 = ml.dim(2), W4 = ml.dim(3);
  return Tensor({T, H4, W4}, ml.array().segment(row * T * H4 * W4, T * H4 * W4));
}

/// Point sampling is seeded by the row's content rather than the row's
/// position, so permuting queries permutes point sets with them and the
/// total loss is permutation-invariant.
Rng content_keyed_rng(const Tensor& row_values, std::uint64_t layer_seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(row_values.data());
  for (Index i = 0; i < row_values.size() * (Index)sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return Rng(h ^ layer_seed);
}

double value_of(const Var& v) { return v ? v->value[0] : 0.0; }

PointSampleConfig points_cfg(const TrainConfig& cfg) {
  return {cfg.num_points, cfg.oversample_ratio, cfg.importance_ratio};
}

/// Shared instance-supervision block for VIS and VPS.
void instance_terms(const LayerOutput& lo, const std::vector<RoleTag>& roles,
                    const std::vector<TrackGt>& gt, Index T, Index H, Index W,
                    const TrainConfig& cfg, std::uint64_t layer_seed, TermAccum& acc) {
  const auto inst = role_indices(roles, QueryRole::Instance);
  const Index I = (Index)inst.size();
  if (I == 0) return;
  const Tensor& ml = lo.mask_logits->value;

  std::vector<Tensor> row_pts;
  for (Index i = 0; i < I; ++i) {
    Tensor row = mask_row_values(ml, inst[(std::size_t)i]);
    Rng row_rng = content_keyed_rng(row, layer_seed);
    row_pts.push_back(sample_supervision_points(row, H, W, points_cfg(cfg), row_rng));
  }

  Tensor inst_ml({I, ml.dim(1), ml.dim(2), ml.dim(3)});
  for (Index i = 0; i < I; ++i)
    inst_ml.array().segment(i * ml.size() / ml.dim(0), ml.size() / ml.dim(0)) =
        ml.array().segment(inst[(std::size_t)i] * ml.size() / ml.dim(0), ml.size() / ml.dim(0));
  Tensor cost = vis_cost_matrix(inst_ml, lo.class_logits->value, gt, row_pts, H, W,
                                {cfg.lambda_cls, cfg.lambda_bce, cfg.lambda_dice});
  auto pairs = hungarian_match(cost);

  const Index C1 = lo.class_logits->value.dim(1);
  std::vector<Index> labels((std::size_t)I, C1 - 1);  // background column
  for (auto [i, g] : pairs) labels[(std::size_t)i] = gt[(std::size_t)g].class_idx;
  acc.add_to(acc.cls, softmax_cross_entropy(lo.class_logits, labels));

  Var bce_sum, dice_sum;
  Index n_rows = 0;
  for (auto [i, g] : pairs) {
    Var pred = sample_pred_at_points(lo.mask_logits, inst[(std::size_t)i], row_pts[(std::size_t)i], H, W);
    Tensor gts = gt_at_points(gt[(std::size_t)g].masks, H, W, row_pts[(std::size_t)i]);
    bce_sum = bce_sum ? add(bce_sum, bce_loss(pred, gts)) : bce_loss(pred, gts);
    dice_sum = dice_sum ? add(dice_sum, dice_loss(pred, gts)) : dice_loss(pred, gts);
    ++n_rows;
  }
  // catch-all background query segments every non-object pixel
  const Index bg = vis_background_index(roles);
  if (bg >= 0) {
    Tensor row = mask_row_values(ml, bg);
    Rng row_rng = content_keyed_rng(row, layer_seed);
    Tensor pts = sample_supervision_points(row, H, W, points_cfg(cfg), row_rng);
    Var pred = sample_pred_at_points(lo.mask_logits, bg, pts, H, W);
    Tensor gts = gt_at_points(non_object_mask(gt, T, H, W), H, W, pts);
    bce_sum = bce_sum ? add(bce_sum, bce_loss(pred, gts)) : bce_loss(pred, gts);
    dice_sum = dice_sum ? add(dice_sum, dice_loss(pred, gts)) : dice_loss(pred, gts);
    ++n_rows;
  }
  if (n_rows > 0) {
    acc.add_to(acc.bce, mul_scalar(bce_sum, 1.0 / double(n_rows)));
    acc.add_to(acc.dice, mul_scalar(dice_sum, 1.0 / double(n_rows)));
  }
}

void semantic_terms(const LayerOutput& lo, const std::vector<RoleTag>& roles,
                    const TaskSample& sample, const std::vector<int>& order_all, Index H, Index W,
                    const TrainConfig& cfg, std::uint64_t layer_seed, TermAccum& acc) {
  const auto sem = role_indices(roles, QueryRole::Semantic);
  const Index C = (Index)sem.size();
  if (C == 0) return;
  const Tensor& ml = lo.mask_logits->value;
  Tensor sem_ml({C, ml.dim(1), ml.dim(2), ml.dim(3)});
  for (Index c = 0; c < C; ++c)
    sem_ml.array().segment(c * ml.size() / ml.dim(0), ml.size() / ml.dim(0)) =
        ml.array().segment(sem[(std::size_t)c] * ml.size() / ml.dim(0), ml.size() / ml.dim(0));
  Rng sem_rng = content_keyed_rng(sem_ml, layer_seed);
  Tensor pts = sample_semantic_points(sem_ml, H, W, points_cfg(cfg), sem_rng);
  const Index P = pts.dim(0);

  std::vector<Var> per_class;
  for (Index c = 0; c < C; ++c)
    per_class.push_back(
        reshape(sample_pred_at_points(lo.mask_logits, sem[(std::size_t)c], pts, H, W), {P, 1}));
  Var logits = concat_last<double>(per_class);

  std::vector<Index> labels((std::size_t)P);
  std::vector<std::vector<Index>> sem_maps;
  for (const auto& fr : sample.ann.frames) sem_maps.push_back(semantic_index_map(fr, order_all));
  for (Index p = 0; p < P; ++p) {
    const Index t = (Index)pts.at(p, (Index)0);
    const Index y = std::min<Index>((Index)pts.at(p, (Index)1) * 4 + 2, H - 1);
    const Index x = std::min<Index>((Index)pts.at(p, (Index)2) * 4 + 2, W - 1);
    labels[(std::size_t)p] = sem_maps[(std::size_t)t][(std::size_t)(y * W + x)];
  }
  acc.add_to(acc.mce, mce_loss(logits, labels));
}

TaskLossResult finalize(std::vector<TermAccum>& per_layer, const TrainConfig& cfg) {
  TaskLossResult res;
  Var cls, bce, dice, mce;
  auto join = [](Var& dst, const Var& v) {
    if (v) dst = dst ? add(dst, v) : v;
  };
  for (auto& acc : per_layer) {
    LossTerms t{value_of(acc.cls), value_of(acc.bce), value_of(acc.dice), value_of(acc.mce)};
    res.report.layers.push_back(t);
    res.report.terms.cls += t.cls;
    res.report.terms.mask_bce += t.mask_bce;
    res.report.terms.mask_dice += t.mask_dice;
    res.report.terms.semantic_mce += t.semantic_mce;
    join(cls, acc.cls);
    join(bce, acc.bce);
    join(dice, acc.dice);
    join(mce, acc.mce);
  }
  Var total;
  auto addw = [&total](const Var& v, double w) {
    if (!v) return;
    Var scaled = mul_scalar(v, w);
    total = total ? add(total, scaled) : scaled;
  };
  addw(cls, cfg.lambda_cls);
  addw(bce, cfg.lambda_bce);
  addw(dice, cfg.lambda_dice);
  addw(mce, cfg.lambda_cls);  // semantic CE carries the classification weight
  if (!total) total = make_const<double>(Tensor::scalar(0.0));
  res.total = total;
  res.report.total = cfg.lambda_cls * (res.report.terms.cls + res.report.terms.semantic_mce) +
                     cfg.lambda_bce * res.report.terms.mask_bce +
                     cfg.lambda_dice * res.report.terms.mask_dice;
  return res;
}

}  // namespace

TaskLossResult vis_loss(const SegmentationOutput& seg, const TaskSample& sample,
                        const std::vector<int>& thing_order, const TrainConfig& cfg, Rng& rng) {
  const Index T = seg.T;
  const Index H = (Index)sample.ann.frames[0].height, W = (Index)sample.ann.frames[0].width;
  auto gt = build_track_gt(sample.ann, sample.target_tracks, thing_order);
  const std::uint64_t step_seed = rng.next_u64();
  std::vector<TermAccum> per_layer(seg.layers.size());
  for (std::size_t l = 0; l < seg.layers.size(); ++l)
    instance_terms(seg.layers[l], seg.roles, gt, T, H, W, cfg, splitmix64(step_seed + l), per_layer[l]);
  return finalize(per_layer, cfg);
}

TaskLossResult vps_loss(const SegmentationOutput& seg, const TaskSample& sample,
                        const std::vector<int>& order_all, const std::vector<int>& thing_order,
                        const TrainConfig& cfg, Rng& rng) {
  const Index T = seg.T;
  const Index H = (Index)sample.ann.frames[0].height, W = (Index)sample.ann.frames[0].width;
  auto gt = build_track_gt(sample.ann, sample.target_tracks, thing_order);
  const std::uint64_t step_seed = rng.next_u64();
  std::vector<TermAccum> per_layer(seg.layers.size());
  for (std::size_t l = 0; l < seg.layers.size(); ++l) {
    const std::uint64_t ls = splitmix64(step_seed + l);
    instance_terms(seg.layers[l], seg.roles, gt, T, H, W, cfg, ls, per_layer[l]);
    semantic_terms(seg.layers[l], seg.roles, sample, order_all, H, W, cfg, ls, per_layer[l]);
  }
  return finalize(per_layer, cfg);
}

TaskLossResult vos_pet_loss(const SegmentationOutput& seg, const TaskSample& sample,
                            const TrainConfig& cfg, Rng& rng) {
  const Index T = seg.T;
  const Index H = (Index)sample.ann.frames[0].height, W = (Index)sample.ann.frames[0].width;
  auto gt = build_track_gt(sample.ann, sample.target_tracks, {});
  const Index O = (Index)gt.size();
  const std::uint64_t step_seed = rng.next_u64();

  std::vector<TermAccum> per_layer(seg.layers.size());
  for (std::size_t l = 0; l < seg.layers.size(); ++l) {
    const std::uint64_t layer_seed = splitmix64(step_seed + l);
    const LayerOutput& lo = seg.layers[l];
    auto obj = role_indices(seg.roles, QueryRole::Object);
    if ((Index)obj.size() % std::max<Index>(O, 1) != 0 || obj.empty())
      throw std::invalid_argument("vos_pet_loss: object query groups do not match targets");
    const Index q_o = (Index)obj.size() / O;
    Var obj_rows = gather_front(lo.mask_logits, obj);
    Var per_object = group_max_front(obj_rows, q_o);  // (O, T, H4, W4)

    Var bce_sum, dice_sum;
    Index n_rows = 0;
    for (Index o = 0; o < O; ++o) {
      Tensor row = mask_row_values(per_object->value, o);
      Rng row_rng = content_keyed_rng(row, layer_seed);
      Tensor pts = sample_supervision_points(row, H, W, points_cfg(cfg), row_rng);
      Var pred = sample_pred_at_points(per_object, o, pts, H, W);
      Tensor gts = gt_at_points(gt[(std::size_t)o].masks, H, W, pts);
      bce_sum = bce_sum ? add(bce_sum, bce_loss(pred, gts)) : bce_loss(pred, gts);
      dice_sum = dice_sum ? add(dice_sum, dice_loss(pred, gts)) : dice_loss(pred, gts);
      ++n_rows;
    }
    auto bg = vos_background_indices(seg.roles);
    if (!bg.empty()) {
      Var bg_rows = gather_front(lo.mask_logits, bg);
      Var bg_max = group_max_front(bg_rows, (Index)bg.size());  // per-pixel max aggregate
      Tensor row = mask_row_values(bg_max->value, 0);
      Rng row_rng = content_keyed_rng(row, layer_seed);
      Tensor pts = sample_supervision_points(row, H, W, points_cfg(cfg), row_rng);
      Var pred = sample_pred_at_points(bg_max, 0, pts, H, W);
      Tensor gts = gt_at_points(non_object_mask(gt, T, H, W), H, W, pts);
      bce_sum = add(bce_sum, bce_loss(pred, gts));
      dice_sum = add(dice_sum, dice_loss(pred, gts));
      ++n_rows;
    }
    per_layer[l].add_to(per_layer[l].bce, mul_scalar(bce_sum, 1.0 / double(n_rows)));
    per_layer[l].add_to(per_layer[l].dice, mul_scalar(dice_sum, 1.0 / double(n_rows)));
  }
  return finalize(per_layer, cfg);
}

}  // namespace tarvis
