#include "tarvis/inference.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "tarvis/image.hpp"

namespace tarvis {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::pair<Index, Index>> window_video(Index t_video, const InferenceConfig& cfg) {
  cfg.validate();
  if (t_video < 1) throw std::invalid_argument("window_video: empty video");
  std::vector<std::pair<Index, Index>> out;
  if (t_video <= cfg.t_clip) {
    out.emplace_back(0, t_video);
    return out;
  }
  const Index stride = cfg.t_clip - cfg.t_ov;
  Index start = 0;
  while (true) {
    if (start + cfg.t_clip >= t_video) {
      start = t_video - cfg.t_clip;  // clamp: may deepen the overlap, never duplicates
      if (out.empty() || out.back().first != start) out.emplace_back(start, t_video);
      break;
    }
    out.emplace_back(start, start + cfg.t_clip);
    start += stride;
  }
  return out;
}

double stack_iou(const std::vector<std::vector<std::uint8_t>>& a,
                 const std::vector<std::vector<std::uint8_t>>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("stack_iou: frame-count mismatch");
  double inter = 0, uni = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    const auto& ma = a[t];
    const auto& mb = b[t];
    if (!ma.empty() && !mb.empty() && ma.size() != mb.size())
      throw std::invalid_argument("stack_iou: mask size mismatch");
    const std::size_t n = std::max(ma.size(), mb.size());
    for (std::size_t i = 0; i < n; ++i) {
      const bool va = i < ma.size() && ma[i];
      const bool vb = i < mb.size() && mb[i];
      inter += va && vb;
      uni += va || vb;
    }
  }
  return uni == 0 ? 1.0 : inter / uni;
}

std::vector<std::pair<Index, Index>> associate_instances(
    const std::vector<std::vector<std::vector<std::uint8_t>>>& prev,
    const std::vector<std::vector<std::vector<std::uint8_t>>>& next, double iou_min) {
  const Index P = (Index)prev.size(), N = (Index)next.size();
  if (P == 0 || N == 0) return {};
  Tensor iou({N, P});
  for (Index n = 0; n < N; ++n)
    for (Index p = 0; p < P; ++p) iou.at(n, p) = stack_iou(next[(std::size_t)n], prev[(std::size_t)p]);

  // hungarian needs rows >= cols; match the smaller set into the larger
  std::vector<std::pair<Index, Index>> pairs;  // (new, prev)
  if (N >= P) {
    Tensor cost({N, P});
    for (Index i = 0; i < cost.size(); ++i) cost[i] = -iou[i];
    for (auto [n, p] : hungarian_match(cost)) pairs.emplace_back(n, p);
  } else {
    Tensor cost({P, N});
    for (Index p = 0; p < P; ++p)
      for (Index n = 0; n < N; ++n) cost.at(p, n) = -iou.at(n, p);
    for (auto [p, n] : hungarian_match(cost)) pairs.emplace_back(n, p);
  }
  std::vector<std::pair<Index, Index>> kept;
  for (auto [n, p] : pairs)
    if (iou.at(n, p) >= iou_min) kept.emplace_back(n, p);
  return kept;
}

Tensor merge_semantic(const Tensor& prev_logits, const Tensor& new_logits, Index overlap_start,
                      Index overlap_count) {
  if (!(prev_logits.shape() == new_logits.shape()))
    throw std::invalid_argument("merge_semantic: shape mismatch");
  const Index C = prev_logits.dim(0), T = prev_logits.dim(1);
  const Index plane = prev_logits.dim(2) * prev_logits.dim(3);
  if (overlap_start < 0 || overlap_start + overlap_count > T)
    throw std::invalid_argument("merge_semantic: overlap range");
  Tensor out = new_logits;
  for (Index c = 0; c < C; ++c)
    for (Index t = overlap_start; t < overlap_start + overlap_count; ++t)
      for (Index i = 0; i < plane; ++i) {
        const Index at = (c * T + t) * plane + i;
        out[at] = 0.5 * (prev_logits[at] + new_logits[at]);
      }
  return out;
}

std::vector<Index> rle_encode(const std::vector<std::uint8_t>& mask) {
  std::vector<Index> counts;
  std::uint8_t cur = 0;  // runs start with zeros
  Index run = 0;
  for (std::uint8_t v : mask) {
    const std::uint8_t b = v ? 1 : 0;
    if (b == cur) {
      ++run;
    } else {
      counts.push_back(run);
      cur = b;
      run = 1;
    }
  }
  counts.push_back(run);
  return counts;
}

std::vector<std::uint8_t> rle_decode(const std::vector<Index>& counts, Index size) {
  std::vector<std::uint8_t> mask;
  mask.reserve((std::size_t)size);
  std::uint8_t cur = 0;
  for (Index c : counts) {
    for (Index i = 0; i < c; ++i) mask.push_back(cur);
    cur = cur ? 0 : 1;
  }
  if ((Index)mask.size() != size) throw std::invalid_argument("rle_decode: size mismatch");
  return mask;
}

namespace {

/// Full-resolution binarization of one (T,H4,W4) logit row: bilinear x4
/// upsampling, then the sigmoid-0.5 (logit zero) threshold.
std::vector<std::vector<std::uint8_t>> binarize_row(const Tensor& ml, Index row, Index H, Index W) {
  const Index T = ml.dim(1), H4 = ml.dim(2), W4 = ml.dim(3);
  std::vector<std::vector<std::uint8_t>> out((std::size_t)T);
  for (Index t = 0; t < T; ++t) {
    Tensor plane({H4, W4}, ml.array().segment((row * T + t) * H4 * W4, H4 * W4));
    Tensor up = bilinear_resize_plane(plane, H, W);
    auto& m = out[(std::size_t)t];
    m.assign((std::size_t)(H * W), 0);
    bool any = false;
    for (Index i = 0; i < H * W; ++i) {
      m[(std::size_t)i] = up[i] > 0.0;
      any |= m[(std::size_t)i] != 0;
    }
    if (!any) m.clear();  // absent in this frame
  }
  return out;
}

Tensor softmax_vec(const Tensor& logits_row, Index n) {
  Tensor p({n});
  double m = -1e300;
  for (Index i = 0; i < n; ++i) m = std::max(m, logits_row[i]);
  double z = 0;
  for (Index i = 0; i < n; ++i) {
    p[i] = std::exp(logits_row[i] - m);
    z += p[i];
  }
  for (Index i = 0; i < n; ++i) p[i] /= z;
  return p;
}

struct VisTrackState {
  int id = -1;
  Tensor prob_sum;  // (C+1)
  Index windows_seen = 0;
  std::vector<std::vector<std::uint8_t>> overlap_masks;  // masks on the frames shared with the next window
};

struct ObjectState {
  bool active = false;
  Index rows = 0;
  Tensor queries, embeddings;  // encoder outputs of the latest window (carry source)
  std::vector<std::uint8_t> handoff_mask;  // full-res mask at the next window's first frame
};

struct EngineResult {
  std::vector<TrackResult> instance_tracks;
  std::vector<TrackResult> object_tracks;
  std::vector<PanopticFrame> panoptic;
};

VideoClip slice_clip(const VideoClip& video, Index start, Index len) {
  VideoClip c;
  const Index H = video.height(), W = video.width();
  c.rgb = Tensor({len, H, W, 3});
  std::copy(video.rgb.data() + start * H * W * 3, video.rgb.data() + (start + len) * H * W * 3,
            c.rgb.data());
  return c;
}

}  // namespace

static VideoResult run_video_impl(const TarvisModel& model, const VideoClip& video, bool want_vis,
                                  bool want_sem, bool want_obj, Task obj_task,
                                  const VideoTargets& targets, const InferenceConfig& cfg,
                                  std::uint64_t seed, const std::string& task_name_out) {
  cfg.validate();
  NoGradGuard no_grad;
  const Index T = video.frames(), H = video.height(), W = video.width();
  const Index H4 = H / 4, W4 = W / 4;
  auto windows = window_video(T, cfg);

  if (want_vis && !model.bank().has_dataset(targets.dataset))
    throw std::invalid_argument("run_video: unknown dataset '" + targets.dataset + "'");
  if (want_obj && targets.cues.empty()) throw std::invalid_argument("run_video: task requires cues");
  if (!want_obj && !targets.cues.empty() && !want_vis)
    throw std::invalid_argument("run_video: cues given for a query-bank task");

  const Index C1 = want_vis ? (want_sem ? (Index)model.bank().entry(targets.dataset).order.size() + 1
                                        : model.bank().entry(targets.dataset).num_things + 1)
                            : 0;

  std::map<int, VisTrackState> store;  // track id -> state
  int next_id = 1;
  std::map<int, std::vector<std::vector<std::uint8_t>>> track_masks;  // id -> per-frame output
  const Index O = (Index)targets.cues.size();
  std::vector<ObjectState> objects((std::size_t)O);
  std::vector<std::vector<std::vector<std::uint8_t>>> object_masks((std::size_t)O);
  for (auto& om : object_masks) om.resize((std::size_t)T);

  Tensor sem_full;  // (C, T, H4, W4) merged across windows
  std::vector<std::uint8_t> sem_covered((std::size_t)T, 0);
  if (want_sem) sem_full = Tensor({C1 - 1, T, H4, W4});

  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto [s, e] = windows[k];
    const Index Tw = e - s;
    Rng wrng = Rng::stream(seed, (std::uint64_t)k + 1);
    VideoClip clip = slice_clip(video, s, Tw);
    FeaturePyramid pyr = model.features(make_const<double>(clip.rgb));

    // assemble the window's query set
    std::vector<TargetQuerySet> parts;
    if (want_vis)
      parts.push_back(want_sem ? model.bank().build_vps_queries(targets.dataset)
                               : model.bank().build_vis_queries(targets.dataset));

    std::vector<Index> window_objects;  // object indices active this window, in order
    if (want_obj) {
      std::vector<CueInput> encode_cues;
      std::vector<Index> encode_objs;
      std::vector<std::array<Index, 3>> point_cues;
      std::vector<Index> point_objs;
      std::vector<Index> carried_objs;
      for (Index o = 0; o < O; ++o) {
        const ObjectCue& cue = targets.cues[(std::size_t)o];
        auto& st = objects[(std::size_t)o];
        if (!st.active) {
          if (cue.frame >= s && cue.frame < e) {
            st.active = true;
            if (obj_task == Task::PET) {
              point_cues.push_back({cue.frame - s, cue.point_y, cue.point_x});
              point_objs.push_back(o);
            } else {
              CueInput ci;
              ci.frame = cue.frame - s;
              ci.mask = cue.mask;
              encode_cues.push_back(std::move(ci));
              encode_objs.push_back(o);
            }
          }
          continue;
        }
        // already tracked: re-encode from the previous window's prediction
        bool any = false;
        for (auto v : st.handoff_mask) any |= v != 0;
        if (any) {
          CueInput ci;
          ci.frame = 0;  // the first overlap frame is this window's first frame
          ci.mask = st.handoff_mask;
          encode_cues.push_back(std::move(ci));
          encode_objs.push_back(o);
        } else {
          carried_objs.push_back(o);  // fully occluded: keep its previous queries
        }
      }

      const Index q_o = model.config().object_encoder.queries_per_object;
      std::map<Index, std::pair<Tensor, Tensor>> rows_by_obj;  // -> (queries, embeddings)
      if (!encode_cues.empty()) {
        TargetQuerySet enc = model.object_encoder().encode_from_masks(encode_cues, pyr, q_o, wrng);
        const Index D = enc.queries->value.cols();
        for (std::size_t i = 0; i < encode_objs.size(); ++i) {
          Tensor q({q_o, D}), em({q_o, D});
          for (Index r = 0; r < q_o; ++r)
            for (Index d = 0; d < D; ++d) {
              q.at(r, d) = enc.queries->value.at((Index)i * q_o + r, d);
              em.at(r, d) = enc.embeddings->value.at((Index)i * q_o + r, d);
            }
          rows_by_obj[encode_objs[i]] = {q, em};
        }
        // background rows from the mask path carry over to the merged set below
        auto bg_idx = role_indices(enc.roles, QueryRole::Background);
        if (!bg_idx.empty()) {
          Tensor bq({(Index)bg_idx.size(), D}), be({(Index)bg_idx.size(), D});
          for (std::size_t i = 0; i < bg_idx.size(); ++i)
            for (Index d = 0; d < D; ++d) {
              bq.at((Index)i, d) = enc.queries->value.at(bg_idx[i], d);
              be.at((Index)i, d) = enc.embeddings->value.at(bg_idx[i], d);
            }
          rows_by_obj[-1] = {bq, be};
        }
      }
      if (!point_cues.empty()) {
        TargetQuerySet enc = model.object_encoder().encode_from_points(point_cues, pyr, wrng);
        const Index D = enc.queries->value.cols();
        for (std::size_t i = 0; i < point_objs.size(); ++i) {
          Tensor q({1, D}), em({1, D});
          for (Index d = 0; d < D; ++d) {
            q.at((Index)0, d) = enc.queries->value.at((Index)i, d);
            em.at((Index)0, d) = enc.embeddings->value.at((Index)i, d);
          }
          rows_by_obj[point_objs[i]] = {q, em};
        }
        if (rows_by_obj.find(-1) == rows_by_obj.end()) {
          auto bg_idx = role_indices(enc.roles, QueryRole::Background);
          if (!bg_idx.empty()) {
            Tensor bq({(Index)bg_idx.size(), D}), be({(Index)bg_idx.size(), D});
            for (std::size_t i = 0; i < bg_idx.size(); ++i)
              for (Index d = 0; d < D; ++d) {
                bq.at((Index)i, d) = enc.queries->value.at(bg_idx[i], d);
                be.at((Index)i, d) = enc.embeddings->value.at(bg_idx[i], d);
              }
            rows_by_obj[-1] = {bq, be};
          }
        }
      }
      for (Index o : carried_objs)
        rows_by_obj[o] = {objects[(std::size_t)o].queries, objects[(std::size_t)o].embeddings};

      // merged object part in global object order, then background cells
      TargetQuerySet obj_part;
      std::vector<Var> qrows, erows;
      for (Index o = 0; o < O; ++o) {
        auto it = rows_by_obj.find(o);
        if (it == rows_by_obj.end()) continue;
        window_objects.push_back(o);
        const Tensor& q = it->second.first;
        qrows.push_back(make_const<double>(q));
        erows.push_back(make_const<double>(it->second.second));
        for (Index r = 0; r < q.dim(0); ++r)
          obj_part.roles.push_back({QueryRole::Object, (int)o, (int)r});
        objects[(std::size_t)o].rows = q.dim(0);
        objects[(std::size_t)o].queries = q;
        objects[(std::size_t)o].embeddings = it->second.second;
      }
      if (auto it = rows_by_obj.find(-1); it != rows_by_obj.end()) {
        qrows.push_back(make_const<double>(it->second.first));
        erows.push_back(make_const<double>(it->second.second));
        for (Index b = 0; b < it->second.first.dim(0); ++b)
          obj_part.roles.push_back({QueryRole::Background, (int)b, 0});
      }
      if (!qrows.empty()) {
        obj_part.queries = concat_front<double>(qrows);
        obj_part.embeddings = concat_front<double>(erows);
        parts.push_back(std::move(obj_part));
      }
    }
    if (parts.empty()) throw std::invalid_argument("run_video: no queries for this task");
    TargetQuerySet qs = parts.size() == 1 ? parts[0] : concat_task_queries(parts);

    auto [refined, seg] = model.decode(qs, pyr,
                                       want_vis ? std::optional<std::string>(targets.dataset)
                                                : std::nullopt);
    const LayerOutput& lo = seg.final_layer();
    const Tensor& ml = lo.mask_logits->value;

    // --- VIS / VPS instance bookkeeping ---
    if (want_vis) {
      auto inst = role_indices(qs.roles, QueryRole::Instance);
      const Index I = (Index)inst.size();
      std::vector<std::vector<std::vector<std::uint8_t>>> slot_masks((std::size_t)I);
      std::vector<bool> nonempty((std::size_t)I, false);
      for (Index i = 0; i < I; ++i) {
        slot_masks[(std::size_t)i] = binarize_row(ml, inst[(std::size_t)i], H, W);
        for (const auto& m : slot_masks[(std::size_t)i]) nonempty[(std::size_t)i] = nonempty[(std::size_t)i] || !m.empty();
      }

      std::vector<int> slot_to_id((std::size_t)I, -1);
      const Index ov = k == 0 ? 0 : windows[k - 1].second - s;
      if (k > 0 && ov > 0) {
        std::vector<int> prev_ids;
        std::vector<std::vector<std::vector<std::uint8_t>>> prev_ov;
        for (auto& [id, st] : store) {
          if (st.overlap_masks.empty()) continue;
          prev_ids.push_back(id);
          prev_ov.push_back(st.overlap_masks);
        }
        std::vector<std::vector<std::vector<std::uint8_t>>> new_ov;
        std::vector<Index> new_slots;
        for (Index i = 0; i < I; ++i) {
          if (!nonempty[(std::size_t)i]) continue;
          new_slots.push_back(i);
          new_ov.emplace_back(slot_masks[(std::size_t)i].begin(), slot_masks[(std::size_t)i].begin() + ov);
        }
        for (auto [n, p] : associate_instances(prev_ov, new_ov, cfg.iou_min))
          slot_to_id[(std::size_t)new_slots[(std::size_t)n]] = prev_ids[(std::size_t)p];
      }
      for (Index i = 0; i < I; ++i) {
        if (!nonempty[(std::size_t)i]) continue;
        if (slot_to_id[(std::size_t)i] < 0) slot_to_id[(std::size_t)i] = next_id++;
      }
      // clear last-window overlap buffers; tracks not redetected stay alive
      for (auto& [id, st] : store) st.overlap_masks.clear();

      const Index next_ov = k + 1 < windows.size() ? e - windows[k + 1].first : 0;
      for (Index i = 0; i < I; ++i) {
        if (!nonempty[(std::size_t)i]) continue;
        const int id = slot_to_id[(std::size_t)i];
        VisTrackState& st = store[id];
        if (st.id < 0) {
          st.id = id;
          st.prob_sum = Tensor::zeros({C1});
        }
        Tensor probs = softmax_vec(
            Tensor({C1}, lo.class_logits->value.array().segment(i * C1, C1)), C1);
        st.prob_sum.array() += probs.array();
        st.windows_seen += 1;
        auto& frames = track_masks[id];
        frames.resize((std::size_t)T);
        for (Index t = 0; t < Tw; ++t) frames[(std::size_t)(s + t)] = slot_masks[(std::size_t)i][(std::size_t)t];
        if (next_ov > 0)
          st.overlap_masks.assign(slot_masks[(std::size_t)i].end() - next_ov, slot_masks[(std::size_t)i].end());
      }
    }

    // --- VPS semantic merge ---
    if (want_sem) {
      auto sem = role_indices(qs.roles, QueryRole::Semantic);
      const Index C = (Index)sem.size();
      Tensor win_sem({C, Tw, H4, W4});
      for (Index c = 0; c < C; ++c)
        win_sem.array().segment(c * Tw * H4 * W4, Tw * H4 * W4) =
            ml.array().segment(sem[(std::size_t)c] * ml.size() / ml.dim(0), Tw * H4 * W4);
      // build the aligned full-video view of this window, then pairwise-merge
      for (Index c = 0; c < C; ++c)
        for (Index t = 0; t < Tw; ++t) {
          const Index gt_t = s + t;
          for (Index i = 0; i < H4 * W4; ++i) {
            const Index src = (c * Tw + t) * H4 * W4 + i;
            const Index dst = (c * T + gt_t) * H4 * W4 + i;
            sem_full[dst] = sem_covered[(std::size_t)gt_t]
                                ? 0.5 * (sem_full[dst] + win_sem[src])  // arithmetic mean on overlap
                                : win_sem[src];
          }
        }
      for (Index t = 0; t < Tw; ++t) sem_covered[(std::size_t)(s + t)] = 1;
    }

    // --- VOS / PET outputs and handoff ---
    if (want_obj && !window_objects.empty()) {
      auto obj_idx = role_indices(qs.roles, QueryRole::Object);
      // per-object max over sub-queries, kept in window_objects order
      const Index nw = (Index)window_objects.size();
      std::vector<Tensor> obj_logits((std::size_t)nw);
      {
        Index row = 0;
        for (Index j = 0; j < nw; ++j) {
          const Index rows = objects[(std::size_t)window_objects[(std::size_t)j]].rows;
          Tensor lm({Tw, H4, W4});
          lm.array().setConstant(-1e30);
          for (Index r = 0; r < rows; ++r) {
            const Index src_row = obj_idx[(std::size_t)(row + r)];
            for (Index i = 0; i < Tw * H4 * W4; ++i)
              lm[i] = std::max(lm[i], ml[src_row * Tw * H4 * W4 + i]);
          }
          obj_logits[(std::size_t)j] = std::move(lm);
          row += rows;
        }
      }
      Tensor bg_logit({Tw, H4, W4});
      bg_logit.array().setConstant(-1e30);
      for (Index b : vos_background_indices(qs.roles))
        for (Index i = 0; i < Tw * H4 * W4; ++i) bg_logit[i] = std::max(bg_logit[i], ml[b * Tw * H4 * W4 + i]);
      const bool has_bg = !vos_background_indices(qs.roles).empty();

      // per-pixel argmax over objects + background gives disjoint masks
      auto argmax_masks = [&](Index t_local) {
        std::vector<std::vector<std::uint8_t>> result((std::size_t)nw);
        for (auto& m : result) m.assign((std::size_t)(H4 * W4), 0);
        for (Index i = 0; i < H4 * W4; ++i) {
          Index best = -1;
          double bv = has_bg ? bg_logit[t_local * H4 * W4 + i] : 0.0;
          for (Index j = 0; j < nw; ++j) {
            const double v = obj_logits[(std::size_t)j][t_local * H4 * W4 + i];
            if (v > bv) {
              bv = v;
              best = j;
            }
          }
          if (best >= 0) result[(std::size_t)best][(std::size_t)i] = 1;
        }
        return result;  // at F4 resolution
      };

      // full-resolution output masks for every frame of this window
      for (Index j = 0; j < nw; ++j) {
        const Index o = window_objects[(std::size_t)j];
        Tensor asml({1, Tw, H4, W4}, obj_logits[(std::size_t)j].array());
        auto frames = binarize_row(asml, 0, H, W);
        // suppress pixels lost to other objects: argmax refinement at F4
        for (Index t = 0; t < Tw; ++t) {
          auto am = argmax_masks(t);
          if (frames[(std::size_t)t].empty()) continue;
          bool any = false;
          auto& m = frames[(std::size_t)t];
          for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x) {
              auto& v = m[(std::size_t)(y * W + x)];
              v = v && am[(std::size_t)j][(std::size_t)((y / 4) * W4 + x / 4)];
              any |= v != 0;
            }
          if (!any) m.clear();
          object_masks[(std::size_t)o][(std::size_t)(s + t)] = m;
        }
      }

      // handoff mask at the next window's first frame
      if (k + 1 < windows.size()) {
        const Index next_start_local = windows[k + 1].first - s;
        auto am = argmax_masks(next_start_local);
        for (Index j = 0; j < nw; ++j) {
          const Index o = window_objects[(std::size_t)j];
          auto& hm = objects[(std::size_t)o].handoff_mask;
          hm.assign((std::size_t)(H * W), 0);
          for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x)
              hm[(std::size_t)(y * W + x)] = am[(std::size_t)j][(std::size_t)((y / 4) * W4 + x / 4)];
        }
      }
    }
  }

  // --- assemble the result ---
  VideoResult res;
  res.task = task_name_out;
  res.T = T;
  res.H = H;
  res.W = W;
  res.windows = windows;
  res.emitted_after_window.resize((std::size_t)T);
  for (Index f = 0; f < T; ++f) {
    Index at = 0;
    for (std::size_t k = 0; k < windows.size(); ++k)
      if (f >= windows[k].first && f < windows[k].second) {
        at = (Index)k;
        break;
      }
    res.emitted_after_window[(std::size_t)f] = at;
  }

  std::vector<TrackResult> accepted;
  if (want_vis) {
    for (auto& [id, st] : store) {
      Tensor mean = st.prob_sum;
      mean.array() /= double(st.windows_seen);
      Index cls = 0;
      double best = -1;
      for (Index c = 0; c < C1 - 1; ++c)
        if (mean[c] > best) {
          best = mean[c];
          cls = c;
        }
      bool any = false;
      for (const auto& m : track_masks[id]) any |= !m.empty();
      if (!any || best < cfg.score_min) continue;
      TrackResult tr;
      tr.id = id;
      // class index -> dataset class id (thing order prefixes the full order)
      tr.class_id = model.bank().entry(targets.dataset).order[(std::size_t)cls];
      tr.score = best;
      tr.masks = track_masks[id];
      tr.masks.resize((std::size_t)T);
      accepted.push_back(std::move(tr));
    }
    std::sort(accepted.begin(), accepted.end(),
              [](const TrackResult& a, const TrackResult& b) { return a.id < b.id; });
    res.tracks = accepted;
  }

  if (want_obj) {
    for (Index o = 0; o < O; ++o) {
      TrackResult tr;
      tr.id = (int)o + 1;
      tr.masks = object_masks[(std::size_t)o];
      (want_vis ? res.object_tracks : res.tracks).push_back(std::move(tr));
      res.target_tracks.push_back(targets.cues[(std::size_t)o].track_id);
    }
  }

  if (want_sem) {
    // panoptic fusion: accepted things claim pixels by descending score
    const auto& order = model.bank().entry(targets.dataset).order;
    const Index num_things = model.bank().entry(targets.dataset).num_things;
    std::vector<const TrackResult*> by_score;
    for (const auto& tr : res.tracks) by_score.push_back(&tr);
    std::sort(by_score.begin(), by_score.end(),
              [](const TrackResult* a, const TrackResult* b) { return a->score > b->score; });
    res.panoptic.resize((std::size_t)T);
    for (Index t = 0; t < T; ++t) {
      PanopticFrame& fr = res.panoptic[(std::size_t)t];
      fr.height = H;
      fr.width = W;
      fr.segment_map.assign((std::size_t)(H * W), 0);
      std::uint16_t seg_id = 0;
      for (const TrackResult* tr : by_score) {
        const auto& m = tr->masks[(std::size_t)t];
        if (m.empty()) continue;
        Index total = 0, claimed = 0;
        for (Index i = 0; i < H * W; ++i) {
          if (!m[(std::size_t)i]) continue;
          ++total;
          claimed += fr.segment_map[(std::size_t)i] == 0;
        }
        if (total == 0 || double(claimed) / double(total) < cfg.panoptic_overlap) continue;
        ++seg_id;
        for (Index i = 0; i < H * W; ++i)
          if (m[(std::size_t)i] && fr.segment_map[(std::size_t)i] == 0) fr.segment_map[(std::size_t)i] = seg_id;
        fr.segments.push_back({(int)seg_id, tr->class_id, true, tr->id});
      }
      // remaining pixels: semantic argmax over the stuff rows, so panoptic
      // completeness holds and every thing segment keeps a track id
      const Index C = C1 - 1;
      std::vector<Index> f4_arg((std::size_t)(H4 * W4), num_things);
      for (Index i = 0; i < H4 * W4; ++i) {
        double best_v = -1e300;
        for (Index c = num_things; c < C; ++c) {
          const double v = sem_full[(c * T + t) * H4 * W4 + i];
          if (v > best_v) {
            best_v = v;
            f4_arg[(std::size_t)i] = c;
          }
        }
      }
      std::map<Index, std::uint16_t> stuff_seg;
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x) {
          auto& cell = fr.segment_map[(std::size_t)(y * W + x)];
          if (cell != 0) continue;
          const Index best_c = f4_arg[(std::size_t)(std::min(y / 4, H4 - 1) * W4 + std::min(x / 4, W4 - 1))];
          auto it = stuff_seg.find(best_c);
          if (it == stuff_seg.end()) {
            ++seg_id;
            stuff_seg[best_c] = seg_id;
            fr.segments.push_back({(int)seg_id, order[(std::size_t)best_c], false, -1});
          }
          cell = stuff_seg[best_c];
        }
    }
  }
  return res;
}

VideoResult run_video(const TarvisModel& model, const VideoClip& video, Task task,
                      const VideoTargets& targets, const InferenceConfig& cfg, std::uint64_t seed) {
  switch (task) {
    case Task::VIS:
      return run_video_impl(model, video, true, false, false, task, targets, cfg, seed, "vis");
    case Task::VPS:
      return run_video_impl(model, video, true, true, false, task, targets, cfg, seed, "vps");
    case Task::VOS:
      return run_video_impl(model, video, false, false, true, task, targets, cfg, seed, "vos");
    case Task::PET:
      return run_video_impl(model, video, false, false, true, task, targets, cfg, seed, "pet");
  }
  throw std::invalid_argument("run_video: bad task");
}

VideoResult run_video_mixed(const TarvisModel& model, const VideoClip& video,
                            const VideoTargets& targets, const InferenceConfig& cfg,
                            std::uint64_t seed) {
  return run_video_impl(model, video, true, false, true, Task::VOS, targets, cfg, seed, "mixed");
}

// ---------------------------------------------------------------------------
// result files
// ---------------------------------------------------------------------------

namespace {

json track_to_json(const TrackResult& tr, Index H, Index W) {
  json masks = json::array();
  for (const auto& m : tr.masks) {
    if (m.empty()) {
      masks.push_back(nullptr);
    } else {
      masks.push_back({{"size", {H, W}}, {"counts", rle_encode(m)}});
    }
  }
  json out = {{"id", tr.id}, {"masks", masks}};
  out["class_id"] = tr.class_id >= 0 ? json(tr.class_id) : json(nullptr);
  out["score"] = tr.score >= 0 ? json(tr.score) : json(nullptr);
  return out;
}

TrackResult track_from_json(const json& j, Index T, Index H, Index W) {
  TrackResult tr;
  tr.id = j.at("id").get<int>();
  tr.class_id = j.at("class_id").is_null() ? -1 : j.at("class_id").get<int>();
  tr.score = j.at("score").is_null() ? -1.0 : j.at("score").get<double>();
  tr.masks.resize((std::size_t)T);
  const auto& masks = j.at("masks");
  for (Index t = 0; t < T && t < (Index)masks.size(); ++t) {
    if (masks.at((std::size_t)t).is_null()) continue;
    std::vector<Index> counts;
    for (const auto& c : masks.at((std::size_t)t).at("counts")) counts.push_back(c.get<Index>());
    tr.masks[(std::size_t)t] = rle_decode(counts, H * W);
  }
  return tr;
}

}  // namespace

void write_video_result(const VideoResult& res, const std::string& dir) {
  fs::create_directories(dir);
  json j;
  j["schema_version"] = 1;
  j["task"] = res.task;
  j["num_frames"] = res.T;
  j["height"] = res.H;
  j["width"] = res.W;
  json win = json::array();
  for (auto [s, e] : res.windows) win.push_back({s, e});
  j["windows"] = win;
  j["emitted_after_window"] = res.emitted_after_window;
  j["target_tracks"] = res.target_tracks;
  json tracks = json::array();
  for (const auto& tr : res.tracks) tracks.push_back(track_to_json(tr, res.H, res.W));
  j["tracks"] = tracks;
  json otracks = json::array();
  for (const auto& tr : res.object_tracks) otracks.push_back(track_to_json(tr, res.H, res.W));
  j["object_tracks"] = otracks;
  if (!res.panoptic.empty()) {
    fs::create_directories(fs::path(dir) / "panoptic");
    json pan = json::array();
    for (std::size_t t = 0; t < res.panoptic.size(); ++t) {
      const PanopticFrame& fr = res.panoptic[t];
      ImageGray16 ids(fr.height, fr.width);
      ids.pixels = fr.segment_map;
      char name[16];
      std::snprintf(name, sizeof(name), "%05d.png", (int)t);
      write_png((fs::path(dir) / "panoptic" / name).string(), ids);
      json segs = json::array();
      for (const auto& sg : fr.segments) {
        json js = {{"id", sg.segment_id}, {"class_id", sg.class_id}, {"is_thing", sg.is_thing}};
        js["track_id"] = sg.is_thing ? json(sg.track_id) : json(nullptr);
        segs.push_back(js);
      }
      pan.push_back({{"frame", (Index)t}, {"segments", segs}});
    }
    j["panoptic"] = pan;
  }
  std::ofstream out(fs::path(dir) / "result.json");
  if (!out) throw std::runtime_error("cannot write result to " + dir);
  out << j.dump(2) << "\n";
}

VideoResult read_video_result(const std::string& dir) {
  const fs::path path = fs::path(dir) / "result.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing result file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt result " + path.string() + ": " + e.what());
  }
  VideoResult res;
  res.task = j.at("task").get<std::string>();
  res.T = j.at("num_frames").get<Index>();
  res.H = j.at("height").get<Index>();
  res.W = j.at("width").get<Index>();
  for (const auto& w : j.at("windows")) res.windows.emplace_back(w.at(0).get<Index>(), w.at(1).get<Index>());
  for (const auto& e : j.at("emitted_after_window")) res.emitted_after_window.push_back(e.get<Index>());
  for (const auto& t : j.value("target_tracks", nlohmann::json::array())) res.target_tracks.push_back(t.get<int>());
  for (const auto& t : j.at("tracks")) res.tracks.push_back(track_from_json(t, res.T, res.H, res.W));
  for (const auto& t : j.at("object_tracks"))
    res.object_tracks.push_back(track_from_json(t, res.T, res.H, res.W));
  if (j.contains("panoptic")) {
    for (const auto& p : j.at("panoptic")) {
      char name[16];
      std::snprintf(name, sizeof(name), "%05d.png", (int)p.at("frame").get<Index>());
      ImageGray16 ids = read_png_gray16((fs::path(dir) / "panoptic" / name).string());
      PanopticFrame fr;
      fr.height = ids.height;
      fr.width = ids.width;
      fr.segment_map = std::move(ids.pixels);
      for (const auto& sg : p.at("segments")) {
        SegmentInfo info;
        info.segment_id = sg.at("id").get<int>();
        info.class_id = sg.at("class_id").get<int>();
        info.is_thing = sg.at("is_thing").get<bool>();
        info.track_id = sg.at("track_id").is_null() ? -1 : sg.at("track_id").get<int>();
        fr.segments.push_back(info);
      }
      res.panoptic.push_back(std::move(fr));
    }
  }
  return res;
}

}  // namespace tarvis
