#include "tarvis/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace tarvis {

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (!a.empty() && !b.empty() && a.size() != b.size())
    throw std::invalid_argument("mask_iou: shape mismatch");
  double inter = 0, uni = 0;
  const std::size_t n = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    const bool va = i < a.size() && a[i];
    const bool vb = i < b.size() && b[i];
    inter += va && vb;
    uni += va || vb;
  }
  return uni == 0 ? 1.0 : inter / uni;
}

namespace {

/// Mask pixels with at least one 4-neighbor outside the mask (or the image).
std::vector<std::pair<Index, Index>> boundary_pixels(const std::vector<std::uint8_t>& mask,
                                                     Index height, Index width) {
  std::vector<std::pair<Index, Index>> out;
  if (mask.empty()) return out;
  auto at = [&](Index y, Index x) {
    return y >= 0 && y < height && x >= 0 && x < width && mask[(std::size_t)(y * width + x)];
  };
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      if (!mask[(std::size_t)(y * width + x)]) continue;
      if (!at(y - 1, x) || !at(y + 1, x) || !at(y, x - 1) || !at(y, x + 1)) out.emplace_back(y, x);
    }
  return out;
}

double matched_fraction(const std::vector<std::pair<Index, Index>>& from,
                        const std::vector<std::pair<Index, Index>>& to, Index tol) {
  if (from.empty()) return 1.0;
  Index matched = 0;
  for (const auto& [y, x] : from) {
    bool ok = false;
    for (const auto& [gy, gx] : to) {
      if (std::abs(gy - y) <= tol && std::abs(gx - x) <= tol) {
        ok = true;
        break;
      }
    }
    matched += ok;
  }
  return double(matched) / double(from.size());
}

}  // namespace

double boundary_f_measure(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                          Index height, Index width, Index tolerance) {
  auto bp = boundary_pixels(pred, height, width);
  auto bg = boundary_pixels(gt, height, width);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  const double precision = matched_fraction(bp, bg, tolerance);
  const double recall = matched_fraction(bg, bp, tolerance);
  return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

Index id_switch_count(const std::vector<TrackResult>& pred, const VideoAnnotation& gt) {
  const Index T = (Index)gt.frames.size();
  Index switches = 0;
  for (int tid : list_tracks(gt)) {
    int prev_match = -1;
    for (Index t = 0; t < T; ++t) {
      auto gm = track_mask(gt.frames[(std::size_t)t], tid);
      bool any = false;
      for (auto v : gm) any |= v != 0;
      if (!any) continue;
      int match = -1;
      double best = 0.5;  // match threshold
      for (const auto& tr : pred) {
        if ((Index)tr.masks.size() <= t || tr.masks[(std::size_t)t].empty()) continue;
        const double iou = mask_iou(tr.masks[(std::size_t)t], gm);
        if (iou >= best) {
          best = iou;
          match = tr.id;
        }
      }
      if (match < 0) continue;  // unmatched frames never count as switches
      if (prev_match >= 0 && match != prev_match) ++switches;
      prev_match = match;
    }
  }
  return switches;
}

namespace {

std::vector<std::vector<std::uint8_t>> gt_track_stack(const VideoAnnotation& gt, int tid) {
  std::vector<std::vector<std::uint8_t>> out;
  for (const auto& fr : gt.frames) {
    auto m = track_mask(fr, tid);
    bool any = false;
    for (auto v : m) any |= v != 0;
    out.push_back(any ? m : std::vector<std::uint8_t>());
  }
  return out;
}

double track_j(const std::vector<std::vector<std::uint8_t>>& pred,
               const std::vector<std::vector<std::uint8_t>>& gt) {
  double s = 0;
  for (std::size_t t = 0; t < gt.size(); ++t)
    s += mask_iou(t < pred.size() ? pred[t] : std::vector<std::uint8_t>(), gt[t]);
  return s / double(gt.size());
}

double track_f(const std::vector<std::vector<std::uint8_t>>& pred,
               const std::vector<std::vector<std::uint8_t>>& gt, Index H, Index W) {
  double s = 0;
  for (std::size_t t = 0; t < gt.size(); ++t)
    s += boundary_f_measure(t < pred.size() ? pred[t] : std::vector<std::uint8_t>(), gt[t], H, W, 1);
  return s / double(gt.size());
}

}  // namespace

double vis_average_precision_50(const std::vector<TrackResult>& pred, const VideoAnnotation& gt) {
  auto gt_ids = list_tracks(gt);
  if (gt_ids.empty()) return pred.empty() ? 1.0 : 0.0;
  std::vector<const TrackResult*> by_score;
  for (const auto& tr : pred) by_score.push_back(&tr);
  std::sort(by_score.begin(), by_score.end(),
            [](const TrackResult* a, const TrackResult* b) { return a->score > b->score; });
  std::set<int> used;
  double ap = 0;
  Index tp = 0;
  for (std::size_t k = 0; k < by_score.size(); ++k) {
    int best_gt = -1;
    double best = 0.5;
    for (int tid : gt_ids) {
      if (used.count(tid)) continue;
      const double iou = stack_iou(by_score[k]->masks, gt_track_stack(gt, tid));
      if (iou >= best) {
        best = iou;
        best_gt = tid;
      }
    }
    if (best_gt >= 0) {
      used.insert(best_gt);
      ++tp;
      ap += double(tp) / double(k + 1);  // precision at this recall point
    }
  }
  return ap / double(gt_ids.size());
}

double semantic_mean_iou(const std::vector<PanopticFrame>& pred,
                         const std::vector<PanopticFrame>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("semantic_mean_iou: frame count");
  std::map<int, std::array<double, 3>> per_class;  // class -> {inter, pred, gt}
  for (std::size_t t = 0; t < gt.size(); ++t) {
    const PanopticFrame& pf = pred[t];
    const PanopticFrame& gf = gt[t];
    std::vector<int> pclass(65536, -1), gclass(65536, -1);
    for (const auto& s : pf.segments) pclass[(std::size_t)s.segment_id] = s.class_id;
    for (const auto& s : gf.segments) gclass[(std::size_t)s.segment_id] = s.class_id;
    for (std::size_t i = 0; i < gf.segment_map.size(); ++i) {
      const int pc = pclass[pf.segment_map[i]];
      const int gc = gclass[gf.segment_map[i]];
      if (gc >= 0) {
        per_class[gc][2] += 1;
        if (pc == gc) per_class[gc][0] += 1;
      }
      if (pc >= 0) per_class[pc][1] += 1;
    }
  }
  double total = 0;
  Index n = 0;
  for (auto& [cls, acc] : per_class) {
    if (acc[2] == 0) continue;  // classes present in gt only
    const double uni = acc[1] + acc[2] - acc[0];
    total += uni == 0 ? 1.0 : acc[0] / uni;
    ++n;
  }
  return n == 0 ? 1.0 : total / double(n);
}

EvalReport evaluate(const VideoResult& result, const VideoAnnotation& gt, Task task,
                    const std::vector<int>& target_tracks) {
  EvalReport rep;
  const Index H = (Index)gt.frames[0].height, W = (Index)gt.frames[0].width;
  if (task == Task::VOS || task == Task::PET) {
    if (result.tracks.size() != target_tracks.size())
      throw std::invalid_argument("evaluate: object track count does not match targets");
    double j = 0, f = 0;
    for (std::size_t o = 0; o < target_tracks.size(); ++o) {
      auto gts = gt_track_stack(gt, target_tracks[o]);
      j += track_j(result.tracks[o].masks, gts);
      f += track_f(result.tracks[o].masks, gts, H, W);
    }
    const double n = double(std::max<std::size_t>(target_tracks.size(), 1));
    rep.mean_iou = j / n;
    rep.boundary_f = f / n;
    rep.jf = (*rep.mean_iou + *rep.boundary_f) / 2;
    return rep;
  }

  // VIS / VPS: assign prediction tracks to gt tracks by spatio-temporal IoU
  auto gt_ids = list_tracks(gt);
  const Index G = (Index)gt_ids.size(), P = (Index)result.tracks.size();
  double j = 0, f = 0;
  if (G > 0 && P > 0) {
    Tensor iou({std::max(P, G), std::max(P, G)});
    iou.array().setConstant(0.0);
    std::vector<std::vector<std::vector<std::uint8_t>>> gstacks;
    for (int tid : gt_ids) gstacks.push_back(gt_track_stack(gt, tid));
    for (Index p = 0; p < P; ++p)
      for (Index g = 0; g < G; ++g)
        iou.at(p, g) = stack_iou(result.tracks[(std::size_t)p].masks, gstacks[(std::size_t)g]);
    Tensor cost({std::max(P, G), G});
    cost.array().setConstant(0.0);
    for (Index p = 0; p < std::max(P, G); ++p)
      for (Index g = 0; g < G; ++g) cost.at(p, g) = -(p < P ? iou.at(p, g) : 0.0);
    for (auto [p, g] : hungarian_match(cost)) {
      if (p >= P) continue;  // padding row: gt track left unmatched
      j += track_j(result.tracks[(std::size_t)p].masks, gstacks[(std::size_t)g]);
      f += track_f(result.tracks[(std::size_t)p].masks, gstacks[(std::size_t)g], H, W);
    }
  } else if (G == 0) {
    j = f = double(G);
  }
  rep.mean_iou = G == 0 ? 1.0 : j / double(G);
  rep.boundary_f = G == 0 ? 1.0 : f / double(G);
  rep.jf = (*rep.mean_iou + *rep.boundary_f) / 2;
  rep.id_switches = id_switch_count(result.tracks, gt);
  rep.vis_ap50 = vis_average_precision_50(result.tracks, gt);
  if (task == Task::VPS) {
    if (result.panoptic.empty()) throw std::invalid_argument("evaluate: vps result has no panoptic maps");
    rep.semantic_miou = semantic_mean_iou(result.panoptic, gt.frames);
    for (const auto& fr : result.panoptic) {
      std::set<std::uint16_t> present(fr.segment_map.begin(), fr.segment_map.end());
      if (present.count(0)) throw std::runtime_error("evaluate: panoptic output not complete");
    }
  }
  return rep;
}

void write_eval_json(const EvalReport& rep, const std::string& path) {
  nlohmann::json j;
  auto put = [&j](const char* key, const auto& opt) {
    if (opt) {
      j[key] = *opt;
    } else {
      j[key] = nullptr;
    }
  };
  put("mean_iou", rep.mean_iou);
  put("boundary_f", rep.boundary_f);
  put("jf", rep.jf);
  put("id_switches", rep.id_switches);
  put("vis_ap50", rep.vis_ap50);
  put("semantic_miou", rep.semantic_miou);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eval report: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace tarvis
