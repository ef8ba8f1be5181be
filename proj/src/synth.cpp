#include "tarvis/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace tarvis {

const char* task_name(Task t) {
  switch (t) {
    case Task::VIS: return "vis";
    case Task::VPS: return "vps";
    case Task::VOS: return "vos";
    case Task::PET: return "pet";
  }
  return "?";
}

Task task_from_name(const std::string& s) {
  if (s == "vis") return Task::VIS;
  if (s == "vps") return Task::VPS;
  if (s == "vos") return Task::VOS;
  if (s == "pet") return Task::PET;
  throw std::invalid_argument("unknown task: " + s);
}

std::vector<int> class_order(const ClassTable& classes, bool include_stuff) {
  std::vector<int> things, stuff;
  for (const auto& c : classes) (c.is_thing ? things : stuff).push_back(c.id);
  std::sort(things.begin(), things.end());
  std::sort(stuff.begin(), stuff.end());
  if (include_stuff) things.insert(things.end(), stuff.begin(), stuff.end());
  return things;
}

Index class_index(const std::vector<int>& order, int class_id) {
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] == class_id) return (Index)i;
  throw std::out_of_range("class id not in order: " + std::to_string(class_id));
}

void SceneConfig::validate() const {
  if (height % 32 != 0 || width % 32 != 0)
    throw std::invalid_argument("scene: height and width must be divisible by 32");
  if (num_frames < 1) throw std::invalid_argument("scene: num_frames must be >= 1");
  if (min_things < 0 || max_things < min_things) throw std::invalid_argument("scene: bad thing count range");
  if (max_things > 0 && thing_classes.empty()) throw std::invalid_argument("scene: no thing classes");
  if (stuff_classes.empty()) throw std::invalid_argument("scene: no stuff classes");
  std::set<int> t(thing_classes.begin(), thing_classes.end());
  for (int s : stuff_classes)
    if (t.count(s)) throw std::invalid_argument("scene: thing/stuff class sets overlap");
  if (min_stuff_regions < 1 || max_stuff_regions < min_stuff_regions)
    throw std::invalid_argument("scene: bad stuff region range");
  if (min_speed < 0 || max_speed < min_speed) throw std::invalid_argument("scene: bad speed range");
  if (min_size <= 0 || max_size < min_size || max_size > 0.5)
    throw std::invalid_argument("scene: bad size range");
}

const SegmentInfo* PanopticFrame::find(int segment_id) const {
  for (const auto& s : segments)
    if (s.segment_id == segment_id) return &s;
  return nullptr;
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch ((int)i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

/// Stable class palette: saturated for things, muted for stuff.
Rgb class_color(int class_id, bool is_thing) {
  const double hue = 0.61803398875 * double(class_id);
  return is_thing ? hsv_to_rgb(hue, 0.85, 0.95) : hsv_to_rgb(hue, 0.40, 0.50);
}

struct ThingSpec {
  int cls = 0;
  int kind = 0;  // 0 ellipse, 1 box, 2 triangle
  double a = 8, b = 8;
  double x = 0, y = 0, vx = 0, vy = 0;
  double angle = 0, vrot = 0;
  Rgb color{1, 1, 1};
};

bool inside_shape(const ThingSpec& s, double cx, double cy, double px, double py, double ang) {
  const double dx = px - cx, dy = py - cy;
  const double ca = std::cos(-ang), sa = std::sin(-ang);
  const double lx = ca * dx - sa * dy, ly = sa * dx + ca * dy;
  switch (s.kind) {
    case 0: return (lx * lx) / (s.a * s.a) + (ly * ly) / (s.b * s.b) <= 1.0;
    case 1: return std::abs(lx) <= s.a && std::abs(ly) <= s.b;
    default: {
      // isoceles triangle with apex up in local coords
      const double x0 = 0, y0 = -s.b, x1 = -s.a, y1 = s.b, x2 = s.a, y2 = s.b;
      auto cross = [](double ax, double ay, double bx, double by) { return ax * by - ay * bx; };
      const double d0 = cross(x1 - x0, y1 - y0, lx - x0, ly - y0);
      const double d1 = cross(x2 - x1, y2 - y1, lx - x1, ly - y1);
      const double d2 = cross(x0 - x2, y0 - y2, lx - x2, ly - y2);
      const bool neg = d0 < 0 || d1 < 0 || d2 < 0, pos = d0 > 0 || d1 > 0 || d2 > 0;
      return !(neg && pos);
    }
  }
}

std::pair<VideoClip, VideoAnnotation> try_generate(const SceneConfig& cfg, std::uint64_t seed,
                                                   Index& n_things_out) {
  Rng rng(seed);
  const Index H = cfg.height, W = cfg.width, T = cfg.num_frames;

  // stuff layout, fixed over time
  Index regions = rng.uniform_int(cfg.min_stuff_regions, cfg.max_stuff_regions);
  regions = std::min<Index>(regions, (Index)cfg.stuff_classes.size());
  std::vector<int> stuff_pick(cfg.stuff_classes);
  rng.shuffle(stuff_pick);
  stuff_pick.resize((std::size_t)regions);

  std::vector<Index> region_of((std::size_t)(H * W));
  if (cfg.voronoi_stuff) {
    std::vector<std::pair<double, double>> seeds;
    for (Index r = 0; r < regions; ++r)
      seeds.emplace_back(rng.uniform(0, double(H)), rng.uniform(0, double(W)));
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        Index best = 0;
        double bd = 1e30;
        for (Index r = 0; r < regions; ++r) {
          const double dy = y - seeds[(std::size_t)r].first, dx = x - seeds[(std::size_t)r].second;
          const double d = dy * dy + dx * dx;
          if (d < bd) {
            bd = d;
            best = r;
          }
        }
        region_of[(std::size_t)(y * W + x)] = best;
      }
  } else {
    std::vector<double> cuts;
    for (Index r = 0; r + 1 < regions; ++r) cuts.push_back(rng.uniform(0.15, 0.85));
    std::sort(cuts.begin(), cuts.end());
    for (Index y = 0; y < H; ++y) {
      Index r = 0;
      while (r < (Index)cuts.size() && double(y) >= cuts[(std::size_t)r] * double(H)) ++r;
      for (Index x = 0; x < W; ++x) region_of[(std::size_t)(y * W + x)] = r;
    }
  }

  // things
  const Index n_things = cfg.max_things == 0 ? 0 : rng.uniform_int(cfg.min_things, cfg.max_things);
  n_things_out = n_things;
  std::vector<ThingSpec> things((std::size_t)n_things);
  const double base = 0.5 * double(std::min(H, W));
  for (auto& th : things) {
    th.cls = cfg.thing_classes[(std::size_t)rng.uniform_int((Index)cfg.thing_classes.size())];
    th.kind = (int)rng.uniform_int(3);
    th.a = base * rng.uniform(cfg.min_size, cfg.max_size);
    th.b = th.a * rng.uniform(0.65, 1.0);
    th.x = rng.uniform(th.a, double(W - 1) - th.a);
    th.y = rng.uniform(th.b, double(H - 1) - th.b);
    const double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    const double dir = rng.uniform(0, 6.283185307179586);
    th.vx = speed * std::cos(dir);
    th.vy = speed * std::sin(dir);
    th.angle = rng.uniform(0, 6.283185307179586);
    th.vrot = rng.uniform(-cfg.rotation_jitter, cfg.rotation_jitter);
    const Rgb c = class_color(th.cls, true);
    const double lum = rng.uniform(0.85, 1.0);
    th.color = {c.r * lum, c.g * lum, c.b * lum};
  }
  // painter's order, fixed at scene creation
  std::vector<Index> depth((std::size_t)n_things);
  for (Index i = 0; i < n_things; ++i) depth[(std::size_t)i] = i;
  rng.shuffle(depth);

  // per-frame velocity jitter, drawn up front in a fixed order
  std::vector<double> jx((std::size_t)(n_things * T), 0.0), jy((std::size_t)(n_things * T), 0.0);
  for (Index t = 1; t < T; ++t)
    for (Index i = 0; i < n_things; ++i) {
      jx[(std::size_t)(i * T + t)] = rng.normal() * cfg.velocity_jitter;
      jy[(std::size_t)(i * T + t)] = rng.normal() * cfg.velocity_jitter;
    }

  // static luma noise plane
  std::vector<double> noise((std::size_t)(H * W));
  for (auto& v : noise) v = rng.uniform(-0.035, 0.035);

  // simulate positions
  std::vector<double> px((std::size_t)(n_things * T)), py((std::size_t)(n_things * T)),
      pa((std::size_t)(n_things * T));
  for (Index i = 0; i < n_things; ++i) {
    ThingSpec th = things[(std::size_t)i];
    for (Index t = 0; t < T; ++t) {
      px[(std::size_t)(i * T + t)] = th.x;
      py[(std::size_t)(i * T + t)] = th.y;
      pa[(std::size_t)(i * T + t)] = th.angle;
      th.vx += jx[(std::size_t)(i * T + t)];
      th.vy += jy[(std::size_t)(i * T + t)];
      th.x += th.vx;
      th.y += th.vy;
      th.angle += th.vrot;
      const double mx = std::min(th.a, double(W) / 4);
      const double my = std::min(th.b, double(H) / 4);
      if (th.x < mx) {
        th.x = 2 * mx - th.x;
        th.vx = -th.vx;
      }
      if (th.x > double(W - 1) - mx) {
        th.x = 2 * (double(W - 1) - mx) - th.x;
        th.vx = -th.vx;
      }
      if (th.y < my) {
        th.y = 2 * my - th.y;
        th.vy = -th.vy;
      }
      if (th.y > double(H - 1) - my) {
        th.y = 2 * (double(H - 1) - my) - th.y;
        th.vy = -th.vy;
      }
    }
  }

  VideoClip clip;
  clip.rgb = Tensor({T, H, W, 3});
  VideoAnnotation ann;
  ann.frames.resize((std::size_t)T);

  for (Index t = 0; t < T; ++t) {
    PanopticFrame& fr = ann.frames[(std::size_t)t];
    fr.height = H;
    fr.width = W;
    fr.segment_map.assign((std::size_t)(H * W), 0);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x)
        fr.segment_map[(std::size_t)(y * W + x)] = (std::uint16_t)(1 + region_of[(std::size_t)(y * W + x)]);
    for (Index d = 0; d < n_things; ++d) {
      const Index i = depth[(std::size_t)d];
      const ThingSpec& th = things[(std::size_t)i];
      const double cx = px[(std::size_t)(i * T + t)], cy = py[(std::size_t)(i * T + t)];
      const double ang = pa[(std::size_t)(i * T + t)];
      const double ext = std::max(th.a, th.b) + 1;
      const Index y0 = std::max<Index>(0, (Index)std::floor(cy - ext));
      const Index y1 = std::min<Index>(H - 1, (Index)std::ceil(cy + ext));
      const Index x0 = std::max<Index>(0, (Index)std::floor(cx - ext));
      const Index x1 = std::min<Index>(W - 1, (Index)std::ceil(cx + ext));
      const std::uint16_t id = (std::uint16_t)(1 + regions + i);
      for (Index y = y0; y <= y1; ++y)
        for (Index x = x0; x <= x1; ++x)
          if (inside_shape(th, cx, cy, double(x), double(y), ang))
            fr.segment_map[(std::size_t)(y * W + x)] = id;
    }
    // segment table: exactly the ids present
    std::set<std::uint16_t> present(fr.segment_map.begin(), fr.segment_map.end());
    for (std::uint16_t id : present) {
      SegmentInfo info;
      info.segment_id = (int)id;
      if (id <= regions) {
        info.class_id = stuff_pick[(std::size_t)(id - 1)];
        info.is_thing = false;
        info.track_id = -1;
      } else {
        const Index i = (Index)id - 1 - regions;
        info.class_id = things[(std::size_t)i].cls;
        info.is_thing = true;
        info.track_id = (int)i;
      }
      fr.segments.push_back(info);
    }
    // render
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const std::uint16_t id = fr.segment_map[(std::size_t)(y * W + x)];
        Rgb c;
        if (id <= regions) {
          c = class_color(stuff_pick[(std::size_t)(id - 1)], false);
        } else {
          c = things[(std::size_t)((Index)id - 1 - regions)].color;
        }
        const double n = noise[(std::size_t)(y * W + x)];
        clip.rgb.at(t, y, x, 0) = std::clamp(c.r + n, 0.0, 1.0);
        clip.rgb.at(t, y, x, 1) = std::clamp(c.g + n, 0.0, 1.0);
        clip.rgb.at(t, y, x, 2) = std::clamp(c.b + n, 0.0, 1.0);
      }
  }
  return {std::move(clip), std::move(ann)};
}

}  // namespace

std::pair<VideoClip, VideoAnnotation> generate_scene(const SceneConfig& config) {
  config.validate();
  // every track must be visible somewhere; re-roll fully occluded layouts
  for (int attempt = 0; attempt < 32; ++attempt) {
    Index n_things = 0;
    auto out = try_generate(config, splitmix64(config.seed) + (std::uint64_t)attempt, n_things);
    if ((Index)list_tracks(out.second).size() == n_things) return out;
  }
  throw std::runtime_error("generate_scene: could not place all objects visibly");
}

std::pair<VideoClip, VideoAnnotation> augment_still_to_clip(const Tensor& still,
                                                            const PanopticFrame& annotation, Index T,
                                                            const AugmentConfig& aug,
                                                            std::uint64_t seed) {
  if (T < 1) throw std::invalid_argument("augment_still_to_clip: T must be >= 1");
  if (still.rank() != 3 || still.dim(2) != 3)
    throw std::invalid_argument("augment_still_to_clip: still must be (H,W,3)");
  const Index H = still.dim(0), W = still.dim(1);
  if (annotation.height != H || annotation.width != W)
    throw std::invalid_argument("augment_still_to_clip: annotation size mismatch");
  Rng rng(seed);
  const double cx = double(W - 1) / 2, cy = double(H - 1) / 2;

  // cumulative forward affines; frame 0 is geometric identity
  struct Affine {
    double m00 = 1, m01 = 0, m10 = 0, m11 = 1, tx = 0, ty = 0;
  };
  auto compose = [](const Affine& a, const Affine& b) {  // a after b
    Affine r;
    r.m00 = a.m00 * b.m00 + a.m01 * b.m10;
    r.m01 = a.m00 * b.m01 + a.m01 * b.m11;
    r.m10 = a.m10 * b.m00 + a.m11 * b.m10;
    r.m11 = a.m10 * b.m01 + a.m11 * b.m11;
    r.tx = a.m00 * b.tx + a.m01 * b.ty + a.tx;
    r.ty = a.m10 * b.tx + a.m11 * b.ty + a.ty;
    return r;
  };
  std::vector<Affine> fwd((std::size_t)T);
  Affine cur;
  for (Index t = 1; t < T; ++t) {
    const double th = rng.uniform(-aug.max_rotate, aug.max_rotate);
    const double sc = 1.0 + rng.uniform(-aug.max_scale, aug.max_scale);
    const double tx = rng.uniform(-aug.max_translate, aug.max_translate);
    const double ty = rng.uniform(-aug.max_translate, aug.max_translate);
    Affine step;
    step.m00 = sc * std::cos(th);
    step.m01 = -sc * std::sin(th);
    step.m10 = sc * std::sin(th);
    step.m11 = sc * std::cos(th);
    // rotate/scale about the image center, then translate
    step.tx = cx - (step.m00 * cx + step.m01 * cy) + tx;
    step.ty = cy - (step.m10 * cx + step.m11 * cy) + ty;
    cur = compose(step, cur);
    fwd[(std::size_t)t] = cur;
  }

  VideoClip clip;
  clip.rgb = Tensor({T, H, W, 3});
  VideoAnnotation ann;
  ann.frames.resize((std::size_t)T);

  for (Index t = 0; t < T; ++t) {
    const Affine& A = fwd[(std::size_t)t];
    const double det = A.m00 * A.m11 - A.m01 * A.m10;
    const double i00 = A.m11 / det, i01 = -A.m01 / det, i10 = -A.m10 / det, i11 = A.m00 / det;
    const double itx = -(i00 * A.tx + i01 * A.ty), ity = -(i10 * A.tx + i11 * A.ty);
    const double cgain = 1.0 + rng.uniform(-aug.contrast, aug.contrast);
    const double cbias = rng.uniform(-aug.brightness, aug.brightness);

    PanopticFrame& fr = ann.frames[(std::size_t)t];
    fr.height = H;
    fr.width = W;
    fr.segment_map.assign((std::size_t)(H * W), 0);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double sx = i00 * x + i01 * y + itx;
        const double sy = i10 * x + i11 * y + ity;
        // rgb: bilinear, edge clamped
        const double fx = std::clamp(sx, 0.0, double(W - 1));
        const double fy = std::clamp(sy, 0.0, double(H - 1));
        const Index x0 = (Index)std::floor(fx), y0 = (Index)std::floor(fy);
        const Index x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        const double wx = fx - double(x0), wy = fy - double(y0);
        const bool photometric = cgain != 1.0 || cbias != 0.0;
        for (Index c = 0; c < 3; ++c) {
          const double v = (1 - wy) * ((1 - wx) * still.at(y0, x0, c) + wx * still.at(y0, x1, c)) +
                           wy * ((1 - wx) * still.at(y1, x0, c) + wx * still.at(y1, x1, c));
          clip.rgb.at(t, y, x, c) = photometric ? std::clamp((v - 0.5) * cgain + 0.5 + cbias, 0.0, 1.0) : v;
        }
        // ids: nearest neighbor, edge clamped
        const Index nx = (Index)std::clamp(std::round(sx), 0.0, double(W - 1));
        const Index ny = (Index)std::clamp(std::round(sy), 0.0, double(H - 1));
        fr.segment_map[(std::size_t)(y * W + x)] = annotation.id_at(ny, nx);
      }
    std::set<std::uint16_t> present(fr.segment_map.begin(), fr.segment_map.end());
    for (std::uint16_t id : present) {
      const SegmentInfo* info = annotation.find((int)id);
      if (!info) throw std::runtime_error("augment: segment map id missing from table");
      fr.segments.push_back(*info);
    }
  }
  return {std::move(clip), std::move(ann)};
}

TaskSample derive_task_targets(const VideoClip& clip, const VideoAnnotation& ann,
                               const ClassTable& classes, Task task, Rng& rng) {
  TaskSample out;
  out.task = task;
  out.clip = clip;
  out.ann = ann;
  auto tracks = list_tracks(ann);
  if (task == Task::VIS || task == Task::VPS) {
    out.target_tracks = tracks;
    return out;
  }
  if (tracks.empty()) throw std::runtime_error("no trackable objects");
  const Index k = 1 + rng.uniform_int((Index)tracks.size());
  auto pick = rng.sample_without_replacement((Index)tracks.size(), k);
  std::vector<int> chosen;
  for (Index i : pick) chosen.push_back(tracks[(std::size_t)i]);
  std::sort(chosen.begin(), chosen.end());
  out.target_tracks = chosen;
  const Index H = clip.height(), W = clip.width();
  for (int tid : chosen) {
    ObjectCue cue;
    cue.track_id = tid;
    cue.frame = first_visible_frame(ann, tid);
    auto mask = track_mask(ann.frames[(std::size_t)cue.frame], tid);
    if (task == Task::VOS) {
      cue.mask = std::move(mask);
    } else {
      auto [py, px] = interior_centroid(mask, H, W);
      cue.point_y = py;
      cue.point_x = px;
      cue.mask.assign((std::size_t)(H * W), 0);
      cue.mask[(std::size_t)(py * W + px)] = 1;
    }
    out.cues.push_back(std::move(cue));
  }
  return out;
}

Task sample_task(const std::map<Task, double>& weights, Rng& rng) {
  double total = 0;
  for (const auto& [t, w] : weights) {
    if (w < 0) throw std::invalid_argument("sample_task: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("sample_task: weights must sum to 1");
  std::vector<Task> order;
  std::vector<double> w;
  for (const auto& [t, wt] : weights) {
    order.push_back(t);
    w.push_back(wt);
  }
  return order[(std::size_t)rng.categorical(w)];
}

std::pair<VideoClip, VideoAnnotation> subclip(const VideoClip& clip, const VideoAnnotation& ann,
                                              Index start, Index len) {
  const Index T = clip.frames();
  if (start < 0 || len < 1 || start + len > T) throw std::out_of_range("subclip: range");
  const Index H = clip.height(), W = clip.width();
  VideoClip c;
  c.rgb = Tensor({len, H, W, 3});
  std::copy(clip.rgb.data() + start * H * W * 3, clip.rgb.data() + (start + len) * H * W * 3,
            c.rgb.data());
  VideoAnnotation a;
  a.frames.assign(ann.frames.begin() + start, ann.frames.begin() + start + len);
  return {std::move(c), std::move(a)};
}

std::vector<std::uint8_t> track_mask(const PanopticFrame& frame, int track_id) {
  int seg_id = -1;
  for (const auto& s : frame.segments)
    if (s.is_thing && s.track_id == track_id) seg_id = s.segment_id;
  std::vector<std::uint8_t> mask((std::size_t)(frame.height * frame.width), 0);
  if (seg_id < 0) return mask;
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = frame.segment_map[i] == (std::uint16_t)seg_id;
  return mask;
}

std::vector<int> list_tracks(const VideoAnnotation& ann) {
  std::set<int> ids;
  for (const auto& fr : ann.frames)
    for (const auto& s : fr.segments)
      if (s.is_thing) ids.insert(s.track_id);
  return {ids.begin(), ids.end()};
}

int track_class(const VideoAnnotation& ann, int track_id) {
  for (const auto& fr : ann.frames)
    for (const auto& s : fr.segments)
      if (s.is_thing && s.track_id == track_id) return s.class_id;
  throw std::out_of_range("track not found: " + std::to_string(track_id));
}

std::vector<Index> semantic_index_map(const PanopticFrame& frame, const std::vector<int>& order) {
  std::vector<Index> by_segment(65536, -1);
  for (const auto& s : frame.segments) by_segment[(std::size_t)s.segment_id] = class_index(order, s.class_id);
  std::vector<Index> out(frame.segment_map.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = by_segment[frame.segment_map[i]];
    if (out[i] < 0) throw std::runtime_error("semantic_index_map: id missing from table");
  }
  return out;
}

Index first_visible_frame(const VideoAnnotation& ann, int track_id) {
  for (std::size_t t = 0; t < ann.frames.size(); ++t)
    for (const auto& s : ann.frames[t].segments)
      if (s.is_thing && s.track_id == track_id) return (Index)t;
  return -1;
}

std::pair<Index, Index> interior_centroid(const std::vector<std::uint8_t>& mask, Index height,
                                          Index width) {
  double sy = 0, sx = 0;
  Index n = 0;
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      if (mask[(std::size_t)(y * width + x)]) {
        sy += double(y);
        sx += double(x);
        ++n;
      }
  if (n == 0) throw std::invalid_argument("interior_centroid: empty mask");
  Index cy = (Index)std::lround(sy / double(n));
  Index cx = (Index)std::lround(sx / double(n));
  cy = std::clamp<Index>(cy, 0, height - 1);
  cx = std::clamp<Index>(cx, 0, width - 1);
  if (mask[(std::size_t)(cy * width + cx)]) return {cy, cx};
  Index best_y = -1, best_x = -1;
  Index best_d = std::numeric_limits<Index>::max();
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      if (mask[(std::size_t)(y * width + x)]) {
        const Index d = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        if (d < best_d) {
          best_d = d;
          best_y = y;
          best_x = x;
        }
      }
  return {best_y, best_x};
}

}  // namespace tarvis
