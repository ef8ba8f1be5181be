#include "tarvis/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace tarvis {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

Index parse_int(const std::string& v) {
  std::size_t pos = 0;
  const long long x = std::stoll(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an integer: " + v);
  return (Index)x;
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  const double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not a number: " + v);
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a bool: " + v);
}

std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  for (const auto& p : split(v, ','))
    if (!p.empty()) out.push_back((int)parse_int(p));
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::map<Task, double> parse_task_weights(const std::string& v) {
  std::map<Task, double> out;
  for (const auto& p : split(v, ',')) {
    if (p.empty()) continue;
    const auto kv = split(p, ':');
    if (kv.size() != 2) throw std::invalid_argument("task weight entry must be task:weight, got " + p);
    out[task_from_name(kv[0])] = parse_double(kv[1]);
  }
  if (out.empty()) throw std::invalid_argument("empty task weight map");
  return out;
}

std::string fmt_task_weights(const std::map<Task, double>& w) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [t, x] : w) {
    os << (first ? "" : ",") << task_name(t) << ":" << fmt_double(x);
    first = false;
  }
  return os.str();
}

struct Entry {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Entry>& schema() {
  static const std::map<std::string, Entry> s = [] {
    std::map<std::string, Entry> m;
    auto add = [&m](const std::string& key, std::function<void(RunConfig&, const std::string&)> set,
                    std::function<std::string(const RunConfig&)> get) {
      m[key] = {std::move(set), std::move(get)};
    };
#define TARVIS_INT(key, expr)                                                        \
  add(key, [](RunConfig& c, const std::string& v) { expr = parse_int(v); },          \
      [](const RunConfig& c) { return std::to_string(expr); })
#define TARVIS_DOUBLE(key, expr)                                                     \
  add(key, [](RunConfig& c, const std::string& v) { expr = parse_double(v); },       \
      [](const RunConfig& c) { return fmt_double(expr); })
#define TARVIS_BOOL(key, expr)                                                       \
  add(key, [](RunConfig& c, const std::string& v) { expr = parse_bool(v); },         \
      [](const RunConfig& c) { return expr ? "true" : "false"; })
#define TARVIS_STRING(key, expr)                                                     \
  add(key, [](RunConfig& c, const std::string& v) { expr = v; },                     \
      [](const RunConfig& c) { return expr; })

    add("seed",
        [](RunConfig& c, const std::string& v) { c.seed = (std::uint64_t)std::stoull(v); },
        [](const RunConfig& c) { return std::to_string(c.seed); });

    TARVIS_INT("model.d_model", c.model.d_model);
    TARVIS_INT("model.instance_queries", c.model.instance_queries);
    TARVIS_BOOL("model.use_semantic_queries", c.model.use_semantic_queries);
    add("model.backbone.channels",
        [](RunConfig& c, const std::string& v) {
          auto xs = parse_int_list(v);
          if (xs.size() != 4) throw std::invalid_argument("backbone.channels needs 4 entries");
          for (int i = 0; i < 4; ++i) c.model.backbone.stage_channels[(std::size_t)i] = xs[(std::size_t)i];
        },
        [](const RunConfig& c) {
          std::vector<int> xs;
          for (Index x : c.model.backbone.stage_channels) xs.push_back((int)x);
          return fmt_int_list(xs);
        });
    TARVIS_INT("model.backbone.blocks_per_stage", c.model.backbone.blocks_per_stage);
    TARVIS_INT("model.backbone.gn_groups", c.model.backbone.gn_groups);
    TARVIS_INT("model.neck.layers", c.model.neck.num_layers);
    TARVIS_INT("model.neck.heads", c.model.neck.num_heads);
    TARVIS_INT("model.neck.deform_points", c.model.neck.deform_points);
    TARVIS_INT("model.neck.temporal_grid", c.model.neck.temporal_grid);
    TARVIS_BOOL("model.neck.temporal_attention", c.model.neck.temporal_attention);
    TARVIS_INT("model.decoder.layers", c.model.decoder.num_layers);
    TARVIS_INT("model.decoder.heads", c.model.decoder.num_heads);
    TARVIS_INT("model.decoder.mask_mlp_layers", c.model.decoder.mask_mlp_layers);
    TARVIS_DOUBLE("model.decoder.mask_threshold", c.model.decoder.mask_threshold);
    TARVIS_INT("model.objenc.queries_per_object", c.model.object_encoder.queries_per_object);
    TARVIS_INT("model.objenc.max_points", c.model.object_encoder.max_points);
    TARVIS_INT("model.objenc.layers", c.model.object_encoder.layers);
    TARVIS_INT("model.objenc.heads", c.model.object_encoder.num_heads);
    TARVIS_BOOL("model.objenc.background_queries", c.model.object_encoder.background_queries);

    TARVIS_INT("train.pretrain_steps", c.train.pretrain_steps);
    TARVIS_INT("train.main_steps", c.train.main_steps);
    TARVIS_DOUBLE("train.lr", c.train.lr);
    TARVIS_DOUBLE("train.weight_decay", c.train.weight_decay);
    TARVIS_DOUBLE("train.lr_decay1", c.train.lr_decay1);
    TARVIS_DOUBLE("train.lr_decay2", c.train.lr_decay2);
    TARVIS_INT("train.clip_frames", c.train.clip_frames);
    TARVIS_INT("train.checkpoint_interval", c.train.checkpoint_interval);
    TARVIS_INT("train.log_interval", c.train.log_interval);
    add("train.task_weights",
        [](RunConfig& c, const std::string& v) { c.train.task_weights = parse_task_weights(v); },
        [](const RunConfig& c) { return fmt_task_weights(c.train.task_weights); });
    add("train.loss_weights",
        [](RunConfig& c, const std::string& v) { c.train.loss_weights = parse_task_weights(v); },
        [](const RunConfig& c) { return fmt_task_weights(c.train.loss_weights); });
    TARVIS_INT("train.num_points", c.train.num_points);
    TARVIS_DOUBLE("train.oversample_ratio", c.train.oversample_ratio);
    TARVIS_DOUBLE("train.importance_ratio", c.train.importance_ratio);
    TARVIS_DOUBLE("train.lambda_cls", c.train.lambda_cls);
    TARVIS_DOUBLE("train.lambda_bce", c.train.lambda_bce);
    TARVIS_DOUBLE("train.lambda_dice", c.train.lambda_dice);
    TARVIS_DOUBLE("train.grad_clip", c.train.grad_clip);
    TARVIS_DOUBLE("train.aug_translate", c.train.aug_translate);
    TARVIS_DOUBLE("train.aug_rotate", c.train.aug_rotate);
    TARVIS_DOUBLE("train.aug_scale", c.train.aug_scale);
    TARVIS_DOUBLE("train.aug_brightness", c.train.aug_brightness);
    TARVIS_DOUBLE("train.aug_contrast", c.train.aug_contrast);

    TARVIS_INT("infer.t_clip", c.infer.t_clip);
    TARVIS_INT("infer.t_ov", c.infer.t_ov);
    TARVIS_DOUBLE("infer.iou_min", c.infer.iou_min);
    TARVIS_DOUBLE("infer.score_min", c.infer.score_min);
    TARVIS_DOUBLE("infer.panoptic_overlap", c.infer.panoptic_overlap);

    TARVIS_INT("synth.num_videos", c.synth.num_videos);
    TARVIS_INT("synth.height", c.synth.scene.height);
    TARVIS_INT("synth.width", c.synth.scene.width);
    TARVIS_INT("synth.frames", c.synth.scene.num_frames);
    TARVIS_INT("synth.min_things", c.synth.scene.min_things);
    TARVIS_INT("synth.max_things", c.synth.scene.max_things);
    add("synth.thing_classes",
        [](RunConfig& c, const std::string& v) { c.synth.scene.thing_classes = parse_int_list(v); },
        [](const RunConfig& c) { return fmt_int_list(c.synth.scene.thing_classes); });
    add("synth.stuff_classes",
        [](RunConfig& c, const std::string& v) { c.synth.scene.stuff_classes = parse_int_list(v); },
        [](const RunConfig& c) { return fmt_int_list(c.synth.scene.stuff_classes); });
    TARVIS_DOUBLE("synth.min_size", c.synth.scene.min_size);
    TARVIS_DOUBLE("synth.max_size", c.synth.scene.max_size);
    TARVIS_DOUBLE("synth.min_speed", c.synth.scene.min_speed);
    TARVIS_DOUBLE("synth.max_speed", c.synth.scene.max_speed);
    TARVIS_DOUBLE("synth.velocity_jitter", c.synth.scene.velocity_jitter);
    TARVIS_DOUBLE("synth.rotation_jitter", c.synth.scene.rotation_jitter);
    TARVIS_INT("synth.min_stuff_regions", c.synth.scene.min_stuff_regions);
    TARVIS_INT("synth.max_stuff_regions", c.synth.scene.max_stuff_regions);
    TARVIS_BOOL("synth.voronoi_stuff", c.synth.scene.voronoi_stuff);

    TARVIS_STRING("paths.dataset", c.dataset_dir);
    TARVIS_STRING("paths.run", c.run_dir);

#undef TARVIS_INT
#undef TARVIS_DOUBLE
#undef TARVIS_BOOL
#undef TARVIS_STRING
    return m;
  }();
  return s;
}

}  // namespace

void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto it = schema().find(key);
  if (it == schema().end()) throw std::invalid_argument("unknown config key: " + key);
  try {
    it->second.set(cfg, value);
  } catch (const std::exception& e) {
    throw std::invalid_argument("config key " + key + ": " + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  RunConfig cfg;
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_config_line(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

std::map<std::string, std::string> config_snapshot(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [key, e] : schema()) out[key] = e.get(cfg);
  return out;
}

RunConfig config_from_snapshot(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  for (const auto& [key, value] : kv) apply_config_line(cfg, key, value);
  return cfg;
}

std::vector<std::string> config_model_diff(const std::map<std::string, std::string>& a,
                                           const std::map<std::string, std::string>& b) {
  std::vector<std::string> diff;
  for (const auto& [key, value] : a) {
    if (key.rfind("model.", 0) != 0) continue;
    auto it = b.find(key);
    if (it == b.end() || it->second != value) diff.push_back(key);
  }
  return diff;
}

}  // namespace tarvis
