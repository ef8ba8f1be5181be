#include "tarvis/dataset.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tarvis/image.hpp"

namespace tarvis {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(Index t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d.png", (int)t);
  return buf;
}

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt json in " + path.string() + ": " + e.what());
  }
  return j;
}

void save_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out << j.dump(2) << "\n";
}

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

std::uint64_t dataset_content_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& v : ds.videos) {
    fnv_bytes(h, v.name.data(), v.name.size());
    for (Index t = 0; t < v.clip.frames(); ++t) {
      ImageRgb8 img = frame_to_image(v.clip.rgb, t);
      fnv_bytes(h, img.pixels.data(), img.pixels.size());
      const auto& seg = v.ann.frames[(std::size_t)t].segment_map;
      fnv_bytes(h, seg.data(), seg.size() * sizeof(std::uint16_t));
    }
  }
  return h;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root);
  json videos = json::array();
  for (const auto& v : ds.videos) {
    const fs::path vdir = root / v.name;
    fs::create_directories(vdir / "frames");
    fs::create_directories(vdir / "segments");
    const Index T = v.clip.frames(), H = v.clip.height(), W = v.clip.width();
    json frames = json::array();
    for (Index t = 0; t < T; ++t) {
      write_png((vdir / "frames" / frame_name(t)).string(), frame_to_image(v.clip.rgb, t));
      const PanopticFrame& fr = v.ann.frames[(std::size_t)t];
      ImageGray16 ids(H, W);
      ids.pixels = fr.segment_map;
      write_png((vdir / "segments" / frame_name(t)).string(), ids);
      json segs = json::array();
      for (const auto& s : fr.segments) {
        json js = {{"id", s.segment_id}, {"class_id", s.class_id}, {"is_thing", s.is_thing}};
        if (s.is_thing) js["track_id"] = s.track_id;
        segs.push_back(js);
      }
      frames.push_back({{"segments", segs}});
    }
    save_json({{"video", v.name}, {"num_frames", T}, {"frames", frames}}, vdir / "annotations.json");
    videos.push_back(
        {{"name", v.name}, {"num_frames", T}, {"height", H}, {"width", W}});
  }
  json classes = json::array();
  for (const auto& c : ds.classes)
    classes.push_back({{"id", c.id}, {"is_thing", c.is_thing}, {"name", c.name}});
  json manifest = {{"schema_version", 1},
                   {"name", ds.name},
                   {"classes", classes},
                   {"videos", videos},
                   {"content_hash", dataset_content_hash(ds)}};
  save_json(manifest, root / "manifest.json");
}

Dataset read_dataset(const std::string& dir) {
  const fs::path root(dir);
  const fs::path mpath = root / "manifest.json";
  if (!fs::exists(mpath)) throw std::runtime_error("no dataset manifest at: " + mpath.string());
  json manifest = load_json(mpath);
  Dataset ds;
  try {
    if (manifest.at("schema_version").get<int>() != 1)
      throw std::runtime_error("unsupported dataset schema version");
    ds.name = manifest.at("name").get<std::string>();
    for (const auto& c : manifest.at("classes")) {
      ClassInfo ci;
      ci.id = c.at("id").get<int>();
      ci.is_thing = c.at("is_thing").get<bool>();
      ci.name = c.value("name", "");
      ds.classes.push_back(ci);
    }
    for (const auto& jv : manifest.at("videos")) {
      VideoRecord rec;
      rec.name = jv.at("name").get<std::string>();
      const Index T = jv.at("num_frames").get<Index>();
      const Index H = jv.at("height").get<Index>();
      const Index W = jv.at("width").get<Index>();
      const fs::path vdir = root / rec.name;
      json ann = load_json(vdir / "annotations.json");
      if (ann.at("num_frames").get<Index>() != T)
        throw std::runtime_error("frame count mismatch in " + (vdir / "annotations.json").string());
      std::vector<ImageRgb8> frames;
      rec.ann.frames.resize((std::size_t)T);
      for (Index t = 0; t < T; ++t) {
        frames.push_back(read_png_rgb8((vdir / "frames" / frame_name(t)).string()));
        ImageGray16 ids = read_png_gray16((vdir / "segments" / frame_name(t)).string());
        if (ids.height != H || ids.width != W)
          throw std::runtime_error("segment map size mismatch in " + rec.name);
        PanopticFrame& fr = rec.ann.frames[(std::size_t)t];
        fr.height = H;
        fr.width = W;
        fr.segment_map = std::move(ids.pixels);
        for (const auto& js : ann.at("frames").at((std::size_t)t).at("segments")) {
          SegmentInfo s;
          s.segment_id = js.at("id").get<int>();
          s.class_id = js.at("class_id").get<int>();
          s.is_thing = js.at("is_thing").get<bool>();
          s.track_id = js.value("track_id", -1);
          fr.segments.push_back(s);
        }
      }
      rec.clip.rgb = images_to_clip(frames);
      ds.videos.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt manifest " + mpath.string() + ": " + e.what());
  }
  return ds;
}

VideoRecord read_video_record(const std::string& video_dir) {
  const fs::path vdir(video_dir);
  if (!fs::exists(vdir / "frames")) throw std::runtime_error("no frames/ under: " + video_dir);
  VideoRecord rec;
  rec.name = vdir.filename().string();
  Index T = 0;
  while (fs::exists(vdir / "frames" / frame_name(T))) ++T;
  if (T == 0) throw std::runtime_error("no frames found in: " + video_dir);
  std::vector<ImageRgb8> frames;
  for (Index t = 0; t < T; ++t) frames.push_back(read_png_rgb8((vdir / "frames" / frame_name(t)).string()));
  rec.clip.rgb = images_to_clip(frames);
  const Index H = rec.clip.height(), W = rec.clip.width();
  if (fs::exists(vdir / "annotations.json") && fs::exists(vdir / "segments")) {
    json ann = load_json(vdir / "annotations.json");
    rec.ann.frames.resize((std::size_t)T);
    for (Index t = 0; t < T; ++t) {
      ImageGray16 ids = read_png_gray16((vdir / "segments" / frame_name(t)).string());
      PanopticFrame& fr = rec.ann.frames[(std::size_t)t];
      fr.height = H;
      fr.width = W;
      fr.segment_map = std::move(ids.pixels);
      for (const auto& js : ann.at("frames").at((std::size_t)t).at("segments")) {
        SegmentInfo s;
        s.segment_id = js.at("id").get<int>();
        s.class_id = js.at("class_id").get<int>();
        s.is_thing = js.at("is_thing").get<bool>();
        s.track_id = js.value("track_id", -1);
        fr.segments.push_back(s);
      }
    }
  }
  return rec;
}

}  // namespace tarvis
