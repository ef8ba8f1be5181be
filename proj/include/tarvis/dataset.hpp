#ifndef TARVIS_DATASET_HPP
#define TARVIS_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "tarvis/synth.hpp"

namespace tarvis {

struct VideoRecord {
  std::string name;
  VideoClip clip;
  VideoAnnotation ann;
};

struct Dataset {
  std::string name = "synth";
  ClassTable classes;
  std::vector<VideoRecord> videos;
};

/// Directory layout: manifest.json, then per video frames/%05d.png (RGB),
/// segments/%05d.png (16-bit ids) and annotations.json. The manifest is
/// written last so partially written directories never parse as datasets.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

/// FNV-1a over quantized frames and raw segment maps in manifest order.
std::uint64_t dataset_content_hash(const Dataset& ds);

/// A single video directory (frames/%05d.png, optional segments + annotations).
VideoRecord read_video_record(const std::string& video_dir);

}  // namespace tarvis

#endif
