#ifndef TARVIS_MODEL_HPP
#define TARVIS_MODEL_HPP

#include <array>
#include <optional>

#include "tarvis/backbone.hpp"
#include "tarvis/decoder.hpp"
#include "tarvis/neck.hpp"
#include "tarvis/queries.hpp"

namespace tarvis {

struct ModelConfig {
  Index d_model = 64;
  Index instance_queries = 8;
  BackboneConfig backbone;
  NeckConfig neck;
  DecoderConfig decoder;
  ObjectEncoderConfig object_encoder;
  bool use_semantic_queries = true;  // off: linear-classifier VIS ablation
  std::uint64_t seed = 0;
};

/// The task-specific target definition handed to a forward pass.
struct TaskTargets {
  Task task = Task::VIS;
  std::string dataset;                          // VIS / VPS
  std::vector<CueInput> mask_cues;              // VOS
  std::vector<std::array<Index, 3>> point_cues; // PET: (frame, y, x)
};

class TarvisModel {
 public:
  void init(const ModelConfig& cfg);
  void register_dataset(const std::string& name, const ClassTable& classes);

  /// Backbone + temporal neck. clip: (T, H, W, 3).
  FeaturePyramid features(const Var& clip) const;

  /// Target queries for a task; VOS/PET cues are encoded against the pyramid.
  TargetQuerySet build_queries(const TaskTargets& targets, const FeaturePyramid& pyr, Rng& rng) const;

  std::pair<TargetQuerySet, SegmentationOutput> decode(
      const TargetQuerySet& qs, const FeaturePyramid& pyr,
      const std::optional<std::string>& dataset = std::nullopt) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return backbone_; }
  const TemporalNeck& neck() const { return neck_; }
  QueryBank& bank() { return bank_; }
  const QueryBank& bank() const { return bank_; }
  ObjectEncoder& object_encoder() { return object_encoder_; }
  const ObjectEncoder& object_encoder() const { return object_encoder_; }
  const Decoder& decoder() const { return decoder_; }
  const std::vector<std::pair<std::string, ClassTable>>& registered_datasets() const {
    return registered_;
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  Backbone backbone_;
  TemporalNeck neck_;
  QueryBank bank_;
  ObjectEncoder object_encoder_;
  Decoder decoder_;
  std::vector<std::pair<std::string, ClassTable>> registered_;
};

}  // namespace tarvis

#endif
