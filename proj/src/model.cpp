#include "tarvis/model.hpp"

namespace tarvis {

void TarvisModel::init(const ModelConfig& cfg) {
  params_ = ParamStore();
  backbone_ = Backbone();
  neck_ = TemporalNeck();
  bank_ = QueryBank();
  object_encoder_ = ObjectEncoder();
  decoder_ = Decoder();
  registered_.clear();
  cfg_ = cfg;
  cfg_.neck.d_model = cfg.d_model;
  cfg_.decoder.linear_classifier = !cfg.use_semantic_queries;
  Rng rng = Rng::stream(cfg.seed, 0x6d6f64656cULL);
  backbone_.init(params_, "backbone", cfg_.backbone, rng);
  neck_.init(params_, "neck", cfg_.neck, cfg_.backbone.stage_channels, rng);
  bank_.init(params_, "bank", cfg_.d_model, cfg_.instance_queries, cfg_.use_semantic_queries, rng);
  object_encoder_.init(params_, "objenc", cfg_.d_model, cfg_.object_encoder, rng);
  decoder_.init(params_, "decoder", cfg_.d_model, cfg_.decoder, rng);
}

void TarvisModel::register_dataset(const std::string& name, const ClassTable& classes) {
  Rng rng = Rng::stream(cfg_.seed, splitmix64(std::hash<std::string>{}(name)));
  bank_.register_dataset(name, classes, rng);
  Index things = 0;
  for (const auto& c : classes)
    if (c.is_thing) ++things;
  decoder_.register_dataset(name, things, rng);
  registered_.emplace_back(name, classes);
}

FeaturePyramid TarvisModel::features(const Var& clip) const {
  return neck_.forward(backbone_.forward(clip));
}

TargetQuerySet TarvisModel::build_queries(const TaskTargets& targets, const FeaturePyramid& pyr,
                                          Rng& rng) const {
  switch (targets.task) {
    case Task::VIS: return bank_.build_vis_queries(targets.dataset);
    case Task::VPS: return bank_.build_vps_queries(targets.dataset);
    case Task::VOS:
      return object_encoder_.encode_from_masks(targets.mask_cues, pyr,
                                               cfg_.object_encoder.queries_per_object, rng);
    case Task::PET: return object_encoder_.encode_from_points(targets.point_cues, pyr, rng);
  }
  throw std::invalid_argument("build_queries: bad task");
}

std::pair<TargetQuerySet, SegmentationOutput> TarvisModel::decode(
    const TargetQuerySet& qs, const FeaturePyramid& pyr,
    const std::optional<std::string>& dataset) const {
  return decoder_.forward(qs, pyr, dataset);
}

}  // namespace tarvis
