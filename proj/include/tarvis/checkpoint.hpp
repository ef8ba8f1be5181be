#ifndef TARVIS_CHECKPOINT_HPP
#define TARVIS_CHECKPOINT_HPP

#include <map>
#include <optional>
#include <string>

#include "tarvis/config.hpp"
#include "tarvis/model.hpp"
#include "tarvis/optimizer.hpp"

namespace tarvis {

/// Single-file archive: magic, JSON metadata blob (config snapshot, dataset
/// class tables, step counter, rng state, array index), then raw little-endian
/// float64 payload. Save/load round-trips forward outputs bit-exactly.
void save_checkpoint(const std::string& path, const TarvisModel& model, const RunConfig& cfg,
                     Index step, const std::string& rng_state, const AdamW* optimizer);

struct LoadedCheckpoint {
  RunConfig config;
  std::vector<std::pair<std::string, ClassTable>> datasets;
  Index step = 0;
  Index adam_steps = 0;
  std::string rng_state;
  std::map<std::string, Tensor> arrays;

  /// Builds the model (init + dataset registration) and fills parameters.
  void restore_model(TarvisModel& model) const;
  /// Restores optimizer moments; optimizer must already be init()'d.
  bool restore_optimizer(AdamW& opt, const TarvisModel& model) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace tarvis

#endif
