#ifndef TARVIS_VIZ_HPP
#define TARVIS_VIZ_HPP

#include "tarvis/metrics.hpp"

namespace tarvis {

/// 2-D PCA of a point set (rows). Component signs are fixed by making the
/// largest-magnitude loading of each component positive.
Tensor pca_project_2d(const Tensor& rows);

struct QueryVizStats {
  Index rows = 0;
  double first_layer_spread = 0;  // mean distance to centroid before decoding
  double last_layer_spread = 0;   // after the final decoder layer
};

/// Runs inference once per requested task on a single clip, projects the
/// union of the refined target queries to 2-D and writes queries.csv
/// (x,y,role,id,task) plus queries.png. Returns spread statistics for the
/// first- vs last-layer representations (reported, not asserted).
QueryVizStats viz_queries(const TarvisModel& model, const VideoClip& video,
                          const std::vector<Task>& tasks, const VideoTargets& targets,
                          const std::string& out_dir, std::uint64_t seed);

/// Per-frame RGB overlays of result masks with a deterministic id -> color map.
void viz_overlay(const VideoResult& result, const VideoClip& video, const std::string& out_dir);

}  // namespace tarvis

#endif
