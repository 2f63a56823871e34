#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sq/cluster.hpp"
#include "sq/renderer.hpp"
#include "sq/scene.hpp"

namespace sq {

enum class ScoreMode { kVisibility, kVolume };

ScoreMode score_mode_from_string(const std::string& name);
const char* to_string(ScoreMode mode);

// Row-major L x N scores: one row per cluster, one column per training
// camera. cluster_ids are the row indices into the originating ClusterSet,
// camera_ids the scene camera ids in scene order.
struct ScoreMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> values;
  std::vector<int32_t> cluster_ids;
  std::vector<int32_t> camera_ids;

  double at(size_t l, size_t i) const { return values[l * cols + i]; }
};

// Cluster members that win the per-pixel max-weight argmax somewhere the
// cluster's visibility mask is on. Attenuation comes from the whole scene,
// so members hidden behind out-of-cluster geometry drop out. Sorted
// ascending. Duplicate ids in `cluster` collapse to one.
std::vector<int32_t> visible_gaussians(const Scene& scene,
                                       std::span<const int32_t> cluster,
                                       const Camera& cam,
                                       const RenderOptions& opts = {});

// |visible members| / |cluster|, in [0, 1].
double visibility_score(const Scene& scene, std::span<const int32_t> cluster,
                        const Camera& cam, const RenderOptions& opts = {});

// Same ratio with each member weighted by scale volume times opacity.
double volume_score(const Scene& scene, std::span<const int32_t> cluster,
                    const Camera& cam, const RenderOptions& opts = {});

// One full render per (cluster, camera) pair: O(L * N) renders.
ScoreMatrix build_score_matrix(const Scene& scene, const ClusterSet& clusters,
                               ScoreMode mode, const RenderOptions& opts = {});

// Per row the camera id with the maximal score; ties go to the lowest
// camera id.
std::vector<int32_t> select_initial_views(const ScoreMatrix& m);

void save_score_csv(const ScoreMatrix& m, const std::string& path);

}  // namespace sq
