#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

#include "sq/scene.hpp"

namespace sq {

struct ClusterParams {
  int min_cluster_size = 10;
  int min_samples = 5;
  // Post-clustering merge radius on cluster centroids (transitive, inclusive).
  // Negative means 0.05 * scene bounds diagonal.
  double merge_eps = -1.0;
};

// Instance clusters over gaussian centers. Members are ascending gaussian
// ids; clusters are ordered by descending size, ties by smallest member id.
// The result is invariant to the order of `active`.
struct ClusterSet {
  std::vector<std::vector<int32_t>> clusters;
  std::vector<Eigen::Vector3d> centroids;  // post-merge member means

  size_t size() const { return clusters.size(); }
  bool empty() const { return clusters.empty(); }
};

// Density clustering of the active gaussians' centers: HDBSCAN (euclidean,
// excess-of-mass cluster selection, the root is never a cluster) followed by
// a transitive merge of clusters whose centroids lie within merge_eps.
// Points HDBSCAN leaves unclustered are dropped as noise.
ClusterSet cluster_gaussians(const Scene& scene, std::span<const int32_t> active,
                             const ClusterParams& params = {});

}  // namespace sq
