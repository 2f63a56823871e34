#include "sq/views.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "sq/errors.hpp"

namespace sq {
namespace {

std::vector<int32_t> normalize_cluster(const Scene& scene,
                                       std::span<const int32_t> cluster) {
  if (cluster.empty()) throw ValidationError("view score: cluster is empty");
  std::vector<int32_t> ids(cluster.begin(), cluster.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.front() < 0 || static_cast<size_t>(ids.back()) >= scene.size())
    throw ValidationError("view score: gaussian id out of range");
  return ids;
}

std::vector<int32_t> visible_of(const Scene& scene,
                                const std::vector<int32_t>& ids,
                                const Camera& cam, const RenderOptions& opts) {
  RenderBuffers rb = render(scene, cam, ids, opts);
  std::vector<uint8_t> seen(scene.size(), 0);
  for (size_t px = 0; px < rb.pixels(); ++px)
    if (rb.visible_mask[px] && rb.argmax_id[px] >= 0)
      seen[static_cast<size_t>(rb.argmax_id[px])] = 1;
  std::vector<int32_t> out;
  for (int32_t id : ids)
    if (seen[static_cast<size_t>(id)]) out.push_back(id);
  return out;
}

}  // namespace

ScoreMode score_mode_from_string(const std::string& name) {
  if (name == "visibility") return ScoreMode::kVisibility;
  if (name == "volume") return ScoreMode::kVolume;
  throw ValidationError("unknown score mode '" + name +
                        "', expected 'visibility' or 'volume'");
}

const char* to_string(ScoreMode mode) {
  return mode == ScoreMode::kVisibility ? "visibility" : "volume";
}

std::vector<int32_t> visible_gaussians(const Scene& scene,
                                       std::span<const int32_t> cluster,
                                       const Camera& cam,
                                       const RenderOptions& opts) {
  return visible_of(scene, normalize_cluster(scene, cluster), cam, opts);
}

double visibility_score(const Scene& scene, std::span<const int32_t> cluster,
                        const Camera& cam, const RenderOptions& opts) {
  auto ids = normalize_cluster(scene, cluster);
  auto vis = visible_of(scene, ids, cam, opts);
  return static_cast<double>(vis.size()) / static_cast<double>(ids.size());
}

double volume_score(const Scene& scene, std::span<const int32_t> cluster,
                    const Camera& cam, const RenderOptions& opts) {
  auto ids = normalize_cluster(scene, cluster);
  auto vis = visible_of(scene, ids, cam, opts);
  double num = 0.0, den = 0.0;
  size_t k = 0;
  for (int32_t id : ids) {
    double v = scene.gaussians[static_cast<size_t>(id)].volume();
    den += v;
    if (k < vis.size() && vis[k] == id) {
      num += v;
      ++k;
    }
  }
  if (den <= 0.0) return 0.0;
  return num / den;
}

ScoreMatrix build_score_matrix(const Scene& scene, const ClusterSet& clusters,
                               ScoreMode mode, const RenderOptions& opts) {
  if (clusters.empty())
    throw ValidationError("score matrix: cluster set is empty");
  if (scene.cameras.empty())
    throw ValidationError("score matrix: scene has no cameras");

  ScoreMatrix m;
  m.rows = clusters.size();
  m.cols = scene.cameras.size();
  m.values.resize(m.rows * m.cols);
  m.cluster_ids.resize(m.rows);
  m.camera_ids.resize(m.cols);
  for (size_t l = 0; l < m.rows; ++l)
    m.cluster_ids[l] = static_cast<int32_t>(l);
  for (size_t i = 0; i < m.cols; ++i) m.camera_ids[i] = scene.cameras[i].id;

  for (size_t l = 0; l < m.rows; ++l) {
    std::span<const int32_t> ids(clusters.clusters[l]);
    for (size_t i = 0; i < m.cols; ++i) {
      const Camera& cam = scene.cameras[i];
      m.values[l * m.cols + i] = mode == ScoreMode::kVisibility
                                     ? visibility_score(scene, ids, cam, opts)
                                     : volume_score(scene, ids, cam, opts);
    }
  }
  return m;
}

std::vector<int32_t> select_initial_views(const ScoreMatrix& m) {
  if (m.cols == 0) throw ValidationError("select views: matrix has no cameras");
  if (m.values.size() != m.rows * m.cols ||
      m.camera_ids.size() != m.cols)
    throw ValidationError("select views: inconsistent matrix shape");

  std::vector<int32_t> out(m.rows);
  for (size_t l = 0; l < m.rows; ++l) {
    size_t best = 0;
    for (size_t i = 1; i < m.cols; ++i) {
      double s = m.at(l, i);
      double bs = m.at(l, best);
      if (s > bs || (s == bs && m.camera_ids[i] < m.camera_ids[best]))
        best = i;
    }
    out[l] = m.camera_ids[best];
  }
  return out;
}

void save_score_csv(const ScoreMatrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open file for writing: " + path);
  out << "cluster_id,camera_id,score\n";
  char buf[64];
  for (size_t l = 0; l < m.rows; ++l)
    for (size_t i = 0; i < m.cols; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", m.at(l, i));
      out << m.cluster_ids[l] << ',' << m.camera_ids[i] << ',' << buf << '\n';
    }
  out.flush();
  if (!out) throw Error("short write: " + path);
}

}  // namespace sq
