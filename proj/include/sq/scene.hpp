#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sq {

struct Aabb {
  Eigen::Vector3d lo{0, 0, 0};
  Eigen::Vector3d hi{0, 0, 0};

  double diagonal() const { return (hi - lo).norm(); }
  void expand(const Eigen::Vector3d& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
};

struct Gaussian {
  int32_t id = 0;
  Eigen::Vector3d mu{0, 0, 0};
  Eigen::Vector3d scale{1, 1, 1};     // linear (already exponentiated)
  Eigen::Quaterniond rot{1, 0, 0, 0};  // unit, w first
  double alpha = 0;                    // [0,1] (already through sigmoid)

  Eigen::Matrix3d covariance() const {
    Eigen::Matrix3d r = rot.toRotationMatrix();
    Eigen::Matrix3d s = scale.asDiagonal();
    Eigen::Matrix3d m = r * s;
    return m * m.transpose();
  }
  double volume() const { return scale.x() * scale.y() * scale.z() * alpha; }
};

struct Camera {
  int32_t id = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();  // world-to-camera
  Eigen::Vector3d t{0, 0, 0};
  double znear = 0.01, zfar = 100.0;

  Eigen::Vector3d to_camera(const Eigen::Vector3d& p) const { return R * p + t; }
  Eigen::Vector3d center() const { return -(R.transpose() * t); }
};

// Immutable once loaded. Semantics (categories, embeddings) are columnar and
// optional; attach_semantics returns a fresh scene rather than mutating.
struct Scene {
  std::vector<Gaussian> gaussians;
  int sh_degree = 0;
  std::vector<double> sh;  // n * basis * 3, [gaussian][coeff][channel]
  std::vector<Camera> cameras;

  std::vector<std::string> vocab;
  std::vector<int32_t> categories;  // per gaussian, -1 = unlabeled; empty if absent
  std::vector<float> embeddings;    // n * embed_dim row-major; empty if absent
  int embed_dim = 0;

  Aabb bounds;

  size_t size() const { return gaussians.size(); }
  int sh_basis() const { return (sh_degree + 1) * (sh_degree + 1); }
  std::span<const double> sh_of(size_t j) const {
    size_t stride = static_cast<size_t>(sh_basis()) * 3;
    return {sh.data() + j * stride, stride};
  }
  std::span<const float> embedding_of(size_t j) const {
    return {embeddings.data() + j * static_cast<size_t>(embed_dim),
            static_cast<size_t>(embed_dim)};
  }
  bool has_categories() const { return !categories.empty(); }
  bool has_embeddings() const { return !embeddings.empty(); }
  const Camera& camera_by_id(int32_t id) const;
  void recompute_bounds();
};

// Gaussian splat PLY, binary little endian, standard property layout
// (x y z [nx ny nz] f_dc_* f_rest_* opacity scale_* rot_*). Activations are
// decoded on load (exp on scales, sigmoid on opacity, quaternion normalized)
// and re-encoded on save.
Scene load_gaussian_ply(const std::string& path);
void save_gaussian_ply(const Scene& scene, const std::string& path);

std::vector<Camera> load_cameras_json(const std::string& path);
void save_cameras_json(const std::vector<Camera>& cameras, const std::string& path);

Scene load_scene(const std::string& ply_path, const std::string& cameras_path);

// Sidecar attachment. The file kind is sniffed: the embedding container starts
// with an 8 byte magic, anything else is parsed as category JSON.
Scene attach_semantics(const Scene& scene, const std::string& sidecar_path);

// Embedding container: "SQEMBED1" magic, u32 count, u32 dim, then count*dim
// float32 little endian rows. Rows must be finite and nonzero.
struct EmbeddingMatrix {
  int dim = 0;
  std::vector<float> data;  // count * dim
  size_t count() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const float> row(size_t i) const {
    return {data.data() + i * static_cast<size_t>(dim), static_cast<size_t>(dim)};
  }
};

EmbeddingMatrix load_embedding_matrix(const std::string& path);
void save_embedding_matrix(const EmbeddingMatrix& m, const std::string& path);

// Category sidecar: JSON array of per gaussian label strings ("" = unlabeled),
// or {"vocab": [...], "labels": [...]} to pin label ids explicitly.
void save_category_sidecar(const std::vector<std::string>& labels,
                           const std::vector<std::string>& vocab,
                           const std::string& path);

}  // namespace sq
