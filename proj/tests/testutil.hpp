#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sq/scene.hpp"

namespace sqt {

// splitmix64: tiny, seedable, stable across platforms. Test fixtures must not
// depend on libstdc++ distribution internals.
struct Rng {
  uint64_t state;
  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  double uniform() {  // [0, 1)
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(next() % static_cast<uint64_t>(hi - lo + 1));
  }
  double gauss() {  // Box-Muller, one sample per call
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
};

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("sq_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

// A random cloud around the origin with a ring of inward-looking cameras.
// Opacities are kept high so visibility masks are non-trivial.
inline sq::Scene random_scene(Rng& rng, int n_gaussians, int n_cameras,
                              int image_size = 64, int sh_degree = 1) {
  sq::Scene scene;
  scene.sh_degree = sh_degree;
  const int basis = (sh_degree + 1) * (sh_degree + 1);
  scene.sh.resize(static_cast<size_t>(n_gaussians) * basis * 3);
  scene.gaussians.resize(n_gaussians);

  for (int j = 0; j < n_gaussians; ++j) {
    sq::Gaussian& g = scene.gaussians[j];
    g.id = j;
    g.mu = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    g.scale = {rng.uniform(0.02, 0.25), rng.uniform(0.02, 0.25),
               rng.uniform(0.02, 0.25)};
    double qw = rng.gauss(), qx = rng.gauss(), qy = rng.gauss(), qz = rng.gauss();
    double qn = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    if (qn < 1e-9) {
      qw = 1;
      qn = 1;
    }
    g.rot = Eigen::Quaterniond(qw / qn, qx / qn, qy / qn, qz / qn);
    g.alpha = rng.uniform(0.6, 0.99);
    double* sh = scene.sh.data() + static_cast<size_t>(j) * basis * 3;
    for (int k = 0; k < basis * 3; ++k)
      sh[k] = k < 3 ? rng.uniform(-1.5, 1.5) : rng.uniform(-0.3, 0.3);
  }

  for (int i = 0; i < n_cameras; ++i) {
    double ang = 6.283185307179586 * i / n_cameras + rng.uniform(0.0, 0.1);
    double elev = rng.uniform(-0.35, 0.35);
    Eigen::Vector3d eye(4.0 * std::cos(ang) * std::cos(elev),
                        4.0 * std::sin(ang) * std::cos(elev), 4.0 * std::sin(elev));
    Eigen::Vector3d fwd = (-eye).normalized();
    Eigen::Vector3d upish(0, 0, 1);
    Eigen::Vector3d right = fwd.cross(upish).normalized();
    Eigen::Vector3d down = fwd.cross(right).normalized();

    sq::Camera c;
    c.id = i;
    c.width = c.height = image_size;
    c.fx = c.fy = image_size * 1.2;
    c.cx = image_size / 2.0;
    c.cy = image_size / 2.0;
    c.R.row(0) = right.transpose();
    c.R.row(1) = down.transpose();
    c.R.row(2) = fwd.transpose();
    c.t = -(c.R * eye);
    c.znear = 0.05;
    c.zfar = 50.0;
    scene.cameras.push_back(c);
  }

  scene.recompute_bounds();
  return scene;
}

}  // namespace sqt
