#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sq/kernels.hpp"
#include "sq/scene.hpp"

namespace sq {

// Planar buffers, row-major within each plane. color holds the three channel
// planes back to back (r plane, then g, then b). The tracked buffers cover
// the subset passed to render: activation is its accumulated compositing
// weight, argmax_id the subset member with the largest single weight (-1
// where none contributed), visible_mask = activation > theta_vis.
struct RenderBuffers {
  int width = 0;
  int height = 0;
  std::vector<double> color;
  std::vector<double> activation;
  std::vector<double> max_weight;
  std::vector<int32_t> argmax_id;
  std::vector<uint8_t> visible_mask;

  size_t pixels() const { return static_cast<size_t>(width) * height; }
  const double* plane(int c) const { return color.data() + c * pixels(); }
};

struct RenderOptions {
  double theta_vis = 0.5;
  int threads = 1;  // 0 = hardware concurrency
  const kern::KernelTable* kernels = nullptr;  // null = active backend
};

struct ProjectedGaussian {
  bool valid = false;
  double mx = 0, my = 0;  // pixel coordinates
  double depth = 0;       // camera z
  double cov[3] = {0, 0, 0};  // 2d covariance (xx, xy, yy), dilated
  double inv[3] = {0, 0, 0};
  double rx = 0, ry = 0;  // footprint half extents in pixels
  double color[3] = {0, 0, 0};
};

// EWA projection of one gaussian plus spherical harmonics color for this view.
ProjectedGaussian project_gaussian(const Gaussian& g, std::span<const double> sh,
                                   int sh_degree, const Camera& cam);

// Front-to-back compositing of the whole scene; `tracked` selects which
// gaussian ids feed the activation / argmax buffers (attenuation still comes
// from the full scene). Equal depths order by ascending id.
RenderBuffers render(const Scene& scene, const Camera& cam,
                     std::span<const int32_t> tracked,
                     const RenderOptions& opts = {});

// All gaussians tracked.
RenderBuffers render(const Scene& scene, const Camera& cam,
                     const RenderOptions& opts = {});

}  // namespace sq
