#include "sq/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sq/errors.hpp"
#include "sq/parallel.hpp"

namespace sq {
namespace {

constexpr double kSH0 = 0.28209479177387814;
constexpr double kSH1 = 0.4886025119029199;
constexpr double kSH2[5] = {1.0925484305920792, -1.0925484305920792,
                            0.31539156525252005, -1.0925484305920792,
                            0.5462742152960396};
constexpr double kSH3[7] = {-0.5900435899266435, 2.890611442640554,
                            -0.4570457994644658, 0.3731763325901154,
                            -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};

Eigen::Vector3d eval_sh(std::span<const double> sh, int degree,
                        const Eigen::Vector3d& dir) {
  auto c = [&](int k) {
    return Eigen::Vector3d(sh[k * 3 + 0], sh[k * 3 + 1], sh[k * 3 + 2]);
  };
  Eigen::Vector3d res = kSH0 * c(0);
  if (degree > 0) {
    double x = dir.x(), y = dir.y(), z = dir.z();
    res += -kSH1 * y * c(1) + kSH1 * z * c(2) - kSH1 * x * c(3);
    if (degree > 1) {
      double xx = x * x, yy = y * y, zz = z * z;
      double xy = x * y, yz = y * z, xz = x * z;
      res += kSH2[0] * xy * c(4) + kSH2[1] * yz * c(5) +
             kSH2[2] * (2.0 * zz - xx - yy) * c(6) + kSH2[3] * xz * c(7) +
             kSH2[4] * (xx - yy) * c(8);
      if (degree > 2) {
        res += kSH3[0] * y * (3.0 * xx - yy) * c(9) + kSH3[1] * xy * z * c(10) +
               kSH3[2] * y * (4.0 * zz - xx - yy) * c(11) +
               kSH3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * c(12) +
               kSH3[4] * x * (4.0 * zz - xx - yy) * c(13) +
               kSH3[5] * z * (xx - yy) * c(14) +
               kSH3[6] * x * (xx - 3.0 * yy) * c(15);
      }
    }
  }
  res.array() += 0.5;
  return res.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

ProjectedGaussian project_gaussian(const Gaussian& g, std::span<const double> sh,
                                   int sh_degree, const Camera& cam) {
  ProjectedGaussian out;
  Eigen::Vector3d pc = cam.R * g.mu + cam.t;
  double z = pc.z();
  if (!(z > cam.znear && z < cam.zfar)) return out;

  double inv_z = 1.0 / z;
  out.mx = cam.fx * pc.x() * inv_z + cam.cx;
  out.my = cam.fy * pc.y() * inv_z + cam.cy;
  out.depth = z;

  Eigen::Matrix3d cov_cam = cam.R * g.covariance() * cam.R.transpose();
  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx * inv_z, 0.0, -cam.fx * pc.x() * inv_z * inv_z,
      0.0, cam.fy * inv_z, -cam.fy * pc.y() * inv_z * inv_z;
  Eigen::Matrix2d c2 = J * cov_cam * J.transpose();
  c2(0, 0) += 0.3;  // screen-space dilation
  c2(1, 1) += 0.3;

  double det = c2(0, 0) * c2(1, 1) - c2(0, 1) * c2(1, 0);
  if (!(det > 0.0)) return out;
  double inv_det = 1.0 / det;
  out.cov[0] = c2(0, 0);
  out.cov[1] = c2(0, 1);
  out.cov[2] = c2(1, 1);
  out.inv[0] = c2(1, 1) * inv_det;
  out.inv[1] = -c2(0, 1) * inv_det;
  out.inv[2] = c2(0, 0) * inv_det;
  out.rx = kern::kFootprint * std::sqrt(out.cov[0]);
  out.ry = kern::kFootprint * std::sqrt(out.cov[2]);

  Eigen::Vector3d dir = g.mu - cam.center();
  double len = dir.norm();
  dir = len > 0.0 ? Eigen::Vector3d(dir / len) : Eigen::Vector3d(0, 0, 1);
  Eigen::Vector3d col = eval_sh(sh, sh_degree, dir);
  out.color[0] = col.x();
  out.color[1] = col.y();
  out.color[2] = col.z();
  out.valid = true;
  return out;
}

namespace {

struct SplatItem {
  int32_t id;
  double alpha;
  bool tracked;
  ProjectedGaussian p;
  int x0, x1, y0, y1;  // inclusive pixel bbox
};

constexpr int kTile = 16;

}  // namespace

RenderBuffers render(const Scene& scene, const Camera& cam,
                     std::span<const int32_t> tracked, const RenderOptions& opts) {
  if (cam.width < 1 || cam.height < 1)
    throw ValidationError("render: camera image size must be positive");

  const int w = cam.width, h = cam.height;
  const size_t hw = static_cast<size_t>(w) * h;
  const size_t n = scene.size();

  std::vector<uint8_t> is_tracked(n, 0);
  for (int32_t id : tracked) {
    if (id < 0 || static_cast<size_t>(id) >= n)
      throw ValidationError("render: tracked id " + std::to_string(id) +
                            " out of range");
    is_tracked[static_cast<size_t>(id)] = 1;
  }

  std::vector<SplatItem> items;
  items.reserve(n);
  for (size_t j = 0; j < n; ++j) {
    ProjectedGaussian p =
        project_gaussian(scene.gaussians[j], scene.sh_of(j), scene.sh_degree, cam);
    if (!p.valid) continue;
    // Pixel x is covered when |x + 0.5 - mx| <= rx; boundary contributions
    // fall below kMinAlpha by construction, so rounding here is lossless.
    int x0 = std::max(0, static_cast<int>(std::ceil(p.mx - p.rx - 0.5)));
    int x1 = std::min(w - 1, static_cast<int>(std::floor(p.mx + p.rx - 0.5)));
    int y0 = std::max(0, static_cast<int>(std::ceil(p.my - p.ry - 0.5)));
    int y1 = std::min(h - 1, static_cast<int>(std::floor(p.my + p.ry - 0.5)));
    if (x0 > x1 || y0 > y1) continue;
    const Gaussian& g = scene.gaussians[j];
    bool trk = g.id >= 0 && static_cast<size_t>(g.id) < n && is_tracked[g.id] != 0;
    items.push_back({g.id, g.alpha, trk, p, x0, x1, y0, y1});
  }

  std::sort(items.begin(), items.end(), [](const SplatItem& a, const SplatItem& b) {
    if (a.p.depth != b.p.depth) return a.p.depth < b.p.depth;
    return a.id < b.id;
  });

  RenderBuffers rb;
  rb.width = w;
  rb.height = h;
  rb.color.assign(hw * 3, 0.0);
  rb.activation.assign(hw, 0.0);
  rb.max_weight.assign(hw, 0.0);
  rb.argmax_id.assign(hw, -1);
  rb.visible_mask.assign(hw, 0);
  std::vector<double> trans(hw, 1.0);

  const int ntx = (w + kTile - 1) / kTile;
  const int nty = (h + kTile - 1) / kTile;
  std::vector<std::vector<int32_t>> tile_items(static_cast<size_t>(ntx) * nty);
  for (size_t k = 0; k < items.size(); ++k) {
    const SplatItem& it = items[k];
    for (int ty = it.y0 / kTile; ty <= it.y1 / kTile; ++ty)
      for (int tx = it.x0 / kTile; tx <= it.x1 / kTile; ++tx)
        tile_items[static_cast<size_t>(ty) * ntx + tx].push_back(
            static_cast<int32_t>(k));
  }

  const kern::KernelTable& K = opts.kernels ? *opts.kernels : kern::kernels();
  double* pr = rb.color.data();
  double* pg = rb.color.data() + hw;
  double* pb = rb.color.data() + 2 * hw;

  parallel_for(0, static_cast<int64_t>(tile_items.size()), opts.threads,
               [&](int64_t tile) {
                 int tx = static_cast<int>(tile % ntx);
                 int ty = static_cast<int>(tile / ntx);
                 int tx0 = tx * kTile, tx1 = std::min(w - 1, tx0 + kTile - 1);
                 int ty0 = ty * kTile, ty1 = std::min(h - 1, ty0 + kTile - 1);
                 for (int32_t k : tile_items[static_cast<size_t>(tile)]) {
                   const SplatItem& it = items[static_cast<size_t>(k)];
                   kern::Splat2D s{it.p.mx,       it.p.my,       it.p.inv[0],
                                   it.p.inv[1],   it.p.inv[2],   it.alpha,
                                   it.p.color[0], it.p.color[1], it.p.color[2],
                                   it.id,         it.tracked};
                   int ys = std::max(ty0, it.y0), ye = std::min(ty1, it.y1);
                   int xs = std::max(tx0, it.x0), xe = std::min(tx1, it.x1);
                   if (xs > xe) continue;
                   for (int y = ys; y <= ye; ++y) {
                     size_t off = static_cast<size_t>(y) * w + xs;
                     kern::PixelRow row{trans.data() + off,
                                        pr + off,
                                        pg + off,
                                        pb + off,
                                        rb.activation.data() + off,
                                        rb.max_weight.data() + off,
                                        rb.argmax_id.data() + off};
                     K.composite_row(s, y + 0.5, xs + 0.5, xe - xs + 1, row);
                   }
                 }
               });

  for (size_t i = 0; i < hw; ++i)
    rb.visible_mask[i] = rb.activation[i] > opts.theta_vis ? 1 : 0;
  return rb;
}

RenderBuffers render(const Scene& scene, const Camera& cam,
                     const RenderOptions& opts) {
  std::vector<int32_t> all(scene.size());
  std::iota(all.begin(), all.end(), 0);
  return render(scene, cam, all, opts);
}

}  // namespace sq
