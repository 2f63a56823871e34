#pragma once

#include <cstdint>

namespace sq::kern {

// Compositing semantics shared by every backend (and by the test oracles):
//  - a splat touches a pixel iff its quadratic form q <= kCutoffQ,
//  - effective alpha a = opacity * exp(-q/2); contributions with a < kMinAlpha
//    are skipped, survivors are clamped to kAlphaClamp,
//  - a pixel stops compositing once its transmittance drops below kTmin.
// kCutoffQ is chosen so the footprint test is lossless: at the 3.5 sigma
// boundary exp(-q/2) is already below kMinAlpha, so bounding-box culling can
// never drop a contribution the alpha test would have kept.
constexpr double kAlphaClamp = 0.99;
constexpr double kMinAlpha = 1.0 / 255.0;
constexpr double kFootprint = 3.5;
constexpr double kCutoffQ = kFootprint * kFootprint;
constexpr double kTmin = 1.0 / 255.0;

struct Splat2D {
  double mx, my;       // projected mean in pixel coordinates
  double ia, ib, ic;   // inverse 2d covariance (xx, xy, yy)
  double alpha;
  double r, g, b;      // view-dependent color, [0,1]
  int32_t id;
  bool tracked;        // counts toward activation / argmax buffers
};

// Accumulator slices for one row segment; index i is pixel x0+i.
struct PixelRow {
  double* trans;
  double* r;
  double* g;
  double* b;
  double* act;
  double* maxw;
  int32_t* argmax;
};

// Composite one splat into n pixels whose centers are (px0 + i, py).
using CompositeRowFn = void (*)(const Splat2D&, double py, double px0, int n,
                                const PixelRow&);

// out[i] = sum_d rows[i*dim+d] * vec[d], accumulated in double. Backends may
// differ in summation order; callers get ~1e-12 relative agreement, not bits.
using DotRowsFn = void (*)(const float* rows, int64_t n, int64_t dim,
                           const float* vec, double* out);

// Nearest gaussian under the Mahalanobis form dx' M dx, arrays of length n.
// Ties resolve to the lowest index on every backend.
struct MahalSoa {
  const double* mx;
  const double* my;
  const double* mz;
  const double* ixx;
  const double* ixy;
  const double* ixz;
  const double* iyy;
  const double* iyz;
  const double* izz;
};
using NearestMahalFn = void (*)(const MahalSoa&, int64_t n, double px, double py,
                                double pz, int64_t* idx, double* d2);

struct KernelTable {
  const char* name;
  CompositeRowFn composite_row;
  DotRowsFn dot_rows;
  NearestMahalFn nearest_mahal;
};

namespace detail {
// Shared by the scalar kernel and the vector backends' tail loops; the
// operation order here is the contract, do not re-associate.
inline double mahal_d2(const MahalSoa& m, int64_t j, double px, double py,
                       double pz) {
  double dx = px - m.mx[j];
  double dy = py - m.my[j];
  double dz = pz - m.mz[j];
  double t1 = (m.ixx[j] * dx) * dx;
  double t2 = (m.iyy[j] * dy) * dy;
  double t3 = (m.izz[j] * dz) * dz;
  double t4 = (m.ixy[j] * dx) * dy;
  double t5 = (m.ixz[j] * dx) * dz;
  double t6 = (m.iyz[j] * dy) * dz;
  double cross = (t4 + t5) + t6;
  return ((t1 + t2) + t3) + (cross + cross);
}
}  // namespace detail

const KernelTable& scalar_kernels();

bool avx2_supported();
const KernelTable& avx2_kernels();  // throws if the backend was not built

// Active table, resolved once per process. SPLATQUERY_KERNELS=scalar|avx2
// forces a backend; the default is the widest one the host supports.
const KernelTable& kernels();

}  // namespace sq::kern
