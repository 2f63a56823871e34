#include "sq/kernels.hpp"
#include "sq/mathutil.hpp"

namespace sq::kern {
namespace {

// Reference implementation. The AVX2 variant mirrors the exact operation
// order (including fast_exp), so both produce bit-identical buffers.
void composite_row_scalar(const Splat2D& s, double py, double px0, int n,
                          const PixelRow& row) {
  const double dy = py - s.my;
  const double qy = (s.ic * dy) * dy;
  for (int i = 0; i < n; ++i) {
    double t = row.trans[i];
    if (t < kTmin) continue;

    double dx = (px0 + i) - s.mx;
    double qx = (s.ia * dx) * dx;
    double qxy = (s.ib * dx) * dy;
    double q = (qx + qy) + (qxy + qxy);
    if (q > kCutoffQ) continue;

    double a = s.alpha * fast_exp(-0.5 * q);
    if (a < kMinAlpha) continue;
    if (a > kAlphaClamp) a = kAlphaClamp;

    double w = t * a;
    row.r[i] += w * s.r;
    row.g[i] += w * s.g;
    row.b[i] += w * s.b;
    if (s.tracked) {
      row.act[i] += w;
      if (w > row.maxw[i]) {
        row.maxw[i] = w;
        row.argmax[i] = s.id;
      }
    }
    row.trans[i] = t * (1.0 - a);
  }
}

void dot_rows_scalar(const float* rows, int64_t n, int64_t dim, const float* vec,
                     double* out) {
  for (int64_t i = 0; i < n; ++i) {
    const float* r = rows + i * dim;
    double acc = 0.0;
    for (int64_t d = 0; d < dim; ++d)
      acc += static_cast<double>(r[d]) * static_cast<double>(vec[d]);
    out[i] = acc;
  }
}

void nearest_mahal_scalar(const MahalSoa& m, int64_t n, double px, double py,
                          double pz, int64_t* idx, double* d2) {
  int64_t best = -1;
  double best_d2 = 0.0;
  for (int64_t j = 0; j < n; ++j) {
    double v = detail::mahal_d2(m, j, px, py, pz);
    if (best < 0 || v < best_d2) {
      best = j;
      best_d2 = v;
    }
  }
  *idx = best;
  *d2 = best_d2;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", composite_row_scalar, dot_rows_scalar,
                                 nearest_mahal_scalar};
  return table;
}

}  // namespace sq::kern
