// AVX2 backend. Every arithmetic step mirrors the scalar kernel's operation
// order so the two backends produce bit-identical buffers; lanes that fail a
// gate may compute garbage but are always blended away before any store.

#include <immintrin.h>

#include <cmath>

#include "sq/kernels.hpp"

namespace sq::kern {
namespace {

inline __m256d fast_exp4(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);

  __m256d pn = _mm256_floor_pd(
      _mm256_add_pd(_mm256_mul_pd(log2e, x), _mm256_set1_pd(0.5)));
  __m128i n32 = _mm256_cvttpd_epi32(pn);

  x = _mm256_sub_pd(x, _mm256_mul_pd(pn, c1));
  x = _mm256_sub_pd(x, _mm256_mul_pd(pn, c2));

  __m256d xx = _mm256_mul_pd(x, x);
  __m256d px = _mm256_mul_pd(
      x, _mm256_add_pd(_mm256_mul_pd(_mm256_add_pd(_mm256_mul_pd(p0, xx), p1), xx),
                       p2));
  __m256d qx = _mm256_add_pd(
      _mm256_mul_pd(
          _mm256_add_pd(_mm256_mul_pd(_mm256_add_pd(_mm256_mul_pd(q0, xx), q1), xx),
                        q2),
          xx),
      q3);
  __m256d r = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  r = _mm256_add_pd(_mm256_set1_pd(1.0), _mm256_mul_pd(_mm256_set1_pd(2.0), r));

  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  __m256i bits =
      _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(r, _mm256_castsi256_pd(bits));
}

void composite_row_avx2(const Splat2D& s, double py, double px0, int n,
                        const PixelRow& row) {
  const double dys = py - s.my;
  const __m256d qy = _mm256_set1_pd((s.ic * dys) * dys);
  const __m256d dy = _mm256_set1_pd(dys);
  const __m256d mx = _mm256_set1_pd(s.mx);
  const __m256d ia = _mm256_set1_pd(s.ia);
  const __m256d ib = _mm256_set1_pd(s.ib);
  const __m256d alpha = _mm256_set1_pd(s.alpha);
  const __m256d sr = _mm256_set1_pd(s.r);
  const __m256d sg = _mm256_set1_pd(s.g);
  const __m256d sb = _mm256_set1_pd(s.b);
  const __m256d tmin = _mm256_set1_pd(kTmin);
  const __m256d cutoff = _mm256_set1_pd(kCutoffQ);
  const __m256d minalpha = _mm256_set1_pd(kMinAlpha);
  const __m256d clampv = _mm256_set1_pd(kAlphaClamp);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d neghalf = _mm256_set1_pd(-0.5);

  int i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d t = _mm256_loadu_pd(row.trans + i);
    __m256d px = _mm256_add_pd(
        _mm256_set1_pd(px0), _mm256_setr_pd(i, i + 1, i + 2, i + 3));
    __m256d dx = _mm256_sub_pd(px, mx);
    __m256d qx = _mm256_mul_pd(_mm256_mul_pd(ia, dx), dx);
    __m256d qxy = _mm256_mul_pd(_mm256_mul_pd(ib, dx), dy);
    __m256d q = _mm256_add_pd(_mm256_add_pd(qx, qy), _mm256_add_pd(qxy, qxy));
    __m256d a = _mm256_mul_pd(alpha, fast_exp4(_mm256_mul_pd(neghalf, q)));

    __m256d m = _mm256_and_pd(
        _mm256_cmp_pd(t, tmin, _CMP_GE_OQ),
        _mm256_and_pd(_mm256_cmp_pd(q, cutoff, _CMP_LE_OQ),
                      _mm256_cmp_pd(a, minalpha, _CMP_GE_OQ)));
    int mask = _mm256_movemask_pd(m);
    if (!mask) continue;

    a = _mm256_min_pd(a, clampv);
    __m256d w = _mm256_mul_pd(t, a);

    __m256d r0 = _mm256_loadu_pd(row.r + i);
    __m256d g0 = _mm256_loadu_pd(row.g + i);
    __m256d b0 = _mm256_loadu_pd(row.b + i);
    _mm256_storeu_pd(
        row.r + i, _mm256_blendv_pd(r0, _mm256_add_pd(r0, _mm256_mul_pd(w, sr)), m));
    _mm256_storeu_pd(
        row.g + i, _mm256_blendv_pd(g0, _mm256_add_pd(g0, _mm256_mul_pd(w, sg)), m));
    _mm256_storeu_pd(
        row.b + i, _mm256_blendv_pd(b0, _mm256_add_pd(b0, _mm256_mul_pd(w, sb)), m));
    _mm256_storeu_pd(
        row.trans + i,
        _mm256_blendv_pd(t, _mm256_mul_pd(t, _mm256_sub_pd(one, a)), m));

    if (s.tracked) {
      alignas(32) double wl[4];
      _mm256_store_pd(wl, w);
      for (int k = 0; k < 4; ++k) {
        if (!(mask & (1 << k))) continue;
        row.act[i + k] += wl[k];
        if (wl[k] > row.maxw[i + k]) {
          row.maxw[i + k] = wl[k];
          row.argmax[i + k] = s.id;
        }
      }
    }
  }

  if (i < n) {
    // px0 + i is exact (pixel centers are representable), so re-basing the
    // scalar tail reproduces the full-row scalar result bit for bit.
    PixelRow tail{row.trans + i, row.r + i,    row.g + i,     row.b + i,
                  row.act + i,   row.maxw + i, row.argmax + i};
    scalar_kernels().composite_row(s, py, px0 + i, n - i, tail);
  }
}

void dot_rows_avx2(const float* rows, int64_t n, int64_t dim, const float* vec,
                   double* out) {
  for (int64_t i = 0; i < n; ++i) {
    const float* r = rows + i * dim;
    __m256d acc = _mm256_setzero_pd();
    int64_t d = 0;
    for (; d + 4 <= dim; d += 4) {
      __m256d rv = _mm256_cvtps_pd(_mm_loadu_ps(r + d));
      __m256d vv = _mm256_cvtps_pd(_mm_loadu_ps(vec + d));
      acc = _mm256_add_pd(acc, _mm256_mul_pd(rv, vv));
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double sum = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; d < dim; ++d)
      sum += static_cast<double>(r[d]) * static_cast<double>(vec[d]);
    out[i] = sum;
  }
}

void nearest_mahal_avx2(const MahalSoa& m, int64_t n, double px, double py,
                        double pz, int64_t* idx, double* d2) {
  if (n < 8) {
    scalar_kernels().nearest_mahal(m, n, px, py, pz, idx, d2);
    return;
  }

  const __m256d vpx = _mm256_set1_pd(px);
  const __m256d vpy = _mm256_set1_pd(py);
  const __m256d vpz = _mm256_set1_pd(pz);
  __m256d best_d = _mm256_set1_pd(HUGE_VAL);
  __m256i best_i = _mm256_set1_epi64x(0);
  __m256i cur = _mm256_setr_epi64x(0, 1, 2, 3);
  const __m256i step = _mm256_set1_epi64x(4);

  int64_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d dx = _mm256_sub_pd(vpx, _mm256_loadu_pd(m.mx + j));
    __m256d dy = _mm256_sub_pd(vpy, _mm256_loadu_pd(m.my + j));
    __m256d dz = _mm256_sub_pd(vpz, _mm256_loadu_pd(m.mz + j));
    __m256d t1 = _mm256_mul_pd(_mm256_mul_pd(_mm256_loadu_pd(m.ixx + j), dx), dx);
    __m256d t2 = _mm256_mul_pd(_mm256_mul_pd(_mm256_loadu_pd(m.iyy + j), dy), dy);
    __m256d t3 = _mm256_mul_pd(_mm256_mul_pd(_mm256_loadu_pd(m.izz + j), dz), dz);
    __m256d t4 = _mm256_mul_pd(_mm256_mul_pd(_mm256_loadu_pd(m.ixy + j), dx), dy);
    __m256d t5 = _mm256_mul_pd(_mm256_mul_pd(_mm256_loadu_pd(m.ixz + j), dx), dz);
    __m256d t6 = _mm256_mul_pd(_mm256_mul_pd(_mm256_loadu_pd(m.iyz + j), dy), dz);
    __m256d cross = _mm256_add_pd(_mm256_add_pd(t4, t5), t6);
    __m256d v = _mm256_add_pd(_mm256_add_pd(_mm256_add_pd(t1, t2), t3),
                              _mm256_add_pd(cross, cross));

    __m256d lt = _mm256_cmp_pd(v, best_d, _CMP_LT_OQ);
    best_d = _mm256_blendv_pd(best_d, v, lt);
    best_i = _mm256_castpd_si256(_mm256_blendv_pd(
        _mm256_castsi256_pd(best_i), _mm256_castsi256_pd(cur), lt));
    cur = _mm256_add_epi64(cur, step);
  }

  alignas(32) double dl[4];
  alignas(32) int64_t il[4];
  _mm256_store_pd(dl, best_d);
  _mm256_store_si256(reinterpret_cast<__m256i*>(il), best_i);

  // Lane winners hold the earliest index of their lane minimum, so the lowest
  // index among equal values wins globally, matching the scalar rule.
  int64_t bi = il[0];
  double bd = dl[0];
  for (int k = 1; k < 4; ++k) {
    if (dl[k] < bd || (dl[k] == bd && il[k] < bi)) {
      bd = dl[k];
      bi = il[k];
    }
  }
  for (; j < n; ++j) {
    double v = detail::mahal_d2(m, j, px, py, pz);
    if (v < bd) {
      bd = v;
      bi = j;
    }
  }
  *idx = bi;
  *d2 = bd;
}

}  // namespace

const KernelTable& avx2_kernels() {
  static const KernelTable table{"avx2", composite_row_avx2, dot_rows_avx2,
                                 nearest_mahal_avx2};
  return table;
}

}  // namespace sq::kern
