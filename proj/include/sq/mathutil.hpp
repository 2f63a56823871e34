#pragma once

#include <cmath>
#include <cstdint>

namespace sq {

// exp(x) via the classic Cephes rational approximation (~2 ulp). The point of
// carrying our own is reproducibility: the scalar and AVX2 compositing kernels
// evaluate the same polynomial in the same operation order, so backends stay
// bit-identical. libm's exp gives no such guarantee across builds.
inline double fast_exp(double x) {
  constexpr double kLog2E = 1.4426950408889634073599;
  constexpr double kC1 = 6.93145751953125e-1;
  constexpr double kC2 = 1.42860682030941723212e-6;
  constexpr double kP0 = 1.26177193074810590878e-4;
  constexpr double kP1 = 3.02994407707441961300e-2;
  constexpr double kP2 = 9.99999999999999999910e-1;
  constexpr double kQ0 = 3.00198505138664455042e-6;
  constexpr double kQ1 = 2.52448340349684104192e-3;
  constexpr double kQ2 = 2.27265548208155028766e-1;
  constexpr double kQ3 = 2.00000000000000000005e0;

  if (x > 709.0) return HUGE_VAL;
  if (x < -708.0) return 0.0;

  double pn = std::floor(kLog2E * x + 0.5);
  int n = static_cast<int>(pn);
  x = x - pn * kC1;
  x = x - pn * kC2;

  double xx = x * x;
  double px = x * ((kP0 * xx + kP1) * xx + kP2);
  double qx = ((kQ0 * xx + kQ1) * xx + kQ2) * xx + kQ3;
  double r = px / (qx - px);
  r = 1.0 + 2.0 * r;

  // Scale by 2^n through exponent bits; n is within the normal range here.
  uint64_t bits = static_cast<uint64_t>(1023 + n) << 52;
  double scale;
  __builtin_memcpy(&scale, &bits, sizeof scale);
  return r * scale;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double inv_sigmoid(double y) { return std::log(y / (1.0 - y)); }

}  // namespace sq
