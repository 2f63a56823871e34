#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "sq/kernels.hpp"
#include "sq/mathutil.hpp"
#include "testutil.hpp"

using sq::kern::KernelTable;
using sq::kern::MahalSoa;
using sq::kern::PixelRow;
using sq::kern::Splat2D;

TEST_CASE("fast_exp tracks libm within a few ulp") {
  for (int i = 0; i <= 200000; ++i) {
    double x = -30.0 + 60.0 * i / 200000.0;
    double got = sq::fast_exp(x);
    double want = std::exp(x);
    CHECK(std::abs(got - want) <= 5e-15 * want);
  }
  CHECK(sq::fast_exp(-1000.0) == 0.0);
  CHECK(std::isinf(sq::fast_exp(1000.0)));
}

namespace {

struct RowFixture {
  int n;
  std::vector<double> trans, r, g, b, act, maxw;
  std::vector<int32_t> argmax;

  explicit RowFixture(sqt::Rng& rng, int n_) : n(n_) {
    trans.resize(n);
    r.resize(n);
    g.resize(n);
    b.resize(n);
    act.resize(n);
    maxw.resize(n);
    argmax.resize(n);
    for (int i = 0; i < n; ++i) {
      trans[i] = rng.uniform() < 0.15 ? rng.uniform(0.0, 0.01) : rng.uniform(0.01, 1.0);
      r[i] = rng.uniform();
      g[i] = rng.uniform();
      b[i] = rng.uniform();
      act[i] = rng.uniform(0.0, 0.6);
      maxw[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform(0.0, 0.4);
      argmax[i] = maxw[i] > 0 ? rng.uniform_int(0, 50) : -1;
    }
  }
  PixelRow row() {
    return {trans.data(), r.data(),    g.data(),    b.data(),
            act.data(),   maxw.data(), argmax.data()};
  }
  bool operator==(const RowFixture& o) const {
    auto same = [](const std::vector<double>& a, const std::vector<double>& b) {
      return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    };
    return same(trans, o.trans) && same(r, o.r) && same(g, o.g) && same(b, o.b) &&
           same(act, o.act) && same(maxw, o.maxw) && argmax == o.argmax;
  }
};

Splat2D random_splat(sqt::Rng& rng, int id) {
  // Random SPD inverse covariance with a footprint of a few pixels.
  double sx = rng.uniform(0.5, 6.0), sy = rng.uniform(0.5, 6.0);
  double rho = rng.uniform(-0.9, 0.9);
  double a = sx * sx, c = sy * sy, b = rho * sx * sy;
  double det = a * c - b * b;
  return Splat2D{rng.uniform(0.0, 32.0),
                 rng.uniform(0.0, 32.0),
                 c / det,
                 -b / det,
                 a / det,
                 rng.uniform(0.05, 1.0),
                 rng.uniform(),
                 rng.uniform(),
                 rng.uniform(),
                 id,
                 rng.uniform() < 0.7};
}

}  // namespace

TEST_CASE("composite_row backends are bit identical") {
  if (!sq::kern::avx2_supported()) {
    MESSAGE("avx2 unavailable, skipping");
    return;
  }
  const KernelTable& sc = sq::kern::scalar_kernels();
  const KernelTable& vx = sq::kern::avx2_kernels();

  for (uint64_t seed = 0; seed < 200; ++seed) {
    sqt::Rng rng(1000 + seed);
    int n = rng.uniform_int(1, 33);  // exercises all tail lengths
    RowFixture fa(rng, n);
    RowFixture fb = fa;
    for (int s = 0; s < 8; ++s) {
      Splat2D sp = random_splat(rng, static_cast<int>(seed * 8 + s));
      double py = rng.uniform(0.0, 32.0);
      double px0 = rng.uniform_int(0, 40) + 0.5;
      sc.composite_row(sp, py, px0, n, fa.row());
      vx.composite_row(sp, py, px0, n, fb.row());
    }
    REQUIRE(fa == fb);
  }
}

TEST_CASE("composite_row honors the documented gates") {
  const KernelTable& sc = sq::kern::scalar_kernels();
  sqt::Rng rng(42);
  RowFixture f(rng, 8);
  for (int i = 0; i < 8; ++i) {
    f.trans[i] = 1.0;
    f.act[i] = 0.0;
    f.maxw[i] = 0.0;
    f.argmax[i] = -1;
    f.r[i] = f.g[i] = f.b[i] = 0.0;
  }
  // Unit isotropic splat centered on pixel 2.
  Splat2D sp{2.5, 0.5, 1.0, 0.0, 1.0, 0.9, 1.0, 0.5, 0.25, 7, true};
  sc.composite_row(sp, 0.5, 0.5, 8, f.row());

  CHECK(f.act[2] == doctest::Approx(0.9));  // exp(0) * 0.9 at the center
  CHECK(f.argmax[2] == 7);
  CHECK(f.trans[2] == doctest::Approx(0.1));
  CHECK(f.r[2] == doctest::Approx(0.9));
  // Distant pixels get nothing: q > cutoff and alpha below the floor.
  CHECK(f.act[7] == 0.0);
  CHECK(f.argmax[7] == -1);
  CHECK(f.trans[7] == 1.0);

  // A pixel whose transmittance is already below the floor stays frozen.
  f.trans[2] = 1e-4;
  double before = f.act[2];
  sc.composite_row(sp, 0.5, 0.5, 8, f.row());
  CHECK(f.act[2] == before);
  CHECK(f.trans[2] == 1e-4);

  // Opacity clamp: alpha ~1 still leaves 1% transmittance.
  Splat2D hot{4.5, 0.5, 25.0, 0.0, 25.0, 0.9999999, 1, 1, 1, 9, true};
  f.trans[4] = 1.0;
  sc.composite_row(hot, 0.5, 0.5, 8, f.row());
  CHECK(f.trans[4] == doctest::Approx(0.01).epsilon(1e-4));
}

TEST_CASE("dot_rows backends agree to double precision") {
  const KernelTable& sc = sq::kern::scalar_kernels();
  sqt::Rng rng(7);
  for (int dim : {1, 3, 4, 17, 64, 257}) {
    int n = 40;
    std::vector<float> rows(static_cast<size_t>(n) * dim), vec(dim);
    for (auto& v : rows) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : vec) v = static_cast<float>(rng.uniform(-1, 1));
    std::vector<double> a(n), b(n);
    sc.dot_rows(rows.data(), n, dim, vec.data(), a.data());

    // Reference against a plain long double loop.
    for (int i = 0; i < n; ++i) {
      long double acc = 0;
      for (int d = 0; d < dim; ++d)
        acc += static_cast<long double>(rows[i * dim + d]) * vec[d];
      CHECK(std::abs(a[i] - static_cast<double>(acc)) <= 1e-12 * (1.0 + std::abs(a[i])));
    }

    if (sq::kern::avx2_supported()) {
      sq::kern::avx2_kernels().dot_rows(rows.data(), n, dim, vec.data(), b.data());
      for (int i = 0; i < n; ++i)
        CHECK(std::abs(a[i] - b[i]) <= 1e-12 * (1.0 + std::abs(a[i])));
    }
  }
}

namespace {

struct MahalFixture {
  std::vector<double> mx, my, mz, ixx, ixy, ixz, iyy, iyz, izz;

  explicit MahalFixture(sqt::Rng& rng, int n) {
    for (int j = 0; j < n; ++j) {
      mx.push_back(rng.uniform(-2, 2));
      my.push_back(rng.uniform(-2, 2));
      mz.push_back(rng.uniform(-2, 2));
      // Random diagonal-dominant SPD inverse.
      double a = rng.uniform(0.5, 30), b = rng.uniform(0.5, 30), c = rng.uniform(0.5, 30);
      double xy = rng.uniform(-0.2, 0.2) * std::sqrt(a * b);
      double xz = rng.uniform(-0.2, 0.2) * std::sqrt(a * c);
      double yz = rng.uniform(-0.2, 0.2) * std::sqrt(b * c);
      ixx.push_back(a);
      iyy.push_back(b);
      izz.push_back(c);
      ixy.push_back(xy);
      ixz.push_back(xz);
      iyz.push_back(yz);
    }
  }
  MahalSoa soa() const {
    return {mx.data(),  my.data(),  mz.data(), ixx.data(), ixy.data(),
            ixz.data(), iyy.data(), iyz.data(), izz.data()};
  }
};

}  // namespace

TEST_CASE("nearest_mahal backends are bit identical including ties") {
  const KernelTable& sc = sq::kern::scalar_kernels();
  bool has_avx2 = sq::kern::avx2_supported();

  for (uint64_t seed = 0; seed < 50; ++seed) {
    sqt::Rng rng(300 + seed);
    int n = rng.uniform_int(1, 40);
    MahalFixture f(rng, n);
    // Duplicate a few entries to force exact distance ties.
    if (n > 4) {
      for (auto* v : {&f.mx, &f.my, &f.mz, &f.ixx, &f.ixy, &f.ixz, &f.iyy,
                      &f.iyz, &f.izz})
        (*v)[n - 1] = (*v)[1];
    }
    for (int p = 0; p < 20; ++p) {
      double px = rng.uniform(-2, 2), py = rng.uniform(-2, 2), pz = rng.uniform(-2, 2);
      int64_t ia, ib;
      double da, db;
      sc.nearest_mahal(f.soa(), n, px, py, pz, &ia, &da);
      REQUIRE(ia >= 0);
      REQUIRE(ia < n);
      if (has_avx2) {
        sq::kern::avx2_kernels().nearest_mahal(f.soa(), n, px, py, pz, &ib, &db);
        CHECK(ia == ib);
        CHECK(da == db);
      }
    }
  }

  SUBCASE("exact tie resolves to the lowest index") {
    MahalSoa m;
    std::vector<double> mx = {1, 1, 1}, my = {0, 0, 0}, mz = {0, 0, 0};
    std::vector<double> one = {1, 1, 1}, zero = {0, 0, 0};
    m = {mx.data(), my.data(), mz.data(), one.data(), zero.data(),
         zero.data(), one.data(), zero.data(), one.data()};
    int64_t idx;
    double d2;
    sc.nearest_mahal(m, 3, 0, 0, 0, &idx, &d2);
    CHECK(idx == 0);
    CHECK(d2 == doctest::Approx(1.0));
    if (has_avx2) {
      sq::kern::avx2_kernels().nearest_mahal(m, 3, 0, 0, 0, &idx, &d2);
      CHECK(idx == 0);
    }
  }
}

TEST_CASE("backend dispatch honors the environment override") {
  // kernels() caches its choice, so only sanity-check the resolved name here.
  const KernelTable& k = sq::kern::kernels();
  const char* env = std::getenv("SPLATQUERY_KERNELS");
  if (env && std::string(env) == "scalar") {
    CHECK(std::string(k.name) == "scalar");
  } else {
    CHECK((std::string(k.name) == "scalar" || std::string(k.name) == "avx2"));
    if (sq::kern::avx2_supported() && !env) CHECK(std::string(k.name) == "avx2");
  }
}
