#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <numeric>

#include "oracle.hpp"
#include "sq/errors.hpp"
#include "sq/image.hpp"
#include "sq/renderer.hpp"
#include "testutil.hpp"

namespace {

sq::Camera identity_camera(int size = 64) {
  sq::Camera c;
  c.id = 0;
  c.width = c.height = size;
  c.fx = c.fy = size;
  c.cx = c.cy = size / 2.0;
  c.znear = 0.1;
  c.zfar = 100.0;
  return c;
}

sq::Gaussian blob(int id, const Eigen::Vector3d& mu, double s, double alpha) {
  sq::Gaussian g;
  g.id = id;
  g.mu = mu;
  g.scale = {s, s, s};
  g.alpha = alpha;
  return g;
}

sq::Scene two_blob_scene() {
  sq::Scene scene;
  scene.sh_degree = 0;
  scene.gaussians = {blob(0, {0, 0, 2}, 0.12, 0.9), blob(1, {0, 0, 4}, 0.3, 0.85)};
  scene.sh = {1.0, -0.5, 0.2, -0.3, 1.2, 0.4};  // distinct dc colors
  scene.cameras = {identity_camera()};
  scene.recompute_bounds();
  return scene;
}

}  // namespace

TEST_CASE("projection basics") {
  sq::Camera cam = identity_camera();
  sq::Gaussian g = blob(0, {0, 0, 2}, 0.1, 0.9);
  std::vector<double> sh = {0.5, 0.5, 0.5};

  sq::ProjectedGaussian p = sq::project_gaussian(g, sh, 0, cam);
  REQUIRE(p.valid);
  CHECK(p.mx == doctest::Approx(32.0));
  CHECK(p.my == doctest::Approx(32.0));
  CHECK(p.depth == doctest::Approx(2.0));
  CHECK(p.rx > 0);
  CHECK(p.cov[0] * p.cov[2] - p.cov[1] * p.cov[1] > 0);

  SUBCASE("near and far culling") {
    g.mu = {0, 0, 0.05};
    CHECK_FALSE(sq::project_gaussian(g, sh, 0, cam).valid);
    g.mu = {0, 0, 1000};
    CHECK_FALSE(sq::project_gaussian(g, sh, 0, cam).valid);
    g.mu = {0, 0, -3};
    CHECK_FALSE(sq::project_gaussian(g, sh, 0, cam).valid);
  }
}

TEST_CASE("render matches the naive oracle on random scenes") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    sqt::Rng rng(900 + seed);
    int n = rng.uniform_int(20, 200);
    sq::Scene scene = sqt::random_scene(rng, n, 2, 64, static_cast<int>(seed % 4));

    // Track a random half of the scene.
    std::vector<int32_t> tracked;
    for (int j = 0; j < n; ++j)
      if (rng.uniform() < 0.5) tracked.push_back(j);

    for (const sq::Camera& cam : scene.cameras) {
      sq::RenderBuffers rb = sq::render(scene, cam, tracked);
      sqo::OracleBuffers ob = sqo::oracle_render(scene, cam, tracked);

      size_t hw = rb.pixels();
      double dmax = 0;
      for (size_t i = 0; i < hw; ++i) {
        dmax = std::max(dmax, std::abs(rb.plane(0)[i] - ob.r[i]));
        dmax = std::max(dmax, std::abs(rb.plane(1)[i] - ob.g[i]));
        dmax = std::max(dmax, std::abs(rb.plane(2)[i] - ob.b[i]));
      }
      CHECK(dmax <= 1e-4);

      size_t act_bad = 0, arg_bad = 0, mask_bad = 0;
      for (size_t i = 0; i < hw; ++i) {
        if (std::abs(rb.activation[i] - ob.act[i]) > 1e-9) ++act_bad;
        if (rb.argmax_id[i] != ob.argmax[i]) ++arg_bad;
        if (rb.visible_mask[i] != ob.mask[i]) ++mask_bad;
      }
      CHECK(act_bad == 0);
      CHECK(arg_bad == 0);
      CHECK(mask_bad == 0);
    }
  }
}

TEST_CASE("backends and thread counts produce identical buffers") {
  sqt::Rng rng(31);
  sq::Scene scene = sqt::random_scene(rng, 150, 2, 64, 2);
  std::vector<int32_t> tracked(75);
  std::iota(tracked.begin(), tracked.end(), 30);

  auto run = [&](const sq::kern::KernelTable* table, int threads) {
    sq::RenderOptions o;
    o.kernels = table;
    o.threads = threads;
    return sq::render(scene, scene.cameras[0], tracked, o);
  };
  auto bits_equal = [](const sq::RenderBuffers& a, const sq::RenderBuffers& b) {
    return std::memcmp(a.color.data(), b.color.data(),
                       a.color.size() * sizeof(double)) == 0 &&
           std::memcmp(a.activation.data(), b.activation.data(),
                       a.activation.size() * sizeof(double)) == 0 &&
           std::memcmp(a.max_weight.data(), b.max_weight.data(),
                       a.max_weight.size() * sizeof(double)) == 0 &&
           a.argmax_id == b.argmax_id && a.visible_mask == b.visible_mask;
  };

  sq::RenderBuffers scalar1 = run(&sq::kern::scalar_kernels(), 1);
  CHECK(bits_equal(scalar1, run(&sq::kern::scalar_kernels(), 4)));
  if (sq::kern::avx2_supported()) {
    sq::RenderBuffers vec1 = run(&sq::kern::avx2_kernels(), 1);
    CHECK(bits_equal(scalar1, vec1));
    CHECK(bits_equal(vec1, run(&sq::kern::avx2_kernels(), 4)));
  }
}

TEST_CASE("subset tracking uses full scene attenuation") {
  sq::Scene scene = two_blob_scene();
  const sq::Camera& cam = scene.cameras[0];
  size_t center = 32 * 64 + 32;

  sq::RenderBuffers full = sq::render(scene, cam);
  std::vector<int32_t> back = {1};
  sq::RenderBuffers sub = sq::render(scene, cam, back);

  // Color is the full composite no matter the subset.
  CHECK(std::memcmp(full.color.data(), sub.color.data(),
                    full.color.size() * sizeof(double)) == 0);

  // The occluder soaks up ~90% of the weight at the center pixel.
  CHECK(sub.activation[center] < 0.2);
  CHECK(sub.activation[center] > 0.0);
  CHECK(sub.argmax_id[center] == 1);
  CHECK(full.activation[center] > 0.9);
  CHECK(full.argmax_id[center] == 0);

  // Alone, the back gaussian would dominate the same pixel.
  sq::Scene only_back;
  only_back.sh_degree = 0;
  only_back.gaussians = {scene.gaussians[1]};
  only_back.gaussians[0].id = 0;
  only_back.sh = {-0.3, 1.2, 0.4};
  only_back.cameras = scene.cameras;
  only_back.recompute_bounds();
  sq::RenderBuffers alone = sq::render(only_back, cam);
  CHECK(alone.activation[center] > 4.0 * sub.activation[center]);

  SUBCASE("empty subset tracks nothing") {
    sq::RenderBuffers none = sq::render(scene, cam, std::span<const int32_t>{});
    for (size_t i = 0; i < none.pixels(); ++i) {
      CHECK(none.activation[i] == 0.0);
      CHECK(none.argmax_id[i] == -1);
      CHECK(none.visible_mask[i] == 0);
    }
    CHECK(std::memcmp(full.color.data(), none.color.data(),
                      full.color.size() * sizeof(double)) == 0);
  }
  SUBCASE("out of range subset id is rejected") {
    std::vector<int32_t> bad = {5};
    CHECK_THROWS_AS(sq::render(scene, cam, bad), sq::ValidationError);
  }
}

TEST_CASE("png encoding is deterministic and well formed") {
  sqt::Rng rng(12);
  sq::Scene scene = sqt::random_scene(rng, 60, 1);
  sq::RenderBuffers rb = sq::render(scene, scene.cameras[0]);

  sq::Image a = sq::make_image(rb);
  sq::Image b = sq::make_image(rb);
  CHECK(a.digest == b.digest);
  CHECK(a.png.size() > 8);
  const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  CHECK(std::memcmp(a.png.data(), sig, 8) == 0);
  CHECK(std::memcmp(a.png.data() + 12, "IHDR", 4) == 0);

  auto dir = sqt::temp_dir("png");
  sq::write_png_rgb((dir / "out.png").string(), rb);
  CHECK(std::filesystem::file_size(dir / "out.png") == a.png.size());
}
