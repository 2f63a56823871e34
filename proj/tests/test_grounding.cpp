#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>

#include "sq/errors.hpp"
#include "sq/gateway.hpp"
#include "sq/grounding.hpp"
#include "testutil.hpp"

namespace {

const sq::PromptLibrary& prompts() {
  static sq::PromptLibrary lib =
      sq::PromptLibrary::load(sq::PromptLibrary::default_dir());
  return lib;
}

sq::Gaussian blob(int id, const Eigen::Vector3d& mu,
                  const Eigen::Vector3d& scale, double alpha = 0.9) {
  sq::Gaussian g;
  g.id = id;
  g.mu = mu;
  g.scale = scale;
  g.alpha = alpha;
  return g;
}

sq::Scene blob_scene(std::vector<sq::Gaussian> gs) {
  sq::Scene s;
  s.sh_degree = 0;
  s.sh.assign(gs.size() * 3, 0.5);
  s.gaussians = std::move(gs);
  return s;
}

bool in_frustum_planes(const sq::Camera& c, const Eigen::Vector3d& mu) {
  Eigen::Vector3d pc = c.R * mu + c.t;
  const double z = pc.z();
  if (!(z > c.znear) || !(z < c.zfar)) return false;
  if (!(c.fx * pc.x() >= -c.cx * z)) return false;
  if (!(c.fx * pc.x() <= (c.width - c.cx) * z)) return false;
  if (!(c.fy * pc.y() >= -c.cy * z)) return false;
  if (!(c.fy * pc.y() <= (c.height - c.cy) * z)) return false;
  return true;
}

// Independent nearest-gaussian oracle: LDLT solve instead of an explicit
// inverse, same 1e-8 diagonal regularization.
std::vector<int32_t> oracle_distill(std::span<const sq::LabeledPoint> pts,
                                    const sq::Scene& scene) {
  const size_t n = scene.size();
  std::vector<Eigen::LDLT<Eigen::Matrix3d>> dec;
  dec.reserve(n);
  for (const auto& g : scene.gaussians)
    dec.emplace_back(
        (g.covariance() + 1e-8 * Eigen::Matrix3d::Identity()).ldlt());

  std::vector<std::map<int32_t, int64_t>> votes(n);
  for (const auto& lp : pts) {
    int64_t best = -1;
    double best_d2 = 0;
    for (size_t j = 0; j < n; ++j) {
      Eigen::Vector3d d = lp.p - scene.gaussians[j].mu;
      double d2 = d.dot(dec[j].solve(d));
      if (best < 0 || d2 < best_d2) {
        best = static_cast<int64_t>(j);
        best_d2 = d2;
      }
    }
    ++votes[static_cast<size_t>(best)][lp.instance];
  }
  std::vector<int32_t> labels(n, -1);
  for (size_t j = 0; j < n; ++j) {
    int64_t best = 0;
    for (const auto& [inst, cnt] : votes[j])
      if (cnt > best) {
        best = cnt;
        labels[j] = inst;
      }
  }
  return labels;
}

sq::MockRule rule(const std::string& match, const std::string& reply) {
  sq::MockRule r;
  r.match = match;
  r.reply = reply;
  return r;
}

}  // namespace

TEST_CASE("frustum keeps the middle and drops behind/outside") {
  sq::Scene sc = blob_scene({blob(0, {0, 0, 5}, {0.1, 0.1, 0.1}),
                             blob(1, {0, 0, -3}, {0.1, 0.1, 0.1}),
                             blob(2, {0, 0, 80}, {0.1, 0.1, 0.1}),
                             blob(3, {40, 0, 5}, {0.1, 0.1, 0.1})});
  sq::Camera cam;
  cam.width = cam.height = 64;
  cam.fx = cam.fy = 64;
  cam.cx = cam.cy = 32;
  cam.znear = 0.1;
  cam.zfar = 50.0;

  std::vector<int32_t> all{0, 1, 2, 3};
  CHECK(sq::frustum_filter(sc, all, cam) == std::vector<int32_t>{0});
  std::vector<int32_t> behind{1};
  CHECK(sq::frustum_filter(sc, behind, cam).empty());
  CHECK(sq::frustum_filter(sc, std::span<const int32_t>{}, cam).empty());
}

TEST_CASE("frustum equals the six-plane oracle on random points") {
  for (uint64_t seed : {3u, 4u}) {
    sqt::Rng rng(seed);
    sq::Scene scene = sqt::random_scene(rng, 1, 4, 48);
    scene.gaussians.clear();
    scene.sh.clear();
    for (int j = 0; j < 200; ++j) {
      Eigen::Vector3d mu(rng.uniform(-8, 8), rng.uniform(-8, 8),
                         rng.uniform(-8, 8));
      scene.gaussians.push_back(blob(j, mu, {0.1, 0.1, 0.1}));
      for (int k = 0; k < 3; ++k) scene.sh.push_back(0.5);
    }
    std::vector<int32_t> all(scene.size());
    std::iota(all.begin(), all.end(), 0);

    for (const auto& cam : scene.cameras) {
      auto kept = sq::frustum_filter(scene, all, cam);
      std::vector<int32_t> expect;
      for (int32_t id : all)
        if (in_frustum_planes(cam, scene.gaussians[id].mu))
          expect.push_back(id);
      CHECK(kept == expect);
      CHECK(std::includes(all.begin(), all.end(), kept.begin(), kept.end()));
      CHECK(sq::frustum_filter(scene, kept, cam) == kept);  // idempotent
    }
  }
}

TEST_CASE("distill labels the gaussian under the point") {
  sq::Scene sc = blob_scene({blob(0, {0, 0, 0}, {0.3, 0.3, 0.3}),
                             blob(1, {10, 0, 0}, {0.3, 0.3, 0.3})});
  std::vector<sq::LabeledPoint> pts{{{0, 0, 0}, 7}};
  auto lab = sq::distill_gt(pts, sc);
  CHECK(lab.source == "distilled");
  REQUIRE(lab.labels.size() == 2);
  CHECK(lab.labels[0] == 7);
  CHECK(lab.labels[1] == -1);
  CHECK(sq::ids_with_label(lab, 7) == std::vector<int32_t>{0});
  CHECK(sq::ids_with_label(lab, 9).empty());
}

TEST_CASE("distill uses mahalanobis, not euclidean, distance") {
  // G0 is euclidean-nearer to the point; G1 is elongated toward it and wins
  // under mahalanobis: d0^2 = 0.8^2/0.04 = 16, d1^2 = 1.2^2/9 = 0.16.
  sq::Scene sc = blob_scene({blob(0, {2, 0, 0}, {0.2, 0.2, 0.2}),
                             blob(1, {0, 0, 0}, {3.0, 0.1, 0.1})});
  Eigen::Vector3d p(1.2, 0, 0);
  CHECK((p - sc.gaussians[0].mu).norm() < (p - sc.gaussians[1].mu).norm());

  Eigen::Matrix3d i0 =
      (sc.gaussians[0].covariance() + 1e-8 * Eigen::Matrix3d::Identity())
          .inverse();
  Eigen::Matrix3d i1 =
      (sc.gaussians[1].covariance() + 1e-8 * Eigen::Matrix3d::Identity())
          .inverse();
  Eigen::Vector3d d0 = p - sc.gaussians[0].mu;
  Eigen::Vector3d d1 = p - sc.gaussians[1].mu;
  CHECK(d0.dot(i0 * d0) == doctest::Approx(16.0).epsilon(1e-6));
  CHECK(d1.dot(i1 * d1) == doctest::Approx(0.16).epsilon(1e-6));

  std::vector<sq::LabeledPoint> pts{{p, 3}};
  auto lab = sq::distill_gt(pts, sc);
  CHECK(lab.labels[0] == -1);
  CHECK(lab.labels[1] == 3);
}

TEST_CASE("votes accumulate and ties take the smaller instance id") {
  sq::Scene sc = blob_scene({blob(0, {0, 0, 0}, {1.0, 1.0, 1.0})});
  std::vector<sq::LabeledPoint> majority{
      {{0.1, 0, 0}, 2}, {{0, 0.1, 0}, 2}, {{0, 0, 0.1}, 2},
      {{0.2, 0, 0}, 5}, {{0, 0.2, 0}, 5}};
  CHECK(sq::distill_gt(majority, sc).labels[0] == 2);

  std::vector<sq::LabeledPoint> tie{
      {{0.1, 0, 0}, 5}, {{0, 0.1, 0}, 5}, {{0.2, 0, 0}, 3}, {{0, 0.2, 0}, 3}};
  CHECK(sq::distill_gt(tie, sc).labels[0] == 3);
}

TEST_CASE("distill matches the ldlt oracle and ignores point order") {
  sqt::Rng rng(41);
  sq::Scene scene = sqt::random_scene(rng, 50, 1, 16);
  std::vector<sq::LabeledPoint> pts;
  for (int i = 0; i < 120; ++i)
    pts.push_back({{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)},
                   static_cast<int32_t>(rng.uniform_int(0, 3))});

  auto lab = sq::distill_gt(pts, scene);
  CHECK(lab.labels == oracle_distill(pts, scene));
  CHECK(lab.labels ==
        sq::distill_gt(pts, scene, &sq::kern::scalar_kernels()).labels);

  auto shuffled = pts;
  for (size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1],
              shuffled[static_cast<size_t>(rng.uniform_int(0, i - 1))]);
  CHECK(sq::distill_gt(shuffled, scene).labels == lab.labels);

  CHECK_THROWS_AS(sq::distill_gt({}, scene), sq::ValidationError);
  sq::Scene empty;
  CHECK_THROWS_AS(sq::distill_gt(pts, empty), sq::ValidationError);
}

TEST_CASE("normalized volume clips at the 90th percentile") {
  std::vector<sq::Gaussian> gs;
  for (int j = 0; j < 8; ++j)
    gs.push_back(blob(j, {double(j), 0, 0}, {0.2, 0.2, 0.2}, 0.5));
  auto even = sq::normalized_volume(blob_scene(gs));
  for (double w : even) CHECK(w == 1.0);

  gs[7] = blob(7, {7, 0, 0}, {2.0, 2.0, 2.0}, 0.5);  // way past the percentile
  auto skew = sq::normalized_volume(blob_scene(gs));
  CHECK(skew[7] == 1.0);
  CHECK(skew[0] < 1.0);
  CHECK(skew[0] > 0.0);

  for (auto& g : gs) g.alpha = 0.0;
  auto zero = sq::normalized_volume(blob_scene(gs));
  for (double w : zero) CHECK(w == 0.0);

  sq::Scene none;
  CHECK_THROWS_AS(sq::normalized_volume(none), sq::ValidationError);
}

TEST_CASE("normalized volume matches a sort-based percentile oracle") {
  sqt::Rng rng(43);
  std::vector<sq::Gaussian> gs;
  std::vector<double> vols;
  for (int j = 0; j < 100; ++j) {
    Eigen::Vector3d s(rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5),
                      rng.uniform(0.01, 0.5));
    double a = rng.uniform(0.05, 1.0);
    gs.push_back(blob(j, {double(j), 0, 0}, s, a));
    vols.push_back(s.x() * s.y() * s.z() * a);
  }
  auto out = sq::normalized_volume(blob_scene(gs));

  std::vector<double> sorted = vols;
  std::sort(sorted.begin(), sorted.end());
  double r = 0.9 * 99.0;
  size_t lo = static_cast<size_t>(r);
  double v90 = sorted[lo] + (r - double(lo)) * (sorted[lo + 1] - sorted[lo]);
  for (int j = 0; j < 100; ++j) {
    double expect = std::min(vols[j] / v90, 1.0);
    CHECK(out[j] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(out[j] >= 0.0);
    CHECK(out[j] <= 1.0);
  }
  // Monotone below the clip point.
  for (int a = 0; a < 100; ++a)
    for (int b = 0; b < 100; ++b)
      if (vols[a] < vols[b] && vols[b] < v90) CHECK(out[a] < out[b]);
}

TEST_CASE("volumetric iou") {
  std::vector<double> w{1.0, 1.0, 1.0, 0.25};
  std::vector<int32_t> ab{0, 1}, bc{1, 2}, none;
  CHECK(sq::miou_3d(ab, ab, w) == 1.0);
  CHECK(sq::miou_3d(ab, std::vector<int32_t>{2, 3}, w) == 0.0);
  CHECK(sq::miou_3d(ab, bc, w) == 1.0 / 3.0);
  CHECK(sq::miou_3d(bc, ab, w) == 1.0 / 3.0);  // symmetric
  CHECK(sq::miou_3d(none, none, w) == 0.0);

  // Weighted: pred {0}, gt {0,3} -> 1 / 1.25.
  std::vector<int32_t> p0{0}, g03{0, 3};
  CHECK(sq::miou_3d(p0, g03, w) == doctest::Approx(0.8).epsilon(1e-15));

  // True positives help, false positives hurt.
  double base = sq::miou_3d(p0, g03, w);
  std::vector<int32_t> tp{0, 3}, fp{0, 1};
  CHECK(sq::miou_3d(tp, g03, w) > base);
  CHECK(sq::miou_3d(fp, g03, w) < base);

  std::vector<int32_t> bad{9};
  CHECK_THROWS_AS(sq::miou_3d(bad, g03, w), sq::ValidationError);
}

TEST_CASE("acc@k counts strict exceedance") {
  std::vector<double> two{0.6, 0.04};
  CHECK(sq::acc_at_k(two, 5.0) == 50.0);
  std::vector<double> zeros{0.0, 0.0, 0.0};
  CHECK(sq::acc_at_k(zeros, 5.0) == 0.0);
  std::vector<double> edge{0.05};
  CHECK(sq::acc_at_k(edge, 5.0) == 0.0);  // not strictly greater

  sqt::Rng rng(47);
  std::vector<double> ious;
  for (int i = 0; i < 50; ++i) ious.push_back(rng.uniform(0.0, 1.0));
  for (double k : {5.0, 8.0, 10.0, 50.0}) {
    size_t n = 0;
    for (double x : ious)
      if (x > k / 100.0) ++n;
    CHECK(sq::acc_at_k(ious, k) == 100.0 * double(n) / 50.0);
  }

  CHECK_THROWS_AS(sq::acc_at_k({}, 5.0), sq::ValidationError);
  std::vector<double> out_of_range{1.2};
  CHECK_THROWS_AS(sq::acc_at_k(out_of_range, 5.0), sq::ValidationError);
}

TEST_CASE("llm match maps grades onto 0..100") {
  auto graded = [&](const std::string& reply) {
    sq::MockGateway gw;
    gw.set_default_reply(reply);
    return sq::llm_match("Where is the mug?", "on the desk", "on the table",
                         gw, prompts(), "judge");
  };
  CHECK(graded("5").score == 100.0);
  CHECK(graded("5").parsed);
  CHECK(graded("1").score == 0.0);
  CHECK(graded("3").score == 50.0);
  CHECK(graded("Your mark: 4").grade == 4);

  sq::MockGateway retry;
  retry.add_rule(rule("could not be parsed", "2"));
  retry.set_default_reply("hmm, tricky");
  auto r = sq::llm_match("Q?", "gt", "pred", retry, prompts(), "judge");
  CHECK(r.score == 25.0);
  CHECK(r.parsed);
  CHECK(retry.calls() == 2);

  sq::MockGateway garbage;
  garbage.set_default_reply("no digits here");
  r = sq::llm_match("Q?", "gt", "pred", garbage, prompts(), "judge");
  CHECK(r.score == 0.0);
  CHECK(r.grade == 0);
  CHECK_FALSE(r.parsed);

  sq::MockGateway gw;
  CHECK_THROWS_AS(sq::llm_match("", "gt", "p", gw, prompts(), "judge"),
                  sq::ValidationError);
  CHECK_THROWS_AS(sq::llm_match("Q?", "", "p", gw, prompts(), "judge"),
                  sq::ValidationError);
}

TEST_CASE("labeled point ply round-trips") {
  sqt::Rng rng(53);
  std::vector<sq::LabeledPoint> pts;
  for (int i = 0; i < 10; ++i)
    pts.push_back({{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)},
                   static_cast<int32_t>(rng.uniform_int(-1, 12))});

  auto dir = sqt::temp_dir("gt_ply");
  auto path = (dir / "points.ply").string();
  sq::save_labeled_points(path, pts);
  auto loaded = sq::load_labeled_points(path);
  REQUIRE(loaded.size() == pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    CHECK(loaded[i].p.x() == double(float(pts[i].p.x())));
    CHECK(loaded[i].p.y() == double(float(pts[i].p.y())));
    CHECK(loaded[i].p.z() == double(float(pts[i].p.z())));
    CHECK(loaded[i].instance == pts[i].instance);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("labeled point ply handles extra properties and bad headers") {
  auto dir = sqt::temp_dir("gt_ply2");
  auto path = (dir / "wide.ply").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
           "property double x\nproperty double y\nproperty double z\n"
           "property float confidence\nproperty short instance\nend_header\n";
    auto put = [&](double x, double y, double z, float c, int16_t inst) {
      out.write(reinterpret_cast<const char*>(&x), 8);
      out.write(reinterpret_cast<const char*>(&y), 8);
      out.write(reinterpret_cast<const char*>(&z), 8);
      out.write(reinterpret_cast<const char*>(&c), 4);
      out.write(reinterpret_cast<const char*>(&inst), 2);
    };
    put(1.5, -2.0, 3.25, 0.9f, 4);
    put(-0.5, 0.0, 8.0, 0.1f, -1);
  }
  auto pts = sq::load_labeled_points(path);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].p == Eigen::Vector3d(1.5, -2.0, 3.25));
  CHECK(pts[0].instance == 4);
  CHECK(pts[1].instance == -1);

  auto bad = (dir / "bad.ply").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
           "property float x\nproperty float y\nproperty float z\n"
           "end_header\n";
    float v[3] = {0, 0, 0};
    out.write(reinterpret_cast<const char*>(v), 12);
  }
  CHECK_THROWS_AS(sq::load_labeled_points(bad), sq::FormatError);

  auto floaty = (dir / "floaty.ply").string();
  {
    std::ofstream out(floaty, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
           "property float x\nproperty float y\nproperty float z\n"
           "property float instance\nend_header\n";
  }
  CHECK_THROWS_AS(sq::load_labeled_points(floaty), sq::FormatError);
  std::filesystem::remove_all(dir);
}
