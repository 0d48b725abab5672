#include <dpa/render.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using Catch::Approx;
using namespace dpa;

namespace {

Camera test_camera() {
  return Camera::look_at(Vec3(0, 0, -2.2), Vec3(0, 0, 0), Vec3(0, 1, 0), 128.0, 128, 128);
}

std::vector<PixelSample> pixel_at(double x, double y) {
  PixelSample s;
  s.x = Index(x);
  s.y = Index(y);
  return {s};
}

}  // namespace

TEST_CASE("look_at produces a valid OpenCV-style pose", "[camera]") {
  const Camera cam = test_camera();
  cam.validate();
  REQUIRE((cam.center() - Vec3(0, 0, -2.2)).norm() < 1e-12);

  // Optical axis points at the target.
  Vec3 o, d;
  cam.pixel_ray(cam.cx, cam.cy, o, d);
  REQUIRE((d - Vec3(0, 0, 1)).norm() < 1e-12);

  SECTION("rays through symmetric pixels are mirror images") {
    Vec3 o1, d1, o2, d2;
    cam.pixel_ray(cam.cx + 10, cam.cy, o1, d1);
    cam.pixel_ray(cam.cx - 10, cam.cy, o2, d2);
    REQUIRE(d1[0] == Approx(-d2[0]));
    REQUIRE(d1[1] == Approx(d2[1]));
    REQUIRE(d1[2] == Approx(d2[2]));
  }

  SECTION("degenerate pose rejected") {
    Camera bad = cam;
    bad.world_to_camera(0, 0) = 3.0;
    REQUIRE_THROWS_AS(bad.validate(), ValidationError);
    REQUIRE_THROWS_AS(Camera::look_at(Vec3(0, 1, 0), Vec3(0, 2, 0), Vec3(0, 1, 0), 100, 64, 64),
                      ValidationError);
  }
}

TEST_CASE("identity-pose pinhole directions", "[camera]") {
  Camera cam;
  cam.fx = cam.fy = 1.0;
  cam.cx = cam.cy = 0.0;
  cam.width = cam.height = 4;
  Vec3 o, d;
  cam.pixel_ray(1.0, 0.0, o, d);
  REQUIRE((d - Vec3(1, 0, 1).normalized()).norm() < 1e-12);
  REQUIRE(o.norm() == 0.0);
}

TEST_CASE("ray_sphere intersection cases", "[camera]") {
  double t0, t1;
  REQUIRE(ray_sphere(Vec3(0, 0, -3), Vec3(0, 0, 1), 1.0, t0, t1));
  REQUIRE(t0 == Approx(2.0));
  REQUIRE(t1 == Approx(4.0));
  REQUIRE_FALSE(ray_sphere(Vec3(0, 2, -3), Vec3(0, 0, 1), 1.0, t0, t1));
  REQUIRE_FALSE(ray_sphere(Vec3(0, 0, 3), Vec3(0, 0, 1), 1.0, t0, t1));  // behind
  // Origin inside: interval clamps to [0, exit].
  REQUIRE(ray_sphere(Vec3(0, 0, 0), Vec3(0, 0, 1), 1.0, t0, t1));
  REQUIRE(t0 == 0.0);
  REQUIRE(t1 == Approx(1.0));
}

TEST_CASE("morphological closing and contour extraction", "[sampler]") {
  Mask m = Mask::Zero(32, 32);
  m.block(8, 8, 10, 10).setOnes();
  m(12, 12) = 0.0;  // pinhole: closing should fill it

  const Mask closed = morphological_close(m);
  REQUIRE(closed(12, 12) == 1.0);
  REQUIRE(closed.sum() >= m.sum());

  const auto contour = contour_pixels(closed);
  REQUIRE_FALSE(contour.empty());
  for (const auto& [y, x] : contour) {
    REQUIRE(closed(y, x) == 1.0);
    const bool has_bg = (y == 0 || closed(y - 1, x) == 0.0) ||
                        (y == 31 || closed(y + 1, x) == 0.0) ||
                        (x == 0 || closed(y, x - 1) == 0.0) ||
                        (x == 31 || closed(y, x + 1) == 0.0);
    REQUIRE(has_bg);
  }

  SECTION("full-frame mask puts the contour on the raster border") {
    const Mask full = Mask::Ones(16, 16);
    const auto border = contour_pixels(morphological_close(full));
    for (const auto& [y, x] : border)
      REQUIRE((y == 0 || y == 15 || x == 0 || x == 15));
    REQUIRE(border.size() == 60);  // 4*16 - 4 corners counted once
  }
}

TEST_CASE("sample_pixels counts, determinism and noise", "[sampler]") {
  Mask m = Mask::Zero(64, 64);
  m.block(20, 20, 24, 24).setOnes();
  Rng rng(99);
  auto samples = sample_pixels(m, 256, 1000, 2.0, rng);
  REQUIRE(samples.size() == 1256);
  for (const auto& s : samples) {
    REQUIRE(s.x >= 0);
    REQUIRE(s.y >= 0);
    REQUIRE(s.x < 64);
    REQUIRE(s.y < 64);
  }

  Rng rng2(99);
  auto samples2 = sample_pixels(m, 256, 1000, 2.0, rng2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    REQUIRE(samples[i].x == samples2[i].x);
    REQUIRE(samples[i].y == samples2[i].y);
  }

  SECTION("zero noise lands exactly on closed-mask contour pixels") {
    Rng r(5);
    const auto closed = morphological_close(m);
    const auto contour = contour_pixels(closed);
    auto s0 = sample_pixels(m, 0, 200, 0.0, r);
    for (const auto& s : s0) {
      const bool on = std::find(contour.begin(), contour.end(),
                                std::make_pair(s.y, s.x)) != contour.end();
      REQUIRE(on);
    }
  }

  SECTION("empty mask rejected") {
    Rng r(5);
    Mask empty = Mask::Zero(8, 8);
    REQUIRE_THROWS_AS(sample_pixels(empty, 10, 10, 2.0, r), ValidationError);
  }
}

TEST_CASE("contour samples hug a disk boundary", "[sampler][property]") {
  const Index H = 128, W = 128;
  const double cx = 63.5, cy = 63.5, radius = 40.0;
  Mask m(H, W);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      m(y, x) = (std::hypot(x - cx, y - cy) <= radius) ? 1.0 : 0.0;

  Rng rng(123);
  const double sigma = 2.0;
  auto samples = sample_pixels(m, 0, 2000, sigma, rng);
  Index close_enough = 0;
  for (const auto& s : samples)
    if (std::abs(std::hypot(s.x - cx, s.y - cy) - radius) <= 3.0 * sigma + 2.0)
      ++close_enough;
  REQUIRE(double(close_enough) / double(samples.size()) >= 0.95);
}

TEST_CASE("generate_rays flags sphere misses and sets bounds", "[render]") {
  const Camera cam = test_camera();
  std::vector<PixelSample> px;
  {
    PixelSample c;
    c.x = 63;
    c.y = 63;
    px.push_back(c);  // roughly central: hits
    PixelSample corner;
    corner.x = 0;
    corner.y = 0;
    px.push_back(corner);  // depends on fov
  }
  RayBundle bundle = generate_rays(cam, px);
  REQUIRE(bundle.ray_count() == 2);
  REQUIRE(bundle.valid[0] == 1);
  REQUIRE(bundle.t_enter[0] == Approx(2.2 - kSceneRadius).margin(1e-2));
  REQUIRE(bundle.near < bundle.far);

  // A camera pointing away from the origin misses everything.
  Camera away = Camera::look_at(Vec3(0, 0, -5), Vec3(0, 0, -10), Vec3(0, 1, 0), 128, 32, 32);
  RayBundle miss = generate_rays(away, pixel_at(16, 16));
  REQUIRE(miss.valid[0] == 0);
}

TEST_CASE("sample_along_rays places bin midpoints", "[render]") {
  RayBundle bundle;
  bundle.origins = MatX3::Zero(1, 3);
  bundle.directions = MatX3::Zero(1, 3);
  bundle.directions(0, 2) = 1.0;
  bundle.t_enter = Vec::Zero(1);
  bundle.t_exit = Vec::Ones(1);
  bundle.valid = {1};
  bundle.near = 0.0;
  bundle.far = 1.0;

  Rng rng(1);
  sample_along_rays(bundle, 4, false, rng);
  Vec expect(4);
  expect << 0.125, 0.375, 0.625, 0.875;
  REQUIRE((bundle.depths.row(0).transpose() - expect).cwiseAbs().maxCoeff() < 1e-15);

  SECTION("stratified jitter stays inside bins and is seed-deterministic") {
    RayBundle b2 = bundle;
    Rng ra(7), rb(7);
    sample_along_rays(bundle, 8, true, ra);
    sample_along_rays(b2, 8, true, rb);
    REQUIRE(bundle.depths == b2.depths);
    for (Index s = 0; s < 8; ++s) {
      REQUIRE(bundle.depths(0, s) >= s / 8.0);
      REQUIRE(bundle.depths(0, s) <= (s + 1) / 8.0);
    }
  }

  SECTION("points lie on the ray at the sampled depths") {
    Rng r(3);
    RayBundle b = bundle;
    const QueryBatch q = sample_along_rays(b, 4, false, r);
    REQUIRE(q.points.rows() == 4);
    REQUIRE(q.points(2, 2) == Approx(0.625));
  }

  SECTION("R < 2 rejected") {
    Rng r(3);
    REQUIRE_THROWS_AS(sample_along_rays(bundle, 1, false, r), ValidationError);
  }
}

TEST_CASE("point_color blends by softmax of -10 O", "[render]") {
  MatX3 colors(2, 3);
  colors << 1, 0, 0,  // red
      0, 0, 1;        // blue
  const std::vector<char> active = {1, 1};

  Vec one_hot(2);
  one_hot << 0.0, 5.0;
  const Vec3 c1 = point_color(one_hot, colors, active);
  REQUIRE((c1 - Vec3(1, 0, 0)).cwiseAbs().maxCoeff() < 1e-4);

  MatX3 bw(2, 3);
  bw << 0, 0, 0, 1, 1, 1;
  Vec equal(2);
  equal << 0.3, 0.3;
  const Vec3 c2 = point_color(equal, bw, active);
  REQUIRE((c2 - Vec3(0.5, 0.5, 0.5)).cwiseAbs().maxCoeff() < 1e-12);

  Vec third(2);
  third << 0.0, 0.0693;
  const Vec3 c3 = point_color(third, colors, active);
  REQUIRE(c3[0] == Approx(2.0 / 3.0).margin(1e-4));
  REQUIRE(c3[2] == Approx(1.0 / 3.0).margin(1e-4));

  SECTION("inactive convexes are ignored") {
    Vec row(2);
    row << 0.0, 9.0;
    const Vec3 c = point_color(row, colors, {0, 1});
    REQUIRE((c - Vec3(0, 0, 1)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("accumulate follows front-to-back compositing", "[render]") {
  MatX3 colors(2, 3);
  colors << 1, 0, 0, 0, 0, 1;

  Vec opaque(2);
  opaque << 1.0, 0.7;
  Vec3 c;
  double m;
  accumulate(opaque, colors, c, m);
  REQUIRE((c - Vec3(1, 0, 0)).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(m == Approx(1.0));

  Vec zero = Vec::Zero(2);
  accumulate(zero, colors, c, m);
  REQUIRE(c.norm() == 0.0);
  REQUIRE(m == 0.0);

  Vec half(2);
  half << 0.5, 0.5;
  accumulate(half, colors, c, m);
  REQUIRE((c - Vec3(0.5, 0, 0.25)).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(m == Approx(0.75));

  SECTION("alphas outside [0,1] rejected") {
    Vec bad(2);
    bad << 0.5, 1.5;
    REQUIRE_THROWS_AS(accumulate(bad, colors, c, m), ValidationError);
  }
}

TEST_CASE("mask equals 1 - prod(1 - alpha)", "[render][property]") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const Index R = 1 + Index(rng.uniform_index(64));
    Vec alphas(R);
    for (Index i = 0; i < R; ++i) alphas[i] = rng.uniform();
    MatX3 colors = MatX3::Zero(R, 3);
    Vec3 c;
    double m;
    accumulate(alphas, colors, c, m);
    const double prod = (1.0 - alphas.array()).prod();
    REQUIRE(m == Approx(1.0 - prod).margin(1e-12));
    REQUIRE(m <= 1.0 + 1e-12);
  }
}

TEST_CASE("opacity_for_phase dispatch", "[render]") {
  Vec a_star(2), a_plus(2);
  a_star << 0.0, 0.23;
  a_plus << 0.3, 0.9;
  const Vec p1 = opacity_for_phase(Phase::One, a_star, a_plus);
  REQUIRE(p1 == a_plus);
  const Vec p2 = opacity_for_phase(Phase::Two, a_star, a_plus);
  REQUIRE(p2[0] == Approx(1.0));
  const Vec p3 = opacity_for_phase(Phase::Three, a_star, a_plus);
  REQUIRE(p3[1] == Approx(0.10025884372280375).epsilon(1e-12));
}

TEST_CASE("render_view of an empty bank is black", "[render]") {
  PrimitiveBank bank;
  bank.params = Mat::Zero(4, 7);
  bank.selection = Mat::Zero(4, 2);
  bank.weights = Vec::Ones(2);
  MatX3 colors = MatX3::Ones(2, 3);
  const RenderedView rv = render_view(bank, colors, test_camera(), 16);
  REQUIRE(rv.mask.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(rv.image.r.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("render_view shows a crisp analytic sphere", "[render]") {
  // Sharply scaled unit-ball quadric of radius 0.6 at the origin.
  PrimitiveBank bank;
  bank.params.resize(1, 7);
  bank.params << 20, 20, 20, 0, 0, 0, -20 * 0.36;
  bank.selection = Mat::Ones(1, 1);
  bank.weights = Vec::Ones(1);
  MatX3 colors(1, 3);
  colors << 0.8, 0.2, 0.1;

  const Camera cam = test_camera();
  const RenderedView rv = render_view(bank, colors, cam, 96);

  // Center pixel: inside silhouette, saturated mask, the convex's color.
  REQUIRE(rv.mask(63, 63) > 0.99);
  REQUIRE(rv.image.pixel(63, 63)[0] == Approx(0.8 * rv.mask(63, 63)).margin(1e-3));
  // Corner pixel: far off silhouette.
  REQUIRE(rv.mask(0, 0) < 0.01);

  // Perspective silhouette of a sphere: radius f*r/sqrt(d^2 - r^2) pixels.
  const double expected_px = 128.0 * 0.6 / std::sqrt(2.2 * 2.2 - 0.36);
  Index lit = (rv.mask.array() > 0.5).count();
  const double disk = 3.14159265358979 * expected_px * expected_px;
  REQUIRE(double(lit) == Approx(disk).epsilon(0.05));
}
