#include <dpa/adam.hpp>
#include <dpa/losses.hpp>
#include <dpa/rng.hpp>

#include <catch2/catch_amalgamated.hpp>

using Catch::Approx;
using namespace dpa;

TEST_CASE("loss_photo is the mean of squared errors", "[losses]") {
  MatX3 colors(2, 3);
  colors << 0.2, 0.4, 0.6, 0.1, 0.1, 0.1;
  Vec masks(2);
  masks << 1.0, 0.0;

  REQUIRE(loss_photo(colors, masks, colors, masks, true) == 0.0);

  SECTION("hand-computed mask term") {
    Vec pred = masks;
    pred[0] = 0.5;  // errors (0.5, 0), B = 2
    REQUIRE(loss_photo(colors, pred, colors, masks, true) == Approx(0.125));
    REQUIRE(loss_photo(colors, pred, colors, masks, false) == Approx(0.125));
  }

  SECTION("mask-only mode ignores colors entirely") {
    MatX3 junk = MatX3::Ones(2, 3);
    REQUIRE(loss_photo(junk, masks, colors, masks, false) == 0.0);
  }

  SECTION("gradients match 2/B scaling") {
    Vec pred = masks;
    pred[0] = 0.5;
    MatX3 dc;
    Vec dm;
    loss_photo_backward(colors, pred, colors, masks, true, dc, dm);
    REQUIRE(dm[0] == Approx(2.0 * (0.5 - 1.0) / 2.0));
    REQUIRE(dm[1] == 0.0);
    REQUIRE(dc.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("loss_T penalizes out-of-range selection entries", "[losses]") {
  Mat T(2, 2);
  T << 0.0, 0.5, 1.0, 0.25;
  REQUIRE(loss_T(T) == 0.0);

  T(0, 0) = 1.25;
  REQUIRE(loss_T(T) == Approx(0.25));

  Mat T2(1, 2);
  T2 << -0.1, 1.1;
  REQUIRE(loss_T(T2) == Approx(0.2));

  SECTION("gradient directions") {
    const Mat g = loss_T_backward(T2);
    REQUIRE(g(0, 0) == -1.0);
    REQUIRE(g(0, 1) == 1.0);
    Mat inside(1, 3);
    inside << 0.0, 0.5, 1.0;  // boundary entries get zero slope
    REQUIRE(loss_T_backward(inside).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("loss_w is L1 distance from ones", "[losses]") {
  REQUIRE(loss_w(Vec::Ones(5)) == 0.0);
  Vec w(2);
  w << 0.8, 1.2;
  REQUIRE(loss_w(w) == Approx(0.4));
  Vec w2(3);
  w2 << 1, 1, 0;
  REQUIRE(loss_w(w2) == Approx(1.0));

  const Vec g = loss_w_backward(w);
  REQUIRE(g[0] == -1.0);
  REQUIRE(g[1] == 1.0);
  REQUIRE(loss_w_backward(Vec::Ones(3)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss_T and loss_w vanish exactly on the constraint set", "[losses][property]") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Mat T(4, 4);
    for (Index i = 0; i < 16; ++i) T(i / 4, i % 4) = rng.uniform();
    REQUIRE(loss_T(T) == 0.0);
    T(1, 2) = 1.0 + rng.uniform(0.01, 2.0);
    REQUIRE(loss_T(T) > 0.0);

    Vec w = Vec::Ones(6);
    REQUIRE(loss_w(w) == 0.0);
    w[3] += rng.uniform(0.01, 1.0) * (trial % 2 ? 1.0 : -1.0);
    REQUIRE(loss_w(w) > 0.0);
  }
}

TEST_CASE("loss_overlap floors h at 1.9", "[losses]") {
  Vec h1 = Vec::Ones(10);  // everything in exactly one convex
  REQUIRE(loss_overlap(h1) == Approx(1.9));
  REQUIRE(loss_overlap_backward(h1).cwiseAbs().maxCoeff() == 0.0);

  Vec h2(1);
  h2 << 2.0;
  REQUIRE(loss_overlap(h2) == Approx(2.0));

  Vec h3(2);
  h3 << 1.0, 2.5;
  REQUIRE(loss_overlap(h3) == Approx(2.2));
  const Vec g = loss_overlap_backward(h3);
  REQUIRE(g[0] == 0.0);
  REQUIRE(g[1] == Approx(0.5));

  SECTION("empty inside set warns and returns zero") {
    std::vector<std::string> warnings;
    WarningSink::instance().attach(&warnings);
    REQUIRE(loss_overlap(Vec()) == 0.0);
    WarningSink::instance().detach();
    REQUIRE(warnings.size() == 1);
  }
}

TEST_CASE("adam_step matches first-step algebra", "[optim]") {
  AdamParams p;
  Mat var = Mat::Zero(1, 1);
  Mat grad = Mat::Ones(1, 1);
  AdamState<Mat> st;
  st.reset_like(var);
  adam_step(var, grad, st, 1, p);
  REQUIRE(var(0, 0) == Approx(-1e-4).epsilon(1e-6));

  SECTION("zero gradient from fresh state leaves variables unchanged") {
    Mat v2 = Mat::Constant(2, 3, 0.7);
    AdamState<Mat> s2;
    s2.reset_like(v2);
    adam_step(v2, Mat(Mat::Zero(2, 3)), s2, 1, p);
    REQUIRE((v2.array() == 0.7).all());
  }

  SECTION("non-finite gradient rejected") {
    Mat bad = Mat::Ones(1, 1);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    Mat v3 = Mat::Zero(1, 1);
    AdamState<Mat> s3;
    s3.reset_like(v3);
    REQUIRE_THROWS_AS(adam_step(v3, bad, s3, 1, p), NumericalError);
  }

  SECTION("descends a quadratic") {
    Mat x = Mat::Constant(1, 1, 2.0);
    AdamState<Mat> s;
    s.reset_like(x);
    AdamParams fast;
    fast.lr = 0.05;
    for (long t = 1; t <= 400; ++t) {
      Mat g = 2.0 * x;  // d/dx x^2
      adam_step(x, g, s, t, fast);
    }
    REQUIRE(std::abs(x(0, 0)) < 0.05);
  }
}
