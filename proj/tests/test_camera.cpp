#include "mvdet/camera.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <random>

using namespace mvdet;

namespace {

Pose random_pose(std::mt19937_64& rng)
{
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Quaterniond q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
  Pose p;
  p.R = q.toRotationMatrix();
  p.t = Eigen::Vector3d(n(rng), n(rng), n(rng));
  return p;
}

CameraView test_view(const Pose& pose = {})
{
  CameraView v;
  v.intrinsics = {100.0, 100.0, 31.5, 23.5};
  v.width = 64;
  v.height = 48;
  v.pose = pose;
  return v;
}

} // namespace

TEST_SUITE("camera")
{
  TEST_CASE("project: spec examples")
  {
    CameraView v;
    v.intrinsics = {1.0, 1.0, 0.0, 0.0};
    v.width = 4;
    v.height = 4;
    Projection p = project({0, 0, 2}, v);
    CHECK(p.u == doctest::Approx(0.0));
    CHECK(p.v == doctest::Approx(0.0));
    CHECK(p.depth == doctest::Approx(2.0));
    CHECK(p.valid);

    v.intrinsics = {100.0, 100.0, 32.0, 24.0};
    v.width = 64;
    v.height = 48;
    p = project({0.5, 0, 2}, v);
    CHECK(p.u == doctest::Approx(57.0));
    CHECK(p.v == doctest::Approx(24.0));
    CHECK(p.depth == doctest::Approx(2.0));

    CHECK_FALSE(project({0, 0, -1}, v).valid);
    CHECK_FALSE(project({100, 0, 1}, v).valid);
    CHECK_THROWS_AS(project({0, 0, 1}, v, 0.5), std::invalid_argument);
  }

  TEST_CASE("scale_intrinsics: half-pixel convention")
  {
    const Intrinsics K{400.0, 380.0, 159.5, 119.5};
    const Intrinsics q = scale_intrinsics(K, 0.25);
    CHECK(q.fx == doctest::Approx(100.0));
    CHECK(q.fy == doctest::Approx(95.0));
    CHECK(q.cx == doctest::Approx(39.5));
    CHECK(q.cy == doctest::Approx(29.5));
    const Intrinsics id = scale_intrinsics(K, 1.0);
    CHECK(id.fx == K.fx);
    CHECK(id.cx == K.cx);
    const Intrinsics back = scale_intrinsics(q, 4.0);
    CHECK(std::abs(back.fx - K.fx) < 1e-12);
    CHECK(std::abs(back.cx - K.cx) < 1e-12);
    CHECK(std::abs(back.cy - K.cy) < 1e-12);
    CHECK_THROWS_AS(scale_intrinsics(K, 0.0), std::invalid_argument);
  }

  TEST_CASE("scale_intrinsics: composition law")
  {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> f(0.1, 4.0), c(0.0, 300.0);
    for (int i = 0; i < 200; ++i) {
      const Intrinsics K{f(rng) * 100, f(rng) * 100, c(rng), c(rng)};
      const double a = f(rng), b = f(rng);
      const Intrinsics one = scale_intrinsics(K, a * b);
      const Intrinsics two = scale_intrinsics(scale_intrinsics(K, a), b);
      CHECK(std::abs(one.fx - two.fx) <= 1e-12 * std::abs(one.fx));
      CHECK(std::abs(one.cx - two.cx) <= 1e-12 * std::max(1.0, std::abs(one.cx)));
      CHECK(std::abs(one.cy - two.cy) <= 1e-12 * std::max(1.0, std::abs(one.cy)));
    }
  }

  TEST_CASE("scaled_view maps pixel centers consistently")
  {
    const CameraView v = test_view();
    const CameraView q = scaled_view(v, 4.0);
    CHECK(q.width == 16);
    CHECK(q.height == 12);
    // The center of quarter-res cell (0, 0) is the center of the 4x4 block, (1.5, 1.5) at full res.
    const Eigen::Vector3d p((1.5 - 31.5) / 100 * 2, (1.5 - 23.5) / 100 * 2, 2);
    const Projection full = project(p, v);
    const Projection quarter = project(p, v, 4.0);
    CHECK(full.u == doctest::Approx(1.5));
    CHECK(quarter.u == doctest::Approx(0.0));
    CHECK(quarter.v == doctest::Approx(0.0));
    const Projection via_view = project(p, q);
    CHECK(via_view.u == doctest::Approx(quarter.u));
  }

  TEST_CASE("backproject_ray: central ray, origin, round trip")
  {
    CameraView v = test_view();
    const Ray central = backproject_ray(31.5, 23.5, v);
    CHECK((central.direction - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
    CHECK_THROWS_AS(backproject_ray(-1.0, 0.0, v), std::out_of_range);

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
      v.pose = random_pose(rng);
      const double scale = (i % 2) ? 4.0 : 1.0;
      const int cols = scaled_width(v, scale), rows = scaled_height(v, scale);
      const double u = -0.5 + u01(rng) * cols * 0.999, w = -0.5 + u01(rng) * rows * 0.999;
      const double depth = 0.2 + 4.8 * u01(rng);
      const Ray ray = backproject_ray(u, w, v, scale);
      CHECK((ray.origin - (-v.pose.R.transpose() * v.pose.t)).norm() < 1e-12);
      CHECK(std::abs(ray.direction.norm() - 1.0) < 1e-9);
      const double t = ray_distance(ray, v, depth);
      const Projection p = project(ray.origin + t * ray.direction, v, scale);
      CHECK(p.valid);
      CHECK(std::abs(p.u - u) < 1e-6);
      CHECK(std::abs(p.v - w) < 1e-6);
      CHECK(std::abs(p.depth - depth) < 1e-9);
    }
  }

  TEST_CASE("relative_pose: identities and composition oracle")
  {
    std::mt19937_64 rng(5);
    const Pose a = random_pose(rng), b = random_pose(rng);
    const Pose self = relative_pose(a, a);
    CHECK((self.R - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(self.t.norm() < 1e-12);
    const Pose from_id = relative_pose(Pose{}, b);
    CHECK((from_id.R - b.R).norm() < 1e-12);
    CHECK((from_id.t - b.t).norm() < 1e-12);
    for (int i = 0; i < 100; ++i) {
      const Pose pi = random_pose(rng), pj = random_pose(rng);
      const Pose rel = relative_pose(pi, pj);
      const Eigen::Vector3d x = Eigen::Vector3d::Random() * 3;
      CHECK((rel.apply(pi.apply(x)) - pj.apply(x)).norm() < 1e-9);
      CHECK(rel.is_rotation(1e-9));
    }
  }

  TEST_CASE("homography_warp: identity, disparity, direct projection")
  {
    const Intrinsics K{100.0, 100.0, 31.5, 23.5};
    for (double d : {0.5, 1.0, 3.0}) {
      const Warp w = homography_warp({10.0, 20.0}, d, K, K, Pose{}, 64, 48);
      CHECK(w.valid);
      CHECK(w.q.x() == doctest::Approx(10.0));
      CHECK(w.q.y() == doctest::Approx(20.0));
    }
    Pose shift;
    shift.t = Eigen::Vector3d(-0.2, 0, 0);
    const Warp w = homography_warp({40.0, 20.0}, 2.0, K, K, shift, 64, 48);
    CHECK(w.q.x() == doctest::Approx(30.0));
    CHECK(w.q.y() == doctest::Approx(20.0));
    CHECK_THROWS_AS(homography_warp({0, 0}, 0.0, K, K, shift, 64, 48), std::invalid_argument);

    Pose behind;
    behind.R = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitY()).toRotationMatrix();
    CHECK_FALSE(homography_warp({31.5, 23.5}, 2.0, K, K, behind, 64, 48).valid);
  }

  TEST_CASE("validate rejects bad views")
  {
    CameraView v = test_view();
    CHECK_NOTHROW(v.validate());
    v.width = 62;
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
    v = test_view();
    v.intrinsics.fx = -1;
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
    v = test_view();
    v.pose.R(0, 0) = 2.0;
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  }
}
