/*
 * SPDX-FileCopyrightText: Copyright (c) 2026 The usqa3d Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "usqa/error.hpp"
#include "usqa/phantom.hpp"
#include "usqa/transforms.hpp"

using namespace usqa;
using usqa::testing::deg;

namespace {

constexpr double kPi = std::numbers::pi;

double pose_gap(const RigidTransform& a, const RigidTransform& b) {
  const RigidTransform d = compose(invert(a), b);
  return std::max(d.angle(), d.translation().norm());
}

double test_signal(double x) { return std::sin(2.0 * kPi * x / 61.0) + 0.5 * std::sin(2.0 * kPi * x / 23.0 + 1.0); }

// Independent lag search: Pearson correlation of every integer lag over the
// common overlap, then a three-point parabola through the maximum.
double brute_force_lag(const std::vector<double>& a, const std::vector<double>& b, int window) {
  const int n = static_cast<int>(a.size());
  std::vector<double> corr;
  for (int lag = -window; lag <= window; ++lag) {
    std::vector<double> xa, xb;
    for (int k = 0; k < n; ++k) {
      if (k + lag >= 0 && k + lag < n) {
        xa.push_back(a[k]);
        xb.push_back(b[k + lag]);
      }
    }
    const double ma = std::accumulate(xa.begin(), xa.end(), 0.0) / xa.size();
    const double mb = std::accumulate(xb.begin(), xb.end(), 0.0) / xb.size();
    double c = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < xa.size(); ++i) {
      c += (xa[i] - ma) * (xb[i] - mb);
      va += (xa[i] - ma) * (xa[i] - ma);
      vb += (xb[i] - mb) * (xb[i] - mb);
    }
    corr.push_back(c / std::sqrt(va * vb));
  }
  const int best = static_cast<int>(std::max_element(corr.begin(), corr.end()) - corr.begin());
  const double y0 = corr[best - 1], y1 = corr[best], y2 = corr[best + 1];
  return best - window + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2);
}

}  // namespace

TEST_SUITE("transforms") {
  TEST_CASE("compose identity and inverse") {
    std::mt19937_64 rng(11);
    const RigidTransform t = usqa::testing::random_rigid(rng);
    CHECK(pose_gap(compose(RigidTransform::identity(), t), t) < 1e-12);
    const RigidTransform i = compose(t, invert(t));
    CHECK(i.angle() < 1e-9);
    CHECK(i.translation().norm() < 1e-9);
  }

  TEST_CASE("two quarter turns make a half turn") {
    const RigidTransform q = RigidTransform::from_axis_angle(Vec3::UnitZ(), kPi / 2.0);
    const RigidTransform h = compose(q, q);
    CHECK(h.angle() == doctest::Approx(kPi).epsilon(1e-12));
    CHECK((h.apply(Vec3(1, 0, 0)) - Vec3(-1, 0, 0)).norm() < 1e-12);
  }

  TEST_CASE("compose applies the right operand first") {
    const RigidTransform r = RigidTransform::from_axis_angle(Vec3::UnitZ(), kPi / 2.0);
    const RigidTransform t = RigidTransform::translation_only(Vec3(1, 0, 0));
    CHECK((compose(r, t).apply(Vec3::Zero()) - Vec3(0, 1, 0)).norm() < 1e-12);
    CHECK((compose(t, r).apply(Vec3::Zero()) - Vec3(1, 0, 0)).norm() < 1e-12);
  }

  TEST_CASE("property: associativity, involution, unit quaternions") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 500; ++trial) {
      const RigidTransform a = usqa::testing::random_rigid(rng);
      const RigidTransform b = usqa::testing::random_rigid(rng);
      const RigidTransform c = usqa::testing::random_rigid(rng);
      CHECK(pose_gap(compose(compose(a, b), c), compose(a, compose(b, c))) < 1e-9);
      CHECK(pose_gap(invert(invert(a)), a) < 1e-9);
      CHECK(std::abs(compose(a, b).rotation().norm() - 1.0) < 1e-9);
    }
  }

  TEST_CASE("non-finite translation rejected") {
    CHECK_THROWS_AS(RigidTransform(Eigen::Quaterniond::Identity(), Vec3(NAN, 0, 0)), Error);
  }

  TEST_CASE("pose stream rejects non-increasing timestamps") {
    PoseStream s;
    s.push_back({0.0, {}});
    CHECK_THROWS_AS(s.push_back({0.0, {}}), Error);
    CHECK_THROWS_AS(s.push_back({-1.0, {}}), Error);
  }

  TEST_CASE("interpolation is exact at samples") {
    std::mt19937_64 rng(13);
    PoseStream s;
    for (int i = 0; i < 10; ++i) s.push_back({0.1 * i, usqa::testing::random_rigid(rng)});
    for (int i = 0; i < 10; ++i) {
      const RigidTransform p = interpolate_pose(s, s[i].timestamp);
      CHECK(p.translation() == s[i].pose.translation());
      CHECK(p.rotation().coeffs() == s[i].pose.rotation().coeffs());
    }
  }

  TEST_CASE("interpolation midpoint of translations") {
    PoseStream s({{0.0, RigidTransform::identity()}, {1.0, RigidTransform::translation_only(Vec3(10, 0, 0))}});
    CHECK((interpolate_pose(s, 0.5).translation() - Vec3(5, 0, 0)).norm() < 1e-12);
  }

  TEST_CASE("interpolation midpoint of a quarter turn matches closed form") {
    PoseStream s({{0.0, RigidTransform::identity()},
                  {2.0, RigidTransform::from_axis_angle(Vec3::UnitZ(), kPi / 2.0)}});
    const Eigen::Quaterniond q = interpolate_pose(s, 1.0).rotation();
    // cos and sin of 22.5 degrees, the half angle of a 45 degree turn.
    const Eigen::Quaterniond expected(0.92387953251128674, 0.0, 0.0, 0.38268343236508978);
    CHECK(std::abs(std::abs(q.dot(expected)) - 1.0) < 1e-14);
    CHECK(std::abs(q.w() - expected.w()) < 1e-14);
    CHECK(std::abs(q.z() - expected.z()) < 1e-14);
  }

  TEST_CASE("property: interpolated angle from the first sample is monotone") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 50; ++trial) {
      const RigidTransform a = usqa::testing::random_rigid(rng);
      const RigidTransform b = usqa::testing::random_rigid(rng);
      PoseStream s({{0.0, a}, {1.0, b}});
      double prev = 0.0;
      for (int k = 1; k <= 100; ++k) {
        const double ang = compose(invert(a), interpolate_pose(s, k / 100.0)).angle();
        CHECK(ang >= prev - 1e-12);
        prev = ang;
      }
    }
  }

  TEST_CASE("interpolation errors") {
    PoseStream one(std::vector<TimedPose>{{0.0, {}}});
    CHECK_THROWS_AS(interpolate_pose(PoseStream{}, 0.0), Error);
    CHECK_THROWS_AS(interpolate_pose(one, 0.0), Error);
    PoseStream two(std::vector<TimedPose>{{0.0, {}}, {1.0, {}}});
    try {
      interpolate_pose(two, 1.5);
      FAIL("expected out-of-range");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kOutOfRange);
    }
  }

  TEST_CASE("pose CSV round trip") {
    std::mt19937_64 rng(15);
    PoseStream s;
    for (int i = 0; i < 20; ++i) s.push_back({0.05 * i + 0.001, usqa::testing::random_rigid(rng)});
    std::stringstream ss;
    write_pose_csv(s, ss);
    const std::string text = ss.str();
    CHECK(text.rfind("timestamp_s,qx,qy,qz,qw,tx_mm,ty_mm,tz_mm\n", 0) == 0);
    const PoseStream r = read_pose_csv(ss);
    REQUIRE(r.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      CHECK(r[i].timestamp == s[i].timestamp);
      CHECK(r[i].pose.translation() == s[i].pose.translation());
      CHECK(std::abs(std::abs(r[i].pose.rotation().dot(s[i].pose.rotation())) - 1.0) < 1e-15);
    }
  }

  TEST_CASE("latency of identical signals is zero") {
    SampledSignal a{100.0, 0.0, {}};
    for (int k = 0; k < 1000; ++k) a.values.push_back(test_signal(k));
    CHECK(std::abs(estimate_latency(a, a, 1.0)) < 1e-12);
  }

  TEST_CASE("latency of a 90.2 ms delayed sine at 1 kHz") {
    SampledSignal a{1000.0, 0.0, {}};
    SampledSignal b{1000.0, 0.0, {}};
    for (int k = 0; k < 10000; ++k) {
      const double t = k / 1000.0;
      a.values.push_back(std::sin(2.0 * kPi * 0.7 * t));
      b.values.push_back(std::sin(2.0 * kPi * 0.7 * (t - 0.0902)));
    }
    CHECK(std::abs(estimate_latency(a, b, 0.5) - 0.0902) <= 0.0005);
  }

  TEST_CASE("latency of 7.3 samples matches brute-force oracle") {
    SampledSignal a{100.0, 0.0, {}};
    SampledSignal b{100.0, 0.0, {}};
    for (int k = 0; k < 800; ++k) {
      a.values.push_back(test_signal(k));
      b.values.push_back(test_signal(k - 7.3));
    }
    const double samples = estimate_latency(a, b, 0.2) * 100.0;
    CHECK(std::abs(samples - 7.3) <= 0.1);
    CHECK(std::abs(samples - brute_force_lag(a.values, b.values, 20)) < 1e-9);
  }

  TEST_CASE("property: random delays recovered within half a sample") {
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> u(-15.0, 15.0);
    for (int trial = 0; trial < 40; ++trial) {
      const double d = u(rng);
      SampledSignal a{50.0, 0.0, {}};
      SampledSignal b{50.0, 0.0, {}};
      for (int k = 0; k < 600; ++k) {
        a.values.push_back(test_signal(k));
        b.values.push_back(test_signal(k - d));
      }
      CHECK(std::abs(estimate_latency(a, b, 0.4) * 50.0 - d) <= 0.5);
    }
  }

  TEST_CASE("latency with different sample grids") {
    SampledSignal a{100.0, 0.0, {}};
    SampledSignal b{60.0, 0.013, {}};
    for (int k = 0; k < 1000; ++k) a.values.push_back(test_signal(k));
    for (int k = 0; k < 600; ++k) b.values.push_back(test_signal((0.013 + k / 60.0) * 100.0 - 4.0));
    CHECK(std::abs(estimate_latency(a, b, 0.2) - 0.04) <= 0.005);
  }

  TEST_CASE("latency errors") {
    SampledSignal flat{100.0, 0.0, std::vector<double>(500, 3.0)};
    SampledSignal ok{100.0, 0.0, {}};
    for (int k = 0; k < 500; ++k) ok.values.push_back(test_signal(k));
    try {
      estimate_latency(ok, flat, 0.5);
      FAIL("expected degenerate signal");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kDegenerateSignal);
    }
    CHECK_THROWS_AS(estimate_latency(ok, ok, 3.0), Error);
  }

  TEST_CASE("fiducial registration of identical sets") {
    std::mt19937_64 rng(17);
    PointSet p;
    for (int i = 0; i < 8; ++i) p.push_back(usqa::testing::random_vec(rng, -50, 50));
    const auto r = fiducial_register(p, p);
    CHECK(r.fre_rms < 1e-12);
    CHECK(r.transform.angle() < 1e-9);
    CHECK(r.transform.translation().norm() < 1e-9);
  }

  TEST_CASE("property: fiducial registration is exact on noise-free sets") {
    std::mt19937_64 rng(18);
    for (int trial = 0; trial < 1000; ++trial) {
      const RigidTransform t = usqa::testing::random_rigid(rng, 100.0);
      PointSet moving;
      for (int i = 0; i < 8; ++i) moving.push_back(usqa::testing::random_vec(rng, -90, 90));
      const PointSet fixed = transform_points(t, moving);
      const auto r = fiducial_register(moving, fixed);
      CHECK(r.fre_rms < 1e-9);
      CHECK(pose_gap(r.transform, t) < 1e-9);
      CHECK(r.transform.rotation_matrix().determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("fiducial registration stays proper for mirrored sets") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 100; ++trial) {
      PointSet moving, fixed;
      for (int i = 0; i < 8; ++i) {
        const Vec3 p = usqa::testing::random_vec(rng, -20, 20);
        moving.push_back(p);
        fixed.push_back(Vec3(-p.x(), p.y(), p.z()));
      }
      const auto r = fiducial_register(moving, fixed);
      CHECK(r.transform.rotation_matrix().determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("fiducial registration noise: Monte-Carlo FRE") {
    std::mt19937_64 rng(20);
    std::normal_distribution<double> noise(0.0, 0.1);
    double sum = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const RigidTransform t = usqa::testing::random_rigid(rng);
      PointSet moving;
      for (int i = 0; i < 8; ++i) moving.push_back(usqa::testing::random_vec(rng, -50, 50));
      PointSet fixed = transform_points(t, moving);
      for (auto& p : fixed) p += Vec3(noise(rng), noise(rng), noise(rng));
      const double fre = fiducial_register(moving, fixed).fre_rms;
      CHECK(fre > 0.0);
      sum += fre;
    }
    const double mean = sum / 1000.0;
    CHECK(mean >= 0.05);
    CHECK(mean <= 0.2);
    // Residual degrees of freedom: E[FRE^2] = 3 sigma^2 (1 - 2 / N).
    CHECK(mean == doctest::Approx(std::sqrt(3.0 * 0.01 * (1.0 - 2.0 / 8.0))).epsilon(0.05));
  }

  TEST_CASE("fiducial registration errors") {
    const PointSet two = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
    const PointSet line = {Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2), Vec3(3, 3, 3)};
    try {
      fiducial_register(two, two);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kDegenerateConfiguration);
    }
    try {
      fiducial_register(line, line);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kDegenerateConfiguration);
    }
    CHECK_THROWS_AS(fiducial_register(two, line), Error);
  }

  TEST_CASE("ICP on already aligned samples") {
    const TriangleMesh mesh = ground_truth_mesh(TriPrism{23.51, 36.98, RigidTransform::identity()}, 0.5);
    const PointSet src = sample_surface(mesh, 1.0);
    const auto r = icp_register(src, mesh);
    CHECK(r.converged);
    CHECK(r.rms < 1e-6);
    CHECK(r.transform.angle() < 1e-6);
    CHECK(r.transform.translation().norm() < 1e-6);
  }

  TEST_CASE("ICP recovers a 5 degree, 2 mm perturbation") {
    const PhantomScene scene = default_scene();
    for (const auto& inc : scene.inclusions) {
      const TriangleMesh mesh = ground_truth_mesh(inc.shape, 0.5);
      const Vec3 c = shape_center(inc.shape);
      const RigidTransform perturb =
          compose(RigidTransform::translation_only(c + Vec3(2.0, 0.0, 0.0)),
                  compose(RigidTransform::from_axis_angle(Vec3(1, 1, 0).normalized(), deg(5.0)),
                          RigidTransform::translation_only(-c)));
      const PointSet src = transform_points(perturb, sample_surface(mesh, 1.0));
      const auto r = icp_register(src, mesh);
      CAPTURE(inc.label);
      CHECK(r.converged);
      CHECK(r.rms < 0.1);
      // The residual motion must be a symmetry of the shape: every surface
      // point stays on the surface.
      const RigidTransform residual = compose(r.transform, perturb);
      double worst = 0.0;
      for (const Vec3& v : mesh.vertices) worst = std::max(worst, std::abs(signed_distance(inc.shape, residual.apply(v))));
      CHECK(worst < 0.01);
      if (inc.label == "triprism") CHECK(pose_gap(r.transform, invert(perturb)) < 1e-3);
    }
  }

  TEST_CASE("ICP rejects empty source") {
    const PointSet empty;
    const PointSet target = {Vec3(0, 0, 0)};
    CHECK_THROWS_AS(icp_register(empty, target), Error);
  }
}
