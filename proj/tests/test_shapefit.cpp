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
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "usqa/error.hpp"
#include "usqa/shapefit.hpp"

using namespace usqa;

namespace {

std::uniform_real_distribution<double> uni(double a, double b) { return std::uniform_real_distribution<double>(a, b); }

Eigen::Quaterniond random_rotation(std::mt19937_64& rng) { return testing::random_rigid(rng).rotation(); }

PointSet surface_points(const ShapeSpec& s, double edge = 1.5) { return ground_truth_mesh(s, edge).vertices; }

// Largest distance between the two surfaces, measured at vertices of each.
double surface_gap(const ShapeSpec& a, const ShapeSpec& b) {
  double worst = 0.0;
  for (const Vec3& p : surface_points(a, 2.0)) worst = std::max(worst, std::abs(signed_distance(b, p)));
  for (const Vec3& p : surface_points(b, 2.0)) worst = std::max(worst, std::abs(signed_distance(a, p)));
  return worst;
}

double vertex_set_gap(const TriPrism& a, const TriPrism& b) {
  const auto va = prism_vertices(a), vb = prism_vertices(b);
  double worst = 0.0;
  for (const Vec3& p : va) {
    double best = INFINITY;
    for (const Vec3& q : vb) best = std::min(best, (p - q).norm());
    worst = std::max(worst, best);
  }
  return worst;
}

void check_monotone(const FitResult& f) {
  for (std::size_t i = 1; i < f.cost_history.size(); ++i) CHECK(f.cost_history[i] <= f.cost_history[i - 1]);
}

}  // namespace

TEST_CASE("fit_sphere: exact, noisy, degenerate") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const Sphere truth{testing::random_vec(rng, -100, 100), uni(5, 20)(rng)};
    const FitResult f = fit_sphere(surface_points(truth));
    const auto& s = std::get<Sphere>(f.shape);
    CHECK((s.center - truth.center).norm() < 1e-6);
    CHECK(std::abs(s.radius - truth.radius) < 1e-6);
    CHECK(f.rms_residual < 1e-6);
    CHECK(f.converged);
    check_monotone(f);
  }

  const Sphere truth{Vec3(17, 0, -26), 11.57};
  const PointSet clean = surface_points(truth, 1.0);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 r(seed);
    PointSet noisy = clean;
    for (auto& p : noisy) p += Vec3(noise(r), noise(r), noise(r));
    const FitResult f = fit_sphere(noisy);
    CHECK(std::abs(std::get<Sphere>(f.shape).radius - truth.radius) < 0.1);
    check_monotone(f);
  }

  PointSet flat;
  for (int i = 0; i < 40; ++i) flat.push_back(Vec3(std::cos(i * 0.3) * 5, std::sin(i * 0.3) * 5, 2.0));
  try {
    fit_sphere(flat);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateConfiguration);
  }
  CHECK_THROWS_AS(fit_sphere(PointSet(5, Vec3::Zero())), Error);
}

TEST_CASE("fit_ellipsoid: exact recovery and sphere input") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 8; ++t) {
    const Vec3 axes(uni(15, 30)(rng), uni(9, 14)(rng), uni(5, 8.5)(rng));
    const Ellipsoid truth{testing::random_vec(rng, -100, 100), axes, random_rotation(rng)};
    const FitResult f = fit_ellipsoid(surface_points(truth));
    const auto& e = std::get<Ellipsoid>(f.shape);
    CHECK((e.semi_axes - axes).cwiseAbs().maxCoeff() < 1e-4);
    CHECK((e.center - truth.center).norm() < 1e-4);
    CHECK(surface_gap(e, truth) < 1e-4);
    check_monotone(f);
  }
  const Ellipsoid prolate{Vec3(59, 0, -26), Vec3(24.65, 12.33, 12.33), Eigen::Quaterniond::Identity()};
  const auto p = std::get<Ellipsoid>(fit_ellipsoid(surface_points(prolate)).shape);
  CHECK((p.semi_axes - prolate.semi_axes).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(p.semi_axes[0] >= p.semi_axes[1]);
  CHECK(p.semi_axes[1] >= p.semi_axes[2]);

  const auto s = std::get<Ellipsoid>(fit_ellipsoid(surface_points(Sphere{Vec3(1, 2, 3), 10.0})).shape);
  CHECK((s.semi_axes - Vec3::Constant(10.0)).cwiseAbs().maxCoeff() < 1e-4);

  PointSet line;
  for (int i = 0; i < 50; ++i) line.push_back(Vec3(i, 2 * i, 0));
  CHECK_THROWS_AS(fit_ellipsoid(line), Error);
}

TEST_CASE("fit_cylinder: exact recovery, order invariance, one cap") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 8; ++t) {
    const Cylinder truth{testing::random_vec(rng, -100, 100), testing::random_unit(rng), uni(5, 15)(rng),
                         uni(10, 50)(rng)};
    const FitResult f = fit_cylinder(surface_points(truth));
    const auto& c = std::get<Cylinder>(f.shape);
    CHECK(std::abs(c.radius - truth.radius) < 1e-4);
    CHECK(std::abs(c.height - truth.height) < 1e-4);
    CHECK((c.center - truth.center).norm() < 1e-4);
    CHECK(std::abs(std::abs(c.axis.dot(truth.axis)) - 1.0) < 1e-10);
    check_monotone(f);
  }
  const Cylinder truth{Vec3(110.5, 0, -26), Vec3::UnitX(), 11.96, 42.57};
  PointSet pts = surface_points(truth);
  const auto a = std::get<Cylinder>(fit_cylinder(pts).shape);
  std::shuffle(pts.begin(), pts.end(), rng);
  const auto b = std::get<Cylinder>(fit_cylinder(pts).shape);
  CHECK(std::abs(std::abs(a.axis.dot(b.axis)) - 1.0) < 1e-12);
  CHECK(std::abs(a.radius - b.radius) < 1e-9);

  PointSet cap;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) cap.push_back(Vec3(i, j, 5.0));
  try {
    fit_cylinder(cap);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegenerateConfiguration);
  }
}

TEST_CASE("fit_triprism: exact recovery and axial symmetry") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 8; ++t) {
    const TriPrism truth{uni(10, 30)(rng), uni(10, 45)(rng), testing::random_rigid(rng, 100.0)};
    const FitResult f = fit_triprism(surface_points(truth));
    const auto& p = std::get<TriPrism>(f.shape);
    CHECK(std::abs(p.edge_length - truth.edge_length) < 1e-4);
    CHECK(std::abs(p.height - truth.height) < 1e-4);
    CHECK(vertex_set_gap(p, truth) < 1e-4);
    check_monotone(f);
  }

  const TriPrism base{23.51, 36.98,
                      RigidTransform::from_matrix((Mat3() << Vec3::UnitY(), Vec3::UnitZ(), Vec3::UnitX()).finished(),
                                                  Vec3(156, 0, -26))};
  const auto p0 = std::get<TriPrism>(fit_triprism(surface_points(base)).shape);
  for (double deg : {17.0, 60.0, 120.0, 200.0}) {
    const Vec3 axis = base.pose.rotation_matrix().col(2);
    const RigidTransform spin = compose(
        RigidTransform::translation_only(base.pose.translation()),
        compose(RigidTransform(Eigen::Quaterniond(Eigen::AngleAxisd(testing::deg(deg), axis)), Vec3::Zero()),
                RigidTransform::translation_only(-base.pose.translation())));
    PointSet pts = surface_points(base);
    for (auto& q : pts) q = spin.apply(q);
    const auto p = std::get<TriPrism>(fit_triprism(pts).shape);
    CHECK(std::abs(p.edge_length - p0.edge_length) < 1e-6);
    const auto expected = std::get<TriPrism>(transform_shape(spin, p0));
    CHECK(vertex_set_gap(p, expected) < 1e-5);
  }
}

TEST_CASE("fits are equivariant under rigid motion") {
  std::mt19937_64 rng(5);
  const std::vector<ShapeSpec> shapes = {
      Sphere{Vec3(17, 0, -26), 11.57},
      Ellipsoid{Vec3(59, 0, -26), Vec3(24.65, 12.33, 9.0), Eigen::Quaterniond::Identity()},
      Cylinder{Vec3(110.5, 0, -26), Vec3::UnitX(), 11.96, 42.57},
      TriPrism{23.51, 36.98, RigidTransform::translation_only(Vec3(156, 0, -26))}};
  for (const ShapeSpec& s : shapes) {
    const PointSet pts = surface_points(s);
    const FitResult f0 = fit_like(s, pts);
    const RigidTransform m = testing::random_rigid(rng, 50.0);
    PointSet moved = pts;
    for (auto& p : moved) p = m.apply(p);
    const FitResult f1 = fit_like(s, moved);
    CHECK(surface_gap(f1.shape, transform_shape(m, f0.shape)) < 1e-6);
    CHECK(shape_tag(f1.shape) == shape_tag(s));
  }
}
