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

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "usqa/error.hpp"
#include "usqa/phantom.hpp"

using namespace usqa;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<ShapeSpec> sample_shapes() {
  const PhantomScene scene = default_scene();
  std::vector<ShapeSpec> out;
  for (const auto& inc : scene.inclusions) out.push_back(inc.shape);
  std::mt19937_64 rng(5);
  const RigidTransform t = usqa::testing::random_rigid(rng, 10.0);
  for (const auto& inc : scene.inclusions) out.push_back(transform_shape(t, inc.shape));
  return out;
}

Vec3 gradient(const ShapeSpec& s, const Vec3& p, double h) {
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 a = p, b = p;
    a[k] += h;
    b[k] -= h;
    g[k] = (signed_distance(s, a) - signed_distance(s, b)) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_SUITE("phantom") {
  TEST_CASE("sphere distances") {
    const ShapeSpec s = Sphere{Vec3(1, 2, 3), 11.57};
    CHECK(signed_distance(s, Vec3(1, 2, 3)) == doctest::Approx(-11.57));
    CHECK(std::abs(signed_distance(s, Vec3(1, 2, 3) + 11.57 * Vec3(1, 2, 2) / 3.0)) < 1e-9);
  }

  TEST_CASE("cylinder cap distance") {
    const ShapeSpec c = Cylinder{Vec3(0, 0, 0), Vec3(1, 0, 0), 11.96, 42.57};
    CHECK(signed_distance(c, Vec3(42.57 / 2.0 + 1.0, 0, 0)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(signed_distance(c, Vec3(0, 0, 13.96)) == doctest::Approx(2.0).epsilon(1e-12));
    // Beyond the rim: Euclidean distance to the circular edge.
    CHECK(signed_distance(c, Vec3(42.57 / 2.0 + 3.0, 11.96 + 4.0, 0)) == doctest::Approx(5.0).epsilon(1e-12));
  }

  TEST_CASE("prism distances") {
    const TriPrism p{23.51, 36.98, RigidTransform::identity()};
    const double inradius = 23.51 / (2.0 * std::sqrt(3.0));
    CHECK(signed_distance(p, Vec3::Zero()) == doctest::Approx(-inradius));
    CHECK(signed_distance(p, Vec3(0, -inradius - 2.0, 0)) == doctest::Approx(2.0));
    CHECK(signed_distance(p, Vec3(0, 0, 36.98 / 2.0 + 0.5)) == doctest::Approx(0.5));
    // Outside the apex: distance to the vertex.
    CHECK(signed_distance(p, Vec3(0, 23.51 / std::sqrt(3.0) + 1.5, 0)) == doctest::Approx(1.5));
  }

  TEST_CASE("ellipsoid foot point satisfies optimality") {
    std::mt19937_64 rng(7);
    const Vec3 axes(24.65, 12.33, 9.0);
    std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
    for (int trial = 0; trial < 300; ++trial) {
      const Vec3 q = usqa::testing::random_vec(rng, -40.0, 40.0);
      const Vec3 x = ellipsoid_closest_point(axes, q);
      CHECK(std::abs(x.cwiseQuotient(axes).squaredNorm() - 1.0) < 1e-12);
      const Vec3 n = x.cwiseQuotient(axes.cwiseProduct(axes)).normalized();
      const Vec3 r = q - x;
      CHECK((r - r.dot(n) * n).norm() < 1e-8 * std::max(1.0, r.norm()));
      // No sampled surface point is closer.
      const double d = r.norm();
      for (int k = 0; k < 200; ++k) {
        const double th = std::acos(1.0 - 2.0 * (k + 0.5) / 200.0);
        const double ph = u(rng);
        const Vec3 s(axes.x() * std::sin(th) * std::cos(ph), axes.y() * std::sin(th) * std::sin(ph),
                     axes.z() * std::cos(th));
        CHECK(d <= (q - s).norm() + 1e-9);
      }
    }
  }

  TEST_CASE("ellipsoid foot point on symmetry planes") {
    const Vec3 axes(24.65, 12.33, 12.33);
    CHECK((ellipsoid_closest_point(axes, Vec3::Zero()).norm()) == doctest::Approx(12.33));
    CHECK((ellipsoid_closest_point(axes, Vec3(30, 0, 0)) - Vec3(24.65, 0, 0)).norm() < 1e-12);
    const Vec3 q(3.0, 0.0, 0.0);
    const Vec3 x = ellipsoid_closest_point(axes, q);
    CHECK(std::abs(x.cwiseQuotient(axes).squaredNorm() - 1.0) < 1e-12);
    CHECK((q - x).norm() <= 12.33 + 1e-12);
  }

  TEST_CASE("contains agrees with the distance sign") {
    std::mt19937_64 rng(8);
    for (const auto& s : sample_shapes()) {
      const Aabb box = bounds(s).padded(2.0);
      std::uniform_real_distribution<double> ux(box.min.x(), box.max.x()), uy(box.min.y(), box.max.y()),
          uz(box.min.z(), box.max.z());
      for (int i = 0; i < 4000; ++i) {
        const Vec3 p(ux(rng), uy(rng), uz(rng));
        const double d = signed_distance(s, p);
        if (std::abs(d) < 1e-9) continue;
        CHECK(contains(s, p) == (d < 0.0));
      }
    }
  }

  TEST_CASE("property: distance gradient has unit norm") {
    std::mt19937_64 rng(9);
    for (const auto& s : sample_shapes()) {
      const Aabb box = bounds(s).padded(5.0);
      std::uniform_real_distribution<double> ux(box.min.x(), box.max.x()), uy(box.min.y(), box.max.y()),
          uz(box.min.z(), box.max.z());
      const bool smooth_inside = std::holds_alternative<Sphere>(s) || std::holds_alternative<Ellipsoid>(s);
      int checked = 0;
      while (checked < 500) {
        const Vec3 p(ux(rng), uy(rng), uz(rng));
        const double d = signed_distance(s, p);
        const bool outside = d > 0.05;
        const bool near_inside = smooth_inside && d < -0.05 && d > -1.0;
        if (!outside && !near_inside) continue;
        CHECK(std::abs(gradient(s, p, 1e-5).norm() - 1.0) < 1e-3);
        ++checked;
      }
    }
  }

  TEST_CASE("bounds enclose the shape") {
    std::mt19937_64 rng(10);
    for (const auto& s : sample_shapes()) {
      const Aabb box = bounds(s);
      for (const Vec3& v : ground_truth_mesh(s, 1.0).vertices) CHECK(box.padded(1e-9).contains(v));
      // Tight: each face of the box is touched to within the mesh resolution.
      const Aabb mb = usqa::bounds(ground_truth_mesh(s, 0.25));
      CHECK((mb.min - box.min).cwiseAbs().maxCoeff() < 0.05);
      CHECK((mb.max - box.max).cwiseAbs().maxCoeff() < 0.05);
    }
  }

  TEST_CASE("ground-truth meshes are watertight and on the surface") {
    for (const auto& s : sample_shapes()) {
      const TriangleMesh m = ground_truth_mesh(s, 0.5);
      CAPTURE(shape_tag(s));
      CHECK(is_watertight(m));
      double worst = 0.0;
      for (const Vec3& v : m.vertices) worst = std::max(worst, std::abs(signed_distance(s, v)));
      CHECK(worst < 1e-6);
      CHECK(enclosed_volume(m) > 0.0);
      const double v = analytic_descriptors(s).volume;
      CHECK(std::abs(enclosed_volume(m) - v) / v < 0.005);
      const double a = analytic_descriptors(s).surface_area;
      CHECK(std::abs(surface_area(m) - a) / a < 0.005);
    }
  }

  TEST_CASE("mesh signed distance agrees in sign with the analytic field") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    for (const auto& s : sample_shapes()) {
      CAPTURE(shape_tag(s));
      // Leave non-zero garbage on the heap for the mesh index to pick up.
      { std::vector<double> junk(1 << 16, -1e300); }
      const MeshDistance md(ground_truth_mesh(s, 0.5));
      const Aabb b = bounds(s);
      std::uniform_real_distribution<double> ux(b.min.x() - 1, b.max.x() + 1), uy(b.min.y() - 1, b.max.y() + 1),
          uz(b.min.z() - 1, b.max.z() + 1);
      int wrong = 0, tested = 0;
      while (tested < 20000) {
        const Vec3 p(ux(rng), uy(rng), uz(rng));
        const double want = signed_distance(s, p);
        // Skip points within the mesh's chordal error of the surface.
        if (std::abs(want) < 0.05 || std::abs(want) > 1.0) continue;
        ++tested;
        wrong += (md.signed_distance(p) > 0.0) != (want > 0.0);
      }
      CHECK(wrong == 0);
    }
  }

  TEST_CASE("mesh volume of the reference shapes") {
    const double r = 11.57;
    const double sv = 4.0 / 3.0 * kPi * r * r * r;
    CHECK(sv == doctest::Approx(6487.0).epsilon(1e-3));
    CHECK(std::abs(enclosed_volume(ground_truth_mesh(Sphere{Vec3::Zero(), r}, 0.5)) - sv) / sv < 0.005);
    const double cv = kPi * 11.96 * 11.96 * 42.57;
    CHECK(std::abs(enclosed_volume(ground_truth_mesh(Cylinder{Vec3::Zero(), Vec3::UnitZ(), 11.96, 42.57}, 0.5)) - cv) /
              cv <
          0.005);
    const double pv = std::sqrt(3.0) / 4.0 * 23.51 * 23.51 * 36.98;
    CHECK(std::abs(enclosed_volume(ground_truth_mesh(TriPrism{23.51, 36.98, {}}, 0.5)) - pv) / pv < 0.005);
  }

  TEST_CASE("property: mesh volume converges as edges shrink") {
    for (const auto& s : sample_shapes()) {
      const double v = analytic_descriptors(s).volume;
      double prev = std::numeric_limits<double>::infinity();
      for (double e : {2.0, 1.0, 0.5}) {
        const double err = std::abs(enclosed_volume(ground_truth_mesh(s, e)) - v) / v;
        CHECK(err <= prev + 1e-12);
        prev = err;
      }
      CHECK(prev < 0.005);
    }
  }

  TEST_CASE("analytic descriptors") {
    const auto sphere = analytic_descriptors(Sphere{Vec3::Zero(), 11.5});
    CHECK(sphere.roundness == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sphere.volume == doctest::Approx(6371.0).epsilon(1e-4));
    const auto ell = analytic_descriptors(Ellipsoid{Vec3::Zero(), Vec3(24.65, 12.33, 12.33), Eigen::Quaterniond::Identity()});
    CHECK(ell.elongation == doctest::Approx(24.65 / 12.33).epsilon(1e-12));
    CHECK(ell.elongation == doctest::Approx(2.0).epsilon(0.01));
    CHECK(ell.flatness == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(ell.principal_axes[0].dot(Vec3::UnitX())) == doctest::Approx(1.0));
    CHECK(ell.roundness < 1.0);
    for (const auto& s : sample_shapes()) {
      const auto d = analytic_descriptors(s);
      CHECK(d.roundness > 0.0);
      CHECK(d.roundness <= 1.0 + 1e-12);
      CHECK(d.elongation >= 1.0);
      CHECK(d.flatness >= 1.0);
      CHECK((d.centroid - shape_center(s)).norm() < 1e-12);
    }
  }

  TEST_CASE("ellipsoid area of a sphere matches closed form") {
    const auto d = analytic_descriptors(Ellipsoid{Vec3::Zero(), Vec3(7, 7, 7), Eigen::Quaterniond::Identity()});
    CHECK(d.surface_area == doctest::Approx(4.0 * kPi * 49.0).epsilon(1e-12));
  }

  TEST_CASE("analytic Feret diameter matches mesh vertices") {
    for (const auto& s : sample_shapes()) {
      const TriangleMesh m = ground_truth_mesh(s, 1.0);
      double best = 0.0;
      for (std::size_t i = 0; i < m.vertices.size(); ++i) {
        for (std::size_t j = i + 1; j < m.vertices.size(); ++j) {
          best = std::max(best, (m.vertices[i] - m.vertices[j]).norm());
        }
      }
      const double f = analytic_descriptors(s).feret_max;
      CHECK(best <= f + 1e-9);
      CHECK(best >= 0.995 * f);
    }
  }

  TEST_CASE("rigid transform of a shape moves its distance field") {
    std::mt19937_64 rng(11);
    for (const auto& s : sample_shapes()) {
      const RigidTransform t = usqa::testing::random_rigid(rng);
      const ShapeSpec moved = transform_shape(t, s);
      for (int i = 0; i < 100; ++i) {
        const Vec3 p = shape_center(s) + usqa::testing::random_vec(rng, -30, 30);
        CHECK(signed_distance(moved, t.apply(p)) == doctest::Approx(signed_distance(s, p)).epsilon(1e-9));
      }
    }
  }

  TEST_CASE("default scene") {
    const PhantomScene scene = default_scene();
    CHECK_NOTHROW(scene.validate());
    REQUIRE(scene.inclusions.size() == 4);
    CHECK(std::get<Sphere>(scene.inclusions[0].shape).radius == 11.57);
    CHECK(std::get<Ellipsoid>(scene.inclusions[1].shape).semi_axes == Vec3(24.65, 12.33, 12.33));
    const auto& cyl = std::get<Cylinder>(scene.inclusions[2].shape);
    CHECK(cyl.radius == 11.96);
    CHECK(cyl.height == 42.57);
    const auto& pr = std::get<TriPrism>(scene.inclusions[3].shape);
    CHECK(pr.edge_length == 23.51);
    CHECK(pr.height == 36.98);
    CHECK(scene.block.extent().isApprox(Vec3(180, 80, 60)));
    // Each inclusion fits laterally inside one 38.4 mm wide image.
    for (const auto& inc : scene.inclusions) CHECK(bounds(inc.shape).extent().y() < 38.4);
    // Prism apex points towards the top face.
    const auto v = prism_vertices(pr);
    CHECK(v[0].z() > v[1].z());
    CHECK(v[0].z() > v[2].z());
  }

  TEST_CASE("scene distance picks the nearest inclusion") {
    const PhantomScene scene = default_scene();
    const auto d = signed_distance(scene, Vec3(17, 0, -26));
    CHECK(d.index == 0);
    CHECK(d.distance == doctest::Approx(-11.57));
    CHECK(signed_distance(scene, Vec3(110.5, 0, -5)).index == 2);
    CHECK(signed_distance(scene, Vec3(90, 30, -50)).distance > 0.0);
  }

  TEST_CASE("scene validation rejects bad layouts") {
    PhantomScene scene = default_scene();
    scene.inclusions.push_back({"extra", Sphere{Vec3(20, 0, -26), 3.0}});
    CHECK_THROWS_AS(scene.validate(), Error);
    scene = default_scene();
    scene.inclusions.push_back({"outside", Sphere{Vec3(20, 0, -2), 3.0}});
    CHECK_THROWS_AS(scene.validate(), Error);
    scene = default_scene();
    // Bounding boxes overlap but the surfaces do not.
    scene.inclusions.push_back({"corner", Sphere{Vec3(27.5, 9.5, -16.0), 2.0}});
    CHECK_NOTHROW(scene.validate());
    CHECK_THROWS_AS(validate(Sphere{Vec3::Zero(), -1.0}), Error);
    CHECK_THROWS_AS(validate(Cylinder{Vec3::Zero(), Vec3::Zero(), 1.0, 1.0}), Error);
  }

  TEST_CASE("scene JSON round trip") {
    const PhantomScene scene = default_scene();
    const auto j = to_json(scene);
    const PhantomScene back = scene_from_json(j);
    CHECK(to_json(back).dump() == j.dump());
    const auto path = std::filesystem::temp_directory_path() / "usqa_scene_test.json";
    save_scene(scene, path);
    CHECK(to_json(load_scene(path)).dump() == j.dump());
    std::filesystem::remove(path);
    CHECK_THROWS_AS(shape_from_json(nlohmann::json{{"type", "torus"}}), Error);
  }
}
