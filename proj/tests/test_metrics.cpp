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
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "usqa/error.hpp"
#include "usqa/kdtree.hpp"
#include "usqa/metrics.hpp"

using namespace usqa;

namespace {

constexpr double kPi = std::numbers::pi;

GridSpec cube_grid(double lo, double hi, double spacing) {
  GridSpec g;
  g.origin = Vec3::Constant(lo);
  g.spacing = spacing;
  const int n = static_cast<int>(std::lround((hi - lo) / spacing)) + 1;
  g.dims = {n, n, n};
  return g;
}

PointSet random_points(std::mt19937_64& rng, std::size_t n, double scale) {
  PointSet p;
  for (std::size_t i = 0; i < n; ++i) p.push_back(testing::random_vec(rng, -scale, scale));
  return p;
}

HausdorffResult brute_hausdorff(const PointSet& xs, const PointSet& ys) {
  auto directed = [](const PointSet& a, const PointSet& b) {
    std::vector<double> d;
    for (const auto& p : a) {
      double best = INFINITY;
      for (const auto& q : b) best = std::min(best, squared_distance(p, q));
      d.push_back(std::sqrt(best));
    }
    std::sort(d.begin(), d.end());
    return d;
  };
  auto p95 = [](const std::vector<double>& s) {
    const double pos = 0.95 * (s.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    return i + 1 < s.size() ? s[i] + (pos - i) * (s[i + 1] - s[i]) : s[i];
  };
  const auto a = directed(xs, ys), b = directed(ys, xs);
  return {std::max(a.back(), b.back()), std::max(p95(a), p95(b))};
}

DescriptorRecord voxel_descriptors(const ShapeSpec& shape, const GridSpec& g) {
  const VoxelSet v = voxelize(shape, g);
  return shape_descriptors(v, extract_surface(g, v.occupancy));
}

}  // namespace

TEST_CASE("dsc_3d cases") {
  const GridSpec g = cube_grid(-14, 14, 0.5);
  const VoxelSet a = voxelize(Sphere{Vec3::Zero(), 11.5}, g);
  const VoxelSet b = voxelize(Sphere{Vec3::Zero(), 12.0}, g);
  CHECK(dsc_3d(a, a) == 1.0);
  CHECK(dsc_3d(a, b) == dsc_3d(b, a));
  CHECK(dsc_3d(a, b) == doctest::Approx(0.94).epsilon(0.005 / 0.94));
  const VoxelSet far = voxelize(Sphere{Vec3::Constant(8.0), 2.0}, g);
  const VoxelSet near = voxelize(Sphere{Vec3::Constant(-8.0), 2.0}, g);
  CHECK(dsc_3d(far, near) == 0.0);
  VoxelSet empty{g, std::vector<std::uint8_t>(g.size(), 0)};
  CHECK(dsc_3d(empty, empty) == 1.0);

  GridSpec other = g;
  other.origin.x() += 0.25;
  CHECK_THROWS_AS(dsc_3d(a, VoxelSet{other, a.occupancy}), Error);
}

TEST_CASE("percentile") {
  CHECK(percentile({4, 1, 3, 2}, 50.0) == doctest::Approx(2.5));
  CHECK(percentile({4, 1, 3, 2}, 100.0) == 4.0);
  CHECK(percentile({4, 1, 3, 2}, 0.0) == 1.0);
  CHECK(percentile({0, 10}, 95.0) == doctest::Approx(9.5));
  CHECK(percentile({7}, 95.0) == 7.0);
  CHECK_THROWS_AS(percentile({}, 50.0), Error);
  CHECK_THROWS_AS(percentile({1.0}, 101.0), Error);
}

TEST_CASE("hausdorff: identity, planes and brute-force oracle") {
  std::mt19937_64 rng(12);
  const PointSet a = random_points(rng, 200, 10.0);
  const HausdorffResult same = hausdorff(a, a);
  CHECK(same.hd_max == 0.0);
  CHECK(same.hd95 == 0.0);

  PointSet p0, p1;
  for (int i = 0; i <= 40; ++i)
    for (int j = 0; j <= 40; ++j) {
      p0.push_back(Vec3(i * 0.25, j * 0.25, 0.0));
      p1.push_back(Vec3(i * 0.25, j * 0.25, 2.0));
    }
  const HausdorffResult planes = hausdorff(p0, p1);
  CHECK(planes.hd_max == doctest::Approx(2.0));
  CHECK(planes.hd95 == doctest::Approx(2.0));

  for (int trial = 0; trial < 40; ++trial) {
    const PointSet xs = random_points(rng, 150 + trial * 8, 20.0);
    const PointSet ys = random_points(rng, 180 + trial * 5, 15.0 + trial * 0.1);
    const HausdorffResult got = hausdorff(xs, ys);
    const HausdorffResult oracle = brute_hausdorff(xs, ys);
    CHECK(got.hd_max == oracle.hd_max);
    CHECK(got.hd95 == doctest::Approx(oracle.hd95).epsilon(1e-14));
    const HausdorffResult rev = hausdorff(ys, xs);
    CHECK(rev.hd_max == got.hd_max);
    CHECK(rev.hd95 == got.hd95);
    CHECK(got.hd95 <= got.hd_max);
  }
  CHECK_THROWS_AS(hausdorff(PointSet{}, a), Error);
}

TEST_CASE("surface hausdorff of concentric spheres") {
  const TriangleMesh a = ground_truth_mesh(Sphere{Vec3::Zero(), 10.0}, 0.5);
  const TriangleMesh b = ground_truth_mesh(Sphere{Vec3::Zero(), 11.0}, 0.5);
  const HausdorffResult h = surface_hausdorff(a, b, 0.25);
  CHECK(h.hd_max == doctest::Approx(1.0).epsilon(0.01));
  CHECK(h.hd95 == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("feret diameter: cube, brute force vs branch and bound") {
  const TriangleMesh cube = ground_truth_mesh(TriPrism{10.0, 10.0, RigidTransform()}, 1.0);
  CHECK(feret_diameter(cube.vertices) == doctest::Approx(std::sqrt(200.0)).epsilon(1e-12));

  std::mt19937_64 rng(6);
  PointSet pts = random_points(rng, 25000, 1.0);
  for (auto& p : pts) p = p.normalized() * (20.0 + p.x());
  double best = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, squared_distance(pts[i], pts[j]));
  CHECK(feret_diameter(pts) == std::sqrt(best));
}

TEST_CASE("shape descriptors on voxelized shapes") {
  const GridSpec g = cube_grid(-30, 30, 0.5);
  const DescriptorRecord s = voxel_descriptors(Sphere{Vec3(0.1, 0.2, -0.1), 11.57}, g);
  CHECK(s.roundness >= 0.97);
  CHECK(s.roundness <= 1.0);
  CHECK(s.elongation <= 1.03);
  CHECK(s.elongation >= 1.0);
  CHECK(s.volume == doctest::Approx(4.0 / 3.0 * kPi * std::pow(11.57, 3)).epsilon(0.01));
  CHECK((s.centroid - Vec3(0.1, 0.2, -0.1)).norm() < 0.05);
  CHECK(s.feret_max == doctest::Approx(2 * 11.57).epsilon(0.03));

  const DescriptorRecord e = voxel_descriptors(Ellipsoid{Vec3::Zero(), Vec3(24.65, 12.33, 12.33), Eigen::Quaterniond::Identity()}, g);
  CHECK(e.elongation == doctest::Approx(2.0).epsilon(0.025));
  CHECK(std::abs(e.principal_axes[0].x()) > 0.999);

  // Voxels with centres in [0, 10)^3 and the exact cube surface.
  std::vector<std::uint8_t> cube(g.size(), 0);
  for (int k = 60; k < 80; ++k)
    for (int j = 60; j < 80; ++j)
      for (int i = 60; i < 80; ++i) cube[g.index(i, j, k)] = 1;
  MeshBuilder box;
  const int faces[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  auto corner = [](int c) { return Vec3(c & 1 ? 9.75 : -0.25, c & 2 ? 9.75 : -0.25, c & 4 ? 9.75 : -0.25); };
  for (const auto& f : faces) {
    box.triangle(corner(f[0]), corner(f[1]), corner(f[2]));
    box.triangle(corner(f[0]), corner(f[2]), corner(f[3]));
  }
  const TriangleMesh box_mesh = box.take();
  REQUIRE(enclosed_volume(box_mesh) == doctest::Approx(1000.0));
  const DescriptorRecord c = shape_descriptors(VoxelSet{g, cube}, box_mesh);
  CHECK(c.feret_max == doctest::Approx(10.0 * std::sqrt(3.0)).epsilon(0.02));
  CHECK(c.volume == doctest::Approx(1000.0));
  CHECK(c.roundness == doctest::Approx(std::cbrt(36.0 * kPi) / 6.0).epsilon(1e-12));
  CHECK(c.elongation == doctest::Approx(1.0).epsilon(1e-9));

  std::vector<std::uint8_t> flat(g.size(), 0);
  for (int i = 0; i < 10; ++i) flat[g.index(i, i % 3, 5)] = 1;
  CHECK_THROWS_AS(shape_descriptors(VoxelSet{g, flat}, extract_surface(g, flat, 0.0)), Error);
}

TEST_CASE("descriptor invariances") {
  const GridSpec g = cube_grid(-30, 30, 0.5);
  const Ellipsoid base{Vec3::Zero(), Vec3(20.0, 12.0, 8.0), Eigen::Quaterniond::Identity()};
  const DescriptorRecord d0 = voxel_descriptors(base, g);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 3; ++t) {
    const RigidTransform m = testing::random_rigid(rng, 2.0);
    const DescriptorRecord d = voxel_descriptors(transform_shape(m, base), g);
    CHECK(std::abs(d.roundness - d0.roundness) <= 0.02);
    CHECK(d.volume == doctest::Approx(d0.volume).epsilon(0.01));
  }

  const VoxelSet v = voxelize(base, g);
  const TriangleMesh mesh = extract_surface(g, v.occupancy);
  GridSpec scaled = g;
  scaled.spacing *= 3.7;
  scaled.origin *= 3.7;
  TriangleMesh scaled_mesh = mesh;
  for (auto& p : scaled_mesh.vertices) p *= 3.7;
  const DescriptorRecord a = shape_descriptors(v, mesh);
  const DescriptorRecord b = shape_descriptors(VoxelSet{scaled, v.occupancy}, scaled_mesh);
  CHECK(b.elongation == doctest::Approx(a.elongation).epsilon(1e-12));
  CHECK(b.flatness == doctest::Approx(a.flatness).epsilon(1e-12));
  CHECK(b.roundness == doctest::Approx(a.roundness).epsilon(1e-12));
}

TEST_CASE("surface error map") {
  const TriangleMesh ref = ground_truth_mesh(Sphere{Vec3::Zero(), 10.0}, 0.5);
  const SurfaceErrorMap zero = surface_error_map(ref, ref, RigidTransform());
  REQUIRE(zero.distances.size() == ref.vertices.size());
  CHECK(zero.max_abs < 1e-12);

  TriangleMesh grown = ref;
  const auto normals = vertex_normals(ref);
  for (std::size_t i = 0; i < grown.vertices.size(); ++i) grown.vertices[i] += normals[i];
  const SurfaceErrorMap m = surface_error_map(grown, ref, RigidTransform());
  for (double d : m.distances) CHECK(d == doctest::Approx(1.0).epsilon(0.01));
  CHECK(m.mean == doctest::Approx(1.0).epsilon(0.01));
  const HausdorffResult h = hausdorff(grown.vertices, sample_surface(ref, 0.25));
  CHECK(m.max_abs <= h.hd_max + 1e-12);

  const RigidTransform shift = RigidTransform::translation_only(Vec3(0.0, 0.0, 0.5));
  const SurfaceErrorMap moved = surface_error_map(ref, ref, shift);
  CHECK(moved.max_abs == doctest::Approx(0.5).epsilon(0.01));
  CHECK_THROWS_AS(surface_error_map(ref, TriangleMesh{}, RigidTransform()), Error);
}

TEST_CASE("resolution-limited bound") {
  CHECK(resolution_limited_dsc(11.5, 0.5) == doctest::Approx(0.938).epsilon(0.001 / 0.938));
  CHECK(resolution_limited_dsc(11.5, 0.0) == 1.0);
  const double v = 4.0 / 3.0 * kPi * std::pow(11.5, 3), vp = 4.0 / 3.0 * kPi * std::pow(12.0, 3);
  CHECK(resolution_limited_dsc(11.5, 0.5) == doctest::Approx(2 * v / (v + vp)).epsilon(1e-14));
  CHECK(resolution_limited_volume_error(11.5, 0.5) == doctest::Approx((vp - v) / v).epsilon(1e-14));
  CHECK_THROWS_AS(resolution_limited_dsc(0.0, 0.5), Error);
  CHECK_THROWS_AS(resolution_limited_dsc(1.0, -2.0), Error);
}
