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

#ifndef USQA_PHANTOM_HPP
#define USQA_PHANTOM_HPP

#include <array>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "usqa/descriptors.hpp"
#include "usqa/geometry.hpp"
#include "usqa/mesh.hpp"
#include "usqa/transforms.hpp"

namespace usqa {

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Semi-axes are along the columns of `orientation`'s rotation matrix.
struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3::Ones();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

/// Right circular cylinder; `center` is the midpoint of the axis segment.
struct Cylinder {
  Vec3 center = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double radius = 1.0;
  double height = 1.0;
};

/// Equilateral triangular prism. In the local frame of `pose` the cross
/// section lies in the xy-plane with its centroid at the origin and one
/// vertex on +y; the prism axis is local z, spanning [-height/2, height/2].
struct TriPrism {
  double edge_length = 1.0;
  double height = 1.0;
  RigidTransform pose;
};

using ShapeSpec = std::variant<Sphere, Ellipsoid, Cylinder, TriPrism>;

/// "sphere", "ellipsoid", "cylinder" or "triprism".
std::string shape_tag(const ShapeSpec& shape);
void validate(const ShapeSpec& shape);

/// Exact signed distance, negative inside. Ellipsoids use a Newton
/// foot-point solve converged to machine precision.
double signed_distance(const ShapeSpec& shape, const Vec3& p);
/// Cheap inside test consistent with the sign of `signed_distance`.
bool contains(const ShapeSpec& shape, const Vec3& p);
Aabb bounds(const ShapeSpec& shape);
Vec3 shape_center(const ShapeSpec& shape);
ShapeSpec transform_shape(const RigidTransform& t, const ShapeSpec& shape);

/// Closest point on an axis-aligned ellipsoid centred at the origin.
Vec3 ellipsoid_closest_point(const Vec3& semi_axes, const Vec3& p);

/// Six prism vertices: bottom triangle (z = -h/2) then top, in world mm.
std::array<Vec3, 6> prism_vertices(const TriPrism& prism);

/// Watertight, outward-oriented mesh with every vertex on the analytic
/// surface and edges no longer than about `target_edge_len`.
TriangleMesh ground_truth_mesh(const ShapeSpec& shape, double target_edge_len);

/// Closed-form volume, area, centroid, principal moments and Feret diameter.
DescriptorRecord analytic_descriptors(const ShapeSpec& shape);

// Scene -----------------------------------------------------------------------

struct Inclusion {
  std::string label;
  ShapeSpec shape;
};

struct SpeckleModel {
  double mean = 150.0;
  double log_sigma = 0.35;  // multiplicative, log-normal
};

struct InclusionIntensity {
  double mean = 20.0;
  double sigma = 8.0;  // additive
};

struct PhantomScene {
  std::vector<Inclusion> inclusions;
  Aabb block;
  SpeckleModel background;
  InclusionIntensity inclusion_intensity;

  /// Throws if an inclusion is invalid, leaves the block, or touches another.
  void validate() const;
  Aabb inclusion_bounds() const;
};

struct SceneDistance {
  double distance = 0.0;
  std::size_t index = 0;  // nearest inclusion
};

SceneDistance signed_distance(const PhantomScene& scene, const Vec3& p);

/// Sphere, prolate ellipsoid, cylinder and triangular prism in a
/// 180 x 80 x 60 mm block, laid out along +x with their centres 26 mm below
/// the top face (z = 0).
PhantomScene default_scene();

nlohmann::json to_json(const ShapeSpec& shape);
ShapeSpec shape_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PhantomScene& scene);
PhantomScene scene_from_json(const nlohmann::json& j);
PhantomScene load_scene(const std::filesystem::path& path);
void save_scene(const PhantomScene& scene, const std::filesystem::path& path);

}  // namespace usqa

#endif /* USQA_PHANTOM_HPP */
