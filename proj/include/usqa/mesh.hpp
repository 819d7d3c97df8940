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

#ifndef USQA_MESH_HPP
#define USQA_MESH_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "usqa/geometry.hpp"

namespace usqa {

using Triangle = std::array<std::uint32_t, 3>;

/// Indexed triangle mesh in mm. Counter-clockwise winding seen from outside.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  bool empty() const { return triangles.empty(); }
};

double surface_area(const TriangleMesh& mesh);

/// Signed volume by the divergence theorem; positive for outward winding.
double enclosed_volume(const TriangleMesh& mesh);

/// Every undirected edge used by exactly two triangles with opposite
/// directions (closed, consistently oriented 2-manifold edges).
bool is_watertight(const TriangleMesh& mesh);

Aabb bounds(const TriangleMesh& mesh);
Aabb bounds(std::span<const Vec3> points);

/// Angle-weighted vertex normals (unit length).
std::vector<Vec3> vertex_normals(const TriangleMesh& mesh);

/// Deterministic uniform surface sample with point spacing at most `spacing`.
/// Contains every vertex, points along every edge, and interior lattice
/// points of every triangle.
PointSet sample_surface(const TriangleMesh& mesh, double spacing);

/// Mesh with vertices welded on an exact key; used by the primitive mesh
/// generators so shared boundary vertices collapse to one index.
class MeshBuilder {
 public:
  std::uint32_t vertex(const Vec3& p);
  void triangle(std::uint32_t a, std::uint32_t b, std::uint32_t c);
  void triangle(const Vec3& a, const Vec3& b, const Vec3& c) { triangle(vertex(a), vertex(b), vertex(c)); }
  TriangleMesh take() { return std::move(mesh_); }

 private:
  struct KeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const noexcept;
  };
  TriangleMesh mesh_;
  std::unordered_map<std::array<std::int64_t, 3>, std::uint32_t, KeyHash> index_;
};

/**
 * Exact point-to-mesh distance queries over a bounding volume hierarchy.
 *
 * The sign comes from angle-weighted pseudo-normals of the closest feature
 * (face, edge or vertex), which is exact for closed, consistently oriented
 * meshes: positive outside, negative inside.
 */
class MeshDistance {
 public:
  explicit MeshDistance(const TriangleMesh& mesh);

  struct Result {
    double distance = 0.0;  // signed
    Vec3 closest = Vec3::Zero();
    std::uint32_t triangle = 0;
  };

  Result query(const Vec3& p) const;
  double signed_distance(const Vec3& p) const { return query(p).distance; }

 private:
  struct Node {
    Aabb box;
    int left = -1;
    int right = -1;
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
  };
  int build(std::uint32_t begin, std::uint32_t end);
  void search(int node, const Vec3& p, double& best_sq, std::uint32_t& best_tri, Vec3& best_pt, int& best_feature) const;

  TriangleMesh mesh_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::vector<Vec3> face_normals_;
  std::vector<Vec3> vertex_pseudo_normals_;
  std::unordered_map<std::uint64_t, Vec3> edge_pseudo_normals_;
};

void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_stl(const std::filesystem::path& path);

/// Binary little-endian PLY. When `scalars` is non-empty it must hold one
/// value per vertex and is written as a float vertex property `scalar_name`.
void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path, std::span<const double> scalars = {},
               const std::string& scalar_name = "distance");

}  // namespace usqa

#endif /* USQA_MESH_HPP */
