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

#include "usqa/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include <Eigen/Geometry>

#include "usqa/error.hpp"

static_assert(std::endian::native == std::endian::little, "binary mesh writers assume a little-endian host");

namespace usqa {

namespace {

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

double corner_angle(const Vec3& at, const Vec3& p, const Vec3& q) {
  const Vec3 u = (p - at).normalized();
  const Vec3 v = (q - at).normalized();
  return std::acos(std::clamp(u.dot(v), -1.0, 1.0));
}

// Closest point on triangle abc to p, by Voronoi region of the triangle.
// feature: 0,1,2 = vertex a,b,c; 3,4,5 = edge ab,bc,ca; 6 = face.
Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c, int& feature) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) {
    feature = 0;
    return a;
  }
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) {
    feature = 1;
    return b;
  }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    feature = 3;
    return a + (d1 / (d1 - d3)) * ab;
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) {
    feature = 2;
    return c;
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    feature = 5;
    return a + (d2 / (d2 - d6)) * ac;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    feature = 4;
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  }
  feature = 6;
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double box_squared_distance(const Aabb& box, const Vec3& p) {
  const Vec3 d = (box.min - p).cwiseMax(p - box.max).cwiseMax(Vec3::Zero());
  return d.squaredNorm();
}

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

double surface_area(const TriangleMesh& mesh) {
  double area = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    area += 0.5 * (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).norm();
  }
  return area;
}

double enclosed_volume(const TriangleMesh& mesh) {
  double six_v = 0.0;
  for (const auto& t : mesh.triangles) {
    six_v += mesh.vertices[t[0]].dot(mesh.vertices[t[1]].cross(mesh.vertices[t[2]]));
  }
  return six_v / 6.0;
}

bool is_watertight(const TriangleMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  // +1 for a->b with a<b, and a separate count of uses.
  std::unordered_map<std::uint64_t, std::pair<int, int>> edges;
  edges.reserve(mesh.triangles.size() * 2);
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t a = t[k];
      const std::uint32_t b = t[(k + 1) % 3];
      if (a == b) return false;
      auto& e = edges[edge_key(a, b)];
      e.first += (a < b) ? 1 : -1;
      e.second += 1;
    }
  }
  return std::all_of(edges.begin(), edges.end(), [](const auto& kv) {
    return kv.second.second == 2 && kv.second.first == 0;
  });
}

Aabb bounds(std::span<const Vec3> points) {
  Aabb box;
  for (const auto& p : points) box.extend(p);
  return box;
}

Aabb bounds(const TriangleMesh& mesh) { return bounds(std::span<const Vec3>(mesh.vertices)); }

std::vector<Vec3> vertex_normals(const TriangleMesh& mesh) {
  std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    const Vec3 n = (b - a).cross(c - a);
    if (n.squaredNorm() == 0.0) continue;
    const Vec3 un = n.normalized();
    normals[t[0]] += corner_angle(a, b, c) * un;
    normals[t[1]] += corner_angle(b, c, a) * un;
    normals[t[2]] += corner_angle(c, a, b) * un;
  }
  for (auto& n : normals) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
  return normals;
}

PointSet sample_surface(const TriangleMesh& mesh, double spacing) {
  if (!(spacing > 0.0)) throw Error(ErrorKind::kInvalidInput, "sample_surface: spacing must be positive");
  PointSet out(mesh.vertices.begin(), mesh.vertices.end());
  std::unordered_map<std::uint64_t, bool> seen;
  seen.reserve(mesh.triangles.size() * 2);
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t a = t[k];
      const std::uint32_t b = t[(k + 1) % 3];
      if (!seen.emplace(edge_key(a, b), true).second) continue;
      const std::uint32_t lo = std::min(a, b);
      const std::uint32_t hi = std::max(a, b);
      const Vec3& pa = mesh.vertices[lo];
      const Vec3& pb = mesh.vertices[hi];
      const int n = static_cast<int>(std::ceil((pb - pa).norm() / spacing));
      for (int i = 1; i < n; ++i) out.push_back(pa + (pb - pa) * (static_cast<double>(i) / n));
    }
  }
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    const double longest = std::max({(b - a).norm(), (c - b).norm(), (a - c).norm()});
    const int n = static_cast<int>(std::ceil(longest / spacing));
    for (int i = 1; i < n; ++i) {
      for (int j = 1; i + j < n; ++j) {
        const int k = n - i - j;
        out.push_back((a * i + b * j + c * k) / static_cast<double>(n));
      }
    }
  }
  return out;
}

std::size_t MeshBuilder::KeyHash::operator()(const std::array<std::int64_t, 3>& k) const noexcept {
  std::size_t h = 1469598103934665603ULL;
  for (auto v : k) {
    h ^= static_cast<std::size_t>(v);
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint32_t MeshBuilder::vertex(const Vec3& p) {
  const std::array<std::int64_t, 3> key{std::llround(p.x() * 1e9), std::llround(p.y() * 1e9),
                                        std::llround(p.z() * 1e9)};
  auto [it, inserted] = index_.emplace(key, static_cast<std::uint32_t>(mesh_.vertices.size()));
  if (inserted) mesh_.vertices.push_back(p);
  return it->second;
}

void MeshBuilder::triangle(std::uint32_t a, std::uint32_t b, std::uint32_t c) {
  if (a == b || b == c || a == c) return;
  mesh_.triangles.push_back({a, b, c});
}

MeshDistance::MeshDistance(const TriangleMesh& mesh) : mesh_(mesh) {
  if (mesh_.triangles.empty()) throw Error(ErrorKind::kInvalidInput, "MeshDistance: empty mesh");
  face_normals_.resize(mesh_.triangles.size());
  vertex_pseudo_normals_.assign(mesh_.vertices.size(), Vec3::Zero());
  double total_area = 0.0;
  for (std::size_t f = 0; f < mesh_.triangles.size(); ++f) {
    const auto& t = mesh_.triangles[f];
    const Vec3& a = mesh_.vertices[t[0]];
    const Vec3& b = mesh_.vertices[t[1]];
    const Vec3& c = mesh_.vertices[t[2]];
    const Vec3 n = (b - a).cross(c - a);
    total_area += 0.5 * n.norm();
    face_normals_[f] = n.squaredNorm() > 0.0 ? n.normalized() : Vec3::Zero();
    vertex_pseudo_normals_[t[0]] += corner_angle(a, b, c) * face_normals_[f];
    vertex_pseudo_normals_[t[1]] += corner_angle(b, c, a) * face_normals_[f];
    vertex_pseudo_normals_[t[2]] += corner_angle(c, a, b) * face_normals_[f];
    for (int k = 0; k < 3; ++k) {
      edge_pseudo_normals_.try_emplace(edge_key(t[k], t[(k + 1) % 3]), Vec3::Zero()).first->second += face_normals_[f];
    }
  }
  if (!(total_area > 0.0)) throw Error(ErrorKind::kInvalidInput, "MeshDistance: degenerate mesh (zero area)");
  order_.resize(mesh_.triangles.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * order_.size() / 4 + 2);
  build(0, static_cast<std::uint32_t>(order_.size()));
}

int MeshDistance::build(std::uint32_t begin, std::uint32_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{});
  Aabb box;
  Aabb centroids;
  for (std::uint32_t i = begin; i < end; ++i) {
    const auto& t = mesh_.triangles[order_[i]];
    Vec3 centroid = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      box.extend(mesh_.vertices[t[k]]);
      centroid += mesh_.vertices[t[k]];
    }
    centroids.extend(centroid / 3.0);
  }
  nodes_[id].box = box;
  if (end - begin <= 4) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  int axis = 0;
  centroids.extent().maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  auto centroid_of = [&](std::uint32_t f) {
    const auto& t = mesh_.triangles[f];
    return mesh_.vertices[t[0]][axis] + mesh_.vertices[t[1]][axis] + mesh_.vertices[t[2]][axis];
  };
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return centroid_of(a) < centroid_of(b); });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void MeshDistance::search(int node_id, const Vec3& p, double& best_sq, std::uint32_t& best_tri, Vec3& best_pt,
                          int& best_feature) const {
  const Node& node = nodes_[node_id];
  if (box_squared_distance(node.box, p) > best_sq) return;
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t f = order_[i];
      const auto& t = mesh_.triangles[f];
      int feature = 6;
      const Vec3 q = closest_on_triangle(p, mesh_.vertices[t[0]], mesh_.vertices[t[1]], mesh_.vertices[t[2]], feature);
      const double d = (q - p).squaredNorm();
      if (d < best_sq) {
        best_sq = d;
        best_tri = f;
        best_pt = q;
        best_feature = feature;
      }
    }
    return;
  }
  const double dl = box_squared_distance(nodes_[node.left].box, p);
  const double dr = box_squared_distance(nodes_[node.right].box, p);
  if (dl <= dr) {
    search(node.left, p, best_sq, best_tri, best_pt, best_feature);
    search(node.right, p, best_sq, best_tri, best_pt, best_feature);
  } else {
    search(node.right, p, best_sq, best_tri, best_pt, best_feature);
    search(node.left, p, best_sq, best_tri, best_pt, best_feature);
  }
}

MeshDistance::Result MeshDistance::query(const Vec3& p) const {
  double best_sq = std::numeric_limits<double>::infinity();
  std::uint32_t tri = 0;
  Vec3 closest = Vec3::Zero();
  int feature = 6;
  search(0, p, best_sq, tri, closest, feature);
  const auto& t = mesh_.triangles[tri];
  Vec3 normal;
  if (feature == 6) {
    normal = face_normals_[tri];
  } else if (feature < 3) {
    normal = vertex_pseudo_normals_[t[feature]];
  } else {
    const int k = feature - 3;
    normal = edge_pseudo_normals_.at(edge_key(t[k], t[(k + 1) % 3]));
  }
  const double dist = std::sqrt(best_sq);
  return Result{(p - closest).dot(normal) >= 0.0 ? dist : -dist, closest, tri};
}

void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  std::array<char, 80> header{};
  const std::string tag = "usqa3d binary STL";
  std::copy(tag.begin(), tag.end(), header.begin());
  out.write(header.data(), header.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(mesh.triangles.size()));
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    Vec3 n = (b - a).cross(c - a);
    if (n.squaredNorm() > 0.0) n.normalize();
    for (const Vec3* v : std::array<const Vec3*, 4>{&n, &a, &b, &c}) {
      for (int k = 0; k < 3; ++k) put<float>(out, static_cast<float>((*v)[k]));
    }
    put<std::uint16_t>(out, 0);
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

TriangleMesh read_stl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::array<char, 80> header{};
  in.read(header.data(), header.size());
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  MeshBuilder builder;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::array<float, 12> f{};
    std::uint16_t attr = 0;
    in.read(reinterpret_cast<char*>(f.data()), sizeof(float) * f.size());
    in.read(reinterpret_cast<char*>(&attr), sizeof(attr));
    if (!in) throw Error(ErrorKind::kIo, "truncated STL " + path.string());
    builder.triangle(Vec3(f[3], f[4], f[5]), Vec3(f[6], f[7], f[8]), Vec3(f[9], f[10], f[11]));
  }
  return builder.take();
}

void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path, std::span<const double> scalars,
               const std::string& scalar_name) {
  if (!scalars.empty() && scalars.size() != mesh.vertices.size()) {
    throw Error(ErrorKind::kInvalidInput, "write_ply: one scalar per vertex required");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << "ply\n"
      << "format binary_little_endian 1.0\n"
      << "comment usqa3d\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\n"
      << "property float y\n"
      << "property float z\n";
  if (!scalars.empty()) out << "property float " << scalar_name << "\n";
  out << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar int vertex_indices\n"
      << "end_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int k = 0; k < 3; ++k) put<float>(out, static_cast<float>(mesh.vertices[i][k]));
    if (!scalars.empty()) put<float>(out, static_cast<float>(scalars[i]));
  }
  for (const auto& t : mesh.triangles) {
    put<std::uint8_t>(out, 3);
    for (auto v : t) put<std::int32_t>(out, static_cast<std::int32_t>(v));
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace usqa
