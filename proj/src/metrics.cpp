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

#include "usqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "usqa/error.hpp"
#include "usqa/kdtree.hpp"

namespace usqa {

std::size_t VoxelSet::count() const {
  return static_cast<std::size_t>(std::count_if(occupancy.begin(), occupancy.end(), [](auto v) { return v != 0; }));
}

VoxelSet component_voxels(const LabeledComponents& components, int label) {
  VoxelSet out{components.geometry, std::vector<std::uint8_t>(components.labels.size())};
  for (std::size_t i = 0; i < out.occupancy.size(); ++i) out.occupancy[i] = components.labels[i] == label;
  return out;
}

VoxelSet voxelize(const ShapeSpec& shape, const GridSpec& g) {
  g.validate();
  VoxelSet out{g, std::vector<std::uint8_t>(g.size(), 0)};
  const Aabb box = bounds(shape);
  const auto lo = ((box.min - g.origin) / g.spacing).array().floor().max(0.0);
  const auto hi = ((box.max - g.origin) / g.spacing).array().ceil();
  for (int k = static_cast<int>(lo.z()); k <= std::min<int>(static_cast<int>(hi.z()), g.dims[2] - 1); ++k)
    for (int j = static_cast<int>(lo.y()); j <= std::min<int>(static_cast<int>(hi.y()), g.dims[1] - 1); ++j)
      for (int i = static_cast<int>(lo.x()); i <= std::min<int>(static_cast<int>(hi.x()), g.dims[0] - 1); ++i) {
        out.occupancy[g.index(i, j, k)] = contains(shape, g.center(i, j, k));
      }
  return out;
}

double dsc_3d(const VoxelSet& a, const VoxelSet& b) {
  const GridSpec &ga = a.geometry, &gb = b.geometry;
  if (ga.dims != gb.dims || ga.spacing != gb.spacing || ga.origin != gb.origin ||
      a.occupancy.size() != b.occupancy.size()) {
    throw Error(ErrorKind::kInvalidInput, "dsc_3d: grid geometry mismatch");
  }
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.occupancy.size(); ++i) {
    const bool x = a.occupancy[i] != 0, y = b.occupancy[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorKind::kInvalidInput, "percentile: no values");
  if (!(p >= 0.0 && p <= 100.0)) throw Error(ErrorKind::kInvalidInput, "percentile: p outside [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<double> directed_distances(std::span<const Vec3> xs, std::span<const Vec3> ys) {
  if (xs.empty() || ys.empty()) throw Error(ErrorKind::kInvalidInput, "hausdorff: empty point set");
  const KdTree tree(ys);
  std::vector<double> d(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) d[i] = std::sqrt(tree.nearest(xs[i]).squared_distance);
  return d;
}

HausdorffResult hausdorff(std::span<const Vec3> xs, std::span<const Vec3> ys) {
  const std::vector<double> dxy = directed_distances(xs, ys);
  const std::vector<double> dyx = directed_distances(ys, xs);
  HausdorffResult r;
  r.hd_max = std::max(*std::max_element(dxy.begin(), dxy.end()), *std::max_element(dyx.begin(), dyx.end()));
  r.hd95 = std::max(percentile(dxy, 95.0), percentile(dyx, 95.0));
  return r;
}

HausdorffResult surface_hausdorff(const TriangleMesh& a, const TriangleMesh& b, double sample_spacing) {
  const PointSet pa = sample_surface(a, sample_spacing);
  const PointSet pb = sample_surface(b, sample_spacing);
  return hausdorff(pa, pb);
}

namespace {

struct FeretNode {
  Aabb box;
  int left = -1;
  int right = -1;
  std::size_t begin = 0;
  std::size_t end = 0;
};

double max_box_distance_sq(const Aabb& a, const Aabb& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = std::max(a.max[i] - b.min[i], b.max[i] - a.min[i]);
    s += d * d;
  }
  return s;
}

class FeretSearch {
 public:
  explicit FeretSearch(std::span<const Vec3> points) : pts_(points.begin(), points.end()) {
    build(0, pts_.size());
  }

  double run() {
    // Seed with the extreme pair along each coordinate axis.
    for (int a = 0; a < 3; ++a) {
      const auto [lo, hi] = std::minmax_element(pts_.begin(), pts_.end(), [a](const Vec3& p, const Vec3& q) { return p[a] < q[a]; });
      best_ = std::max(best_, squared_distance(*lo, *hi));
    }
    pair(0, 0);
    return std::sqrt(best_);
  }

 private:
  int build(std::size_t begin, std::size_t end) {
    FeretNode node;
    node.begin = begin;
    node.end = end;
    for (std::size_t i = begin; i < end; ++i) node.box.extend(pts_[i]);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin > 32) {
      int axis;
      node.box.extent().maxCoeff(&axis);
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(pts_.begin() + static_cast<long>(begin), pts_.begin() + static_cast<long>(mid),
                       pts_.begin() + static_cast<long>(end),
                       [axis](const Vec3& p, const Vec3& q) { return p[axis] < q[axis]; });
      const int l = build(begin, mid);
      const int r = build(mid, end);
      nodes_[id].left = l;
      nodes_[id].right = r;
    }
    return id;
  }

  void pair(int a, int b) {
    const FeretNode& na = nodes_[a];
    const FeretNode& nb = nodes_[b];
    if (max_box_distance_sq(na.box, nb.box) <= best_) return;
    if (na.left < 0 && nb.left < 0) {
      for (std::size_t i = na.begin; i < na.end; ++i)
        for (std::size_t j = nb.begin; j < nb.end; ++j) best_ = std::max(best_, squared_distance(pts_[i], pts_[j]));
      return;
    }
    const bool split_a = nb.left < 0 || (na.left >= 0 && na.end - na.begin >= nb.end - nb.begin);
    if (split_a) {
      pair(na.left, b);
      pair(na.right, b);
    } else {
      pair(a, nb.left);
      pair(a, nb.right);
    }
  }

  std::vector<Vec3> pts_;
  std::vector<FeretNode> nodes_;
  double best_ = 0.0;
};

}  // namespace

double feret_diameter(std::span<const Vec3> points) {
  if (points.size() < 2) return 0.0;
  if (points.size() <= 20000) {
    double best = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t j = i + 1; j < points.size(); ++j) best = std::max(best, squared_distance(points[i], points[j]));
    return std::sqrt(best);
  }
  return FeretSearch(points).run();
}

DescriptorRecord shape_descriptors(const VoxelSet& component, const TriangleMesh& surface) {
  const GridSpec& g = component.geometry;
  std::size_t n = 0;
  Vec3 sum = Vec3::Zero();
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (!component.occupancy[g.index(i, j, k)]) continue;
        sum += g.center(i, j, k);
        ++n;
      }
  if (n < 4) throw Error(ErrorKind::kDegenerateComponent, "descriptors: fewer than 4 voxels");
  const Vec3 centroid = sum / static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        if (!component.occupancy[g.index(i, j, k)]) continue;
        const Vec3 d = g.center(i, j, k) - centroid;
        cov += d * d.transpose();
      }
  cov /= static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  if (eig.eigenvalues()(0) <= 1e-12 * g.spacing * g.spacing) {
    throw Error(ErrorKind::kDegenerateComponent, "descriptors: coplanar component");
  }
  if (surface.empty()) throw Error(ErrorKind::kDegenerateComponent, "descriptors: empty surface");

  DescriptorRecord d;
  d.volume = static_cast<double>(n) * g.spacing * g.spacing * g.spacing;
  d.surface_area = surface_area(surface);
  d.centroid = centroid;
  d.feret_max = feret_diameter(surface.vertices);
  for (int a = 0; a < 3; ++a) {
    d.principal_values[a] = eig.eigenvalues()(2 - a);
    d.principal_axes[a] = eig.eigenvectors().col(2 - a);
  }
  d.elongation = std::sqrt(d.principal_values[0] / d.principal_values[1]);
  d.flatness = std::sqrt(d.principal_values[1] / d.principal_values[2]);
  d.roundness = sphericity(d.volume, d.surface_area);
  return d;
}

SurfaceErrorMap surface_error_map(const TriangleMesh& pred, const TriangleMesh& ref, const RigidTransform& registration) {
  if (ref.empty() || !(surface_area(ref) > 0.0)) throw Error(ErrorKind::kInvalidInput, "surface_error_map: degenerate reference");
  SurfaceErrorMap out;
  out.mesh = pred;
  for (Vec3& v : out.mesh.vertices) v = registration.apply(v);
  const MeshDistance dist(ref);
  out.distances.reserve(out.mesh.vertices.size());
  double sum = 0.0, sq = 0.0;
  for (const Vec3& v : out.mesh.vertices) {
    const double d = dist.signed_distance(v);
    out.distances.push_back(d);
    sum += d;
    sq += d * d;
    out.max_abs = std::max(out.max_abs, std::abs(d));
  }
  if (!out.distances.empty()) {
    out.mean = sum / static_cast<double>(out.distances.size());
    out.rms = std::sqrt(sq / static_cast<double>(out.distances.size()));
  }
  return out;
}

double resolution_limited_dsc(double r, double r_err) {
  if (!(r > 0.0) || !(r + r_err > 0.0)) throw Error(ErrorKind::kInvalidInput, "resolution_limited_dsc: invalid radius");
  const double a = r * r * r, b = std::pow(r + r_err, 3);
  return 2.0 * a / (a + b);
}

double resolution_limited_volume_error(double r, double r_err) {
  if (!(r > 0.0) || !(r + r_err > 0.0)) throw Error(ErrorKind::kInvalidInput, "resolution_limited_dsc: invalid radius");
  return (std::pow(r + r_err, 3) - r * r * r) / (r * r * r);
}

}  // namespace usqa
