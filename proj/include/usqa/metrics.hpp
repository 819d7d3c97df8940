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

#ifndef USQA_METRICS_HPP
#define USQA_METRICS_HPP

#include <span>
#include <vector>

#include "usqa/descriptors.hpp"
#include "usqa/mesh.hpp"
#include "usqa/phantom.hpp"
#include "usqa/reconstruction.hpp"

namespace usqa {

/// Binary occupancy over a grid (1 = member).
struct VoxelSet {
  GridSpec geometry;
  std::vector<std::uint8_t> occupancy;

  std::size_t count() const;
};

VoxelSet component_voxels(const LabeledComponents& components, int label);
/// Voxels whose centre lies inside `shape`.
VoxelSet voxelize(const ShapeSpec& shape, const GridSpec& geometry);

/// 2|A n B| / (|A| + |B|); 1 when both are empty. Grids must match exactly.
double dsc_3d(const VoxelSet& a, const VoxelSet& b);

/// Linear interpolation between order statistics, p in [0, 100].
double percentile(std::vector<double> values, double p);

/// Distance from each x to its nearest y.
std::vector<double> directed_distances(std::span<const Vec3> xs, std::span<const Vec3> ys);

struct HausdorffResult {
  double hd_max = 0.0;
  double hd95 = 0.0;
};

HausdorffResult hausdorff(std::span<const Vec3> xs, std::span<const Vec3> ys);
/// Hausdorff between uniform surface samples of two meshes.
HausdorffResult surface_hausdorff(const TriangleMesh& a, const TriangleMesh& b, double sample_spacing = 0.25);

/// Maximum pairwise distance. Brute force up to 20000 points, otherwise an
/// exact bounding-box branch and bound.
double feret_diameter(std::span<const Vec3> points);

/// Volume and moments from the voxels, area and Feret diameter from the mesh.
DescriptorRecord shape_descriptors(const VoxelSet& component, const TriangleMesh& surface);

struct SurfaceErrorMap {
  TriangleMesh mesh;               // pred after registration
  std::vector<double> distances;  // signed, per vertex, positive outside ref
  double mean = 0.0;
  double rms = 0.0;
  double max_abs = 0.0;
};

SurfaceErrorMap surface_error_map(const TriangleMesh& pred, const TriangleMesh& ref, const RigidTransform& registration);

/// 2 r^3 / (r^3 + (r + r_err)^3): overlap of a sphere with a concentric one
/// inflated by the resolution error.
double resolution_limited_dsc(double r, double r_err);
/// ((r + r_err)^3 - r^3) / r^3.
double resolution_limited_volume_error(double r, double r_err);

}  // namespace usqa

#endif /* USQA_METRICS_HPP */
