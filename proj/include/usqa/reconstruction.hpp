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

#ifndef USQA_RECONSTRUCTION_HPP
#define USQA_RECONSTRUCTION_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "usqa/image.hpp"
#include "usqa/mesh.hpp"
#include "usqa/transforms.hpp"

namespace usqa {

/// Regular grid geometry; `origin` is the centre of voxel (0, 0, 0).
struct GridSpec {
  Vec3 origin = Vec3::Zero();
  double spacing = 0.5;  // mm, isotropic
  std::array<int, 3> dims{1, 1, 1};

  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  Vec3 center(int i, int j, int k) const { return origin + spacing * Vec3(i, j, k); }
  Aabb bounds() const;  // voxel centres
};

struct VoxelGrid {
  GridSpec geometry;
  std::vector<std::uint8_t> values;
  std::vector<std::uint32_t> hit_count;  // foreground pixels mapped per voxel

  VoxelGrid() = default;
  explicit VoxelGrid(const GridSpec& spec);
  std::uint8_t at(int i, int j, int k) const { return values[geometry.index(i, j, k)]; }
};

struct InsertStats {
  std::size_t inserted = 0;
  std::size_t outside = 0;  // foreground pixels that fell outside the grid
};

/// Maps each foreground pixel (x * spacing, y * spacing, 0) through `pose`
/// to its nearest voxel and sets it to 255.
InsertStats insert_frame(VoxelGrid& grid, const BinaryMask& mask, const RigidTransform& pose, double pixel_spacing);

struct FrameRef {
  const BinaryMask* mask = nullptr;
  RigidTransform pose;  // image-to-world
  double pixel_spacing = 0.2;
};

/// Max-compounds all frames; the result does not depend on frame order.
VoxelGrid reconstruct(std::span<const FrameRef> frames, const GridSpec& spec, InsertStats* stats = nullptr);

/// Bounding box of all frame footprints, padded by `padding` on every face.
GridSpec auto_grid(std::span<const FrameRef> frames, double spacing = 0.5, double padding = 5.0);

struct LabeledComponents {
  GridSpec geometry;
  std::vector<std::int32_t> labels;  // 0 background, 1..n by descending size
  std::vector<std::size_t> counts;   // counts[l - 1] voxels of label l

  std::size_t size() const { return counts.size(); }
  Vec3 centroid(int label) const;
};

/// 26-connected components of voxels >= iso; components smaller than
/// `min_voxels` are dropped.
LabeledComponents threshold_and_label(const VoxelGrid& grid, std::uint8_t iso = 128, std::size_t min_voxels = 100);

/// Iso-surface at 0.5 of the occupancy of `label`, by marching tetrahedra
/// over a six-tetrahedron cube split. The occupancy is first blurred with a
/// Gaussian of `smoothing_sigma` voxels (0 keeps it binary, vertices then sit
/// on edge midpoints and a single voxel encloses spacing^3 / 2). Closed and
/// outward-oriented.
TriangleMesh extract_surface(const LabeledComponents& components, int label, double smoothing_sigma = 1.0);
/// Same, for an arbitrary occupancy over `spec` (1 = inside).
TriangleMesh extract_surface(const GridSpec& spec, std::span<const std::uint8_t> occupancy,
                             double smoothing_sigma = 1.0);

/// MetaImage header (`.mhd`) next to a raw little-endian voxel file.
void write_mhd(const VoxelGrid& grid, const std::filesystem::path& header);
VoxelGrid read_mhd(const std::filesystem::path& header);

}  // namespace usqa

#endif /* USQA_RECONSTRUCTION_HPP */
