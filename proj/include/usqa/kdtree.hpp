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

#ifndef USQA_KDTREE_HPP
#define USQA_KDTREE_HPP

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace usqa {

/**
 * Static 3D k-d tree for exact nearest-neighbour queries.
 *
 * Squared distances are evaluated as dx*dx + dy*dy + dz*dz in that order so
 * results are bitwise identical to a brute-force scan using the same formula.
 */
class KdTree {
 public:
  struct Hit {
    std::size_t index = 0;
    double squared_distance = 0.0;
  };

  KdTree() = default;
  explicit KdTree(std::span<const Eigen::Vector3d> points);

  bool empty() const { return points_.empty(); }
  std::size_t size() const { return points_.size(); }
  const Eigen::Vector3d& point(std::size_t i) const { return points_[i]; }

  /// Nearest stored point to `query`. Tree must be non-empty.
  Hit nearest(const Eigen::Vector3d& query) const;

 private:
  struct Node {
    // Leaf when left < 0; then [begin, end) indexes into order_.
    int left = -1;
    int right = -1;
    int axis = 0;
    double split = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
  };

  int build(std::size_t begin, std::size_t end);
  void search(int node, const Eigen::Vector3d& q, Hit& best) const;

  std::vector<Eigen::Vector3d> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

inline double squared_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace usqa

#endif /* USQA_KDTREE_HPP */
