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

#ifndef USQA_DESCRIPTORS_HPP
#define USQA_DESCRIPTORS_HPP

#include <array>
#include <cmath>
#include <numbers>

#include "usqa/geometry.hpp"

namespace usqa {

/**
 * Shape descriptors shared by the analytic phantom and reconstructed
 * components.
 *
 * Conventions: principal values are covariance eigenvalues of the solid
 * (mm^2) sorted descending; elongation = sqrt(l1/l2), flatness =
 * sqrt(l2/l3), roundness is sphericity (36 pi V^2)^(1/3) / A.
 */
struct DescriptorRecord {
  double volume = 0.0;        // mm^3
  double surface_area = 0.0;  // mm^2
  Vec3 centroid = Vec3::Zero();
  double feret_max = 0.0;  // mm
  double roundness = 0.0;
  double flatness = 0.0;
  double elongation = 0.0;
  std::array<Vec3, 3> principal_axes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  Vec3 principal_values = Vec3::Zero();  // mm^2
};

inline double sphericity(double volume, double area) {
  return std::cbrt(36.0 * std::numbers::pi * volume * volume) / area;
}

}  // namespace usqa

#endif /* USQA_DESCRIPTORS_HPP */
