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

#ifndef USQA_SHAPEFIT_HPP
#define USQA_SHAPEFIT_HPP

#include <span>
#include <vector>

#include "usqa/optimize.hpp"
#include "usqa/phantom.hpp"

namespace usqa {

struct FitResult {
  ShapeSpec shape;
  double rms_residual = 0.0;  // mm, point-to-surface
  bool converged = false;
  int iterations = 0;
  std::vector<double> cost_history;
};

/// Algebraic initialisation, then geometric refinement of |p - c| - r.
FitResult fit_sphere(std::span<const Vec3> points, const LsqOptions& options = {});
/// Covariance initialisation, then foot-point distances. Semi-axes are
/// returned in descending order.
FitResult fit_ellipsoid(std::span<const Vec3> points, const LsqOptions& options = {});
/// Tries the smallest- and largest-spread covariance axes as the initial
/// cylinder axis and keeps the better fit.
FitResult fit_cylinder(std::span<const Vec3> points, const LsqOptions& options = {});
/// Axis from covariance, equilateral cross-section fitted in the axis-normal
/// plane to the side points, then a joint fit of all seven parameters.
FitResult fit_triprism(std::span<const Vec3> points, const LsqOptions& options = {});

/// Fits a model of the same kind as `like`.
FitResult fit_like(const ShapeSpec& like, std::span<const Vec3> points, const LsqOptions& options = {});

}  // namespace usqa

#endif /* USQA_SHAPEFIT_HPP */
