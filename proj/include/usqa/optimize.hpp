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

#ifndef USQA_OPTIMIZE_HPP
#define USQA_OPTIMIZE_HPP

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace usqa {

/// Fills the residual vector for parameters `x`.
using ResidualFn = std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r)>;
using CostFn = std::function<double(const Eigen::VectorXd& x)>;

struct LsqOptions {
  int max_iterations = 500;
  double relative_step_tolerance = 1e-8;
  int max_backtracks = 40;
};

struct LsqResult {
  Eigen::VectorXd x;
  double cost = 0.0;  // sum of squared residuals
  int iterations = 0;
  bool converged = false;
  bool used_fallback = false;
  std::vector<double> cost_history;  // accepted iterates, non-increasing
};

/// Gauss-Newton with a central-difference Jacobian, minimum-norm steps and
/// backtracking. When the Jacobian is rank deficient and no step reduces the
/// cost, continues with Nelder-Mead from the current point.
LsqResult gauss_newton(const ResidualFn& residuals, const Eigen::VectorXd& x0, const LsqOptions& options = {});

/// Nelder-Mead simplex; `step` sets the initial simplex edge per coordinate.
LsqResult nelder_mead(const CostFn& cost, const Eigen::VectorXd& x0, const Eigen::VectorXd& step,
                      int max_evaluations = 20000, double tolerance = 1e-15);

}  // namespace usqa

#endif /* USQA_OPTIMIZE_HPP */
