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

#include "usqa/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/QR>

namespace usqa {

namespace {

double sum_sq(const Eigen::VectorXd& r) {
  const double c = r.squaredNorm();
  return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
}

}  // namespace

LsqResult gauss_newton(const ResidualFn& residuals, const Eigen::VectorXd& x0, const LsqOptions& options) {
  const Eigen::Index n = x0.size();
  LsqResult out;
  out.x = x0;
  Eigen::VectorXd r;
  residuals(out.x, r);
  out.cost = sum_sq(r);
  out.cost_history.push_back(out.cost);
  Eigen::MatrixXd jac(r.size(), n);
  Eigen::VectorXd rp, rm, trial_r;
  bool rank_deficient = false;
  for (out.iterations = 0; out.iterations < options.max_iterations; ++out.iterations) {
    if (out.cost == 0.0) {
      out.converged = true;
      break;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(out.x[j]));
      Eigen::VectorXd xp = out.x, xm = out.x;
      xp[j] += h;
      xm[j] -= h;
      residuals(xp, rp);
      residuals(xm, rm);
      jac.col(j) = (rp - rm) / (xp[j] - xm[j]);
    }
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jac);
    rank_deficient = cod.rank() < n;
    const Eigen::VectorXd step = cod.solve(-r);
    if (!step.allFinite()) break;

    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    for (int b = 0; b < options.max_backtracks; ++b, alpha *= 0.5) {
      trial = out.x + alpha * step;
      residuals(trial, trial_r);
      const double c = sum_sq(trial_r);
      if (c < out.cost) {
        accepted = true;
        out.cost = c;
        break;
      }
    }
    const double scale = std::max(out.x.norm(), 1e-12);
    if (!accepted) {
      out.converged = step.norm() <= options.relative_step_tolerance * scale;
      break;
    }
    const double change = (trial - out.x).norm();
    out.x = trial;
    r = trial_r;
    out.cost_history.push_back(out.cost);
    if (change <= options.relative_step_tolerance * scale) {
      out.converged = true;
      ++out.iterations;
      break;
    }
  }

  if (!out.converged && rank_deficient) {
    const ResidualFn& f = residuals;
    Eigen::VectorXd step = (out.x.cwiseAbs() * 0.05).cwiseMax(1e-3);
    LsqResult nm = nelder_mead(
        [&f](const Eigen::VectorXd& x) {
          Eigen::VectorXd rr;
          f(x, rr);
          return sum_sq(rr);
        },
        out.x, step);
    if (nm.cost < out.cost) {
      out.x = nm.x;
      out.cost = nm.cost;
      out.cost_history.push_back(out.cost);
    }
    out.iterations += nm.iterations;
    out.converged = nm.converged;
    out.used_fallback = true;
  }
  return out;
}

LsqResult nelder_mead(const CostFn& cost, const Eigen::VectorXd& x0, const Eigen::VectorXd& step, int max_evaluations,
                      double tolerance) {
  const Eigen::Index n = x0.size();
  std::vector<Eigen::VectorXd> simplex(n + 1, x0);
  std::vector<double> values(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) simplex[i + 1][i] += step[i];
  int evals = 0;
  for (Eigen::Index i = 0; i <= n; ++i) {
    values[i] = cost(simplex[i]);
    ++evals;
  }
  LsqResult out;
  std::vector<Eigen::Index> order(n + 1);
  while (evals < max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values[a] < values[b]; });
    const Eigen::Index best = order.front(), worst = order.back(), second = order[n - 1];
    if (out.cost_history.empty() || values[best] < out.cost_history.back()) out.cost_history.push_back(values[best]);
    if (std::abs(values[worst] - values[best]) <= tolerance * (std::abs(values[best]) + tolerance)) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i <= n; ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= static_cast<double>(n);
    const Eigen::VectorXd reflected = centroid + (centroid - simplex[worst]);
    const double fr = cost(reflected);
    ++evals;
    if (fr < values[best]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = cost(expanded);
      ++evals;
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
    } else if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
    } else {
      const bool outside = fr < values[worst];
      const Eigen::VectorXd contracted =
          outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                  : Eigen::VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
      const double fc = cost(contracted);
      ++evals;
      if (fc < std::min(fr, values[worst])) {
        simplex[worst] = contracted;
        values[worst] = fc;
      } else {
        for (Eigen::Index i = 0; i <= n; ++i) {
          if (i == best) continue;
          simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
          values[i] = cost(simplex[i]);
          ++evals;
        }
      }
    }
    ++out.iterations;
  }
  const auto best = std::min_element(values.begin(), values.end()) - values.begin();
  out.x = simplex[best];
  out.cost = values[best];
  return out;
}

}  // namespace usqa
