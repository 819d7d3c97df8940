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

#include "usqa/shapefit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "usqa/error.hpp"

namespace usqa {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInvalid = 1e10;

struct Spread {
  Vec3 centroid;
  Vec3 values;  // ascending
  Mat3 axes;    // matching columns
};

Spread spread(std::span<const Vec3> points) {
  Spread s;
  s.centroid = Vec3::Zero();
  for (const Vec3& p : points) s.centroid += p;
  s.centroid /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : points) cov += (p - s.centroid) * (p - s.centroid).transpose();
  cov /= static_cast<double>(points.size());
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  s.values = eig.eigenvalues();
  s.axes = eig.eigenvectors();
  return s;
}

void require_points(std::span<const Vec3> points, std::size_t n, const char* what) {
  if (points.size() < n) throw Error(ErrorKind::kInvalidInput, std::string(what) + ": too few points");
  for (const Vec3& p : points) {
    if (!p.allFinite()) throw Error(ErrorKind::kInvalidInput, std::string(what) + ": non-finite point");
  }
}

void require_spread(const Spread& s, const char* what) {
  if (!(s.values[0] > 1e-10 * s.values[2])) {
    throw Error(ErrorKind::kDegenerateConfiguration, std::string(what) + ": points do not span 3D");
  }
}

Mat3 rotation_of(const Vec3& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

Vec3 any_perpendicular(const Vec3& u) {
  const Vec3 t = std::abs(u.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return u.cross(t).normalized();
}

std::vector<Vec3> centred(std::span<const Vec3> points, const Vec3& c) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(p - c);
  return out;
}

FitResult finish(const ShapeSpec& local, const Vec3& offset, const LsqResult& lsq, std::size_t n) {
  FitResult f;
  f.shape = transform_shape(RigidTransform::translation_only(offset), local);
  f.rms_residual = std::sqrt(lsq.cost / static_cast<double>(n));
  f.converged = lsq.converged;
  f.iterations = lsq.iterations;
  f.cost_history = lsq.cost_history;
  return f;
}

template <class MakeShape>
ResidualFn sdf_residuals(const std::vector<Vec3>& pts, MakeShape make) {
  return [&pts, make](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r.resize(static_cast<Eigen::Index>(pts.size()));
    const auto shape = make(x);
    if (!shape) {
      r.setConstant(kInvalid);
      return;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) r[static_cast<Eigen::Index>(i)] = signed_distance(*shape, pts[i]);
  };
}

}  // namespace

FitResult fit_sphere(std::span<const Vec3> points, const LsqOptions& options) {
  require_points(points, 10, "fit_sphere");
  const Spread s = spread(points);
  require_spread(s, "fit_sphere");
  const std::vector<Vec3> pts = centred(points, s.centroid);

  // |p|^2 = 2 c.p + (r^2 - |c|^2)
  Eigen::MatrixXd a(pts.size(), 4);
  Eigen::VectorXd b(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) << 2 * pts[i].x(), 2 * pts[i].y(), 2 * pts[i].z(), 1.0;
    b[static_cast<Eigen::Index>(i)] = pts[i].squaredNorm();
  }
  const Eigen::Vector4d sol = a.completeOrthogonalDecomposition().solve(b);
  Eigen::VectorXd x0(4);
  x0 << sol[0], sol[1], sol[2], std::sqrt(std::max(sol[3] + sol.head<3>().squaredNorm(), 1e-12));

  const ResidualFn res = [&pts](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    r.resize(static_cast<Eigen::Index>(pts.size()));
    const Vec3 c(x[0], x[1], x[2]);
    for (std::size_t i = 0; i < pts.size(); ++i) r[static_cast<Eigen::Index>(i)] = (pts[i] - c).norm() - x[3];
  };
  const LsqResult lsq = gauss_newton(res, x0, options);
  const Sphere fitted{Vec3(lsq.x[0], lsq.x[1], lsq.x[2]), std::abs(lsq.x[3])};
  return finish(fitted, s.centroid, lsq, pts.size());
}

FitResult fit_ellipsoid(std::span<const Vec3> points, const LsqOptions& options) {
  require_points(points, 30, "fit_ellipsoid");
  const Spread s = spread(points);
  require_spread(s, "fit_ellipsoid");
  const std::vector<Vec3> pts = centred(points, s.centroid);
  Mat3 r0;
  r0 << s.axes.col(2), s.axes.col(1), s.axes.col(0);
  if (r0.determinant() < 0) r0.col(2) = -r0.col(2);
  Eigen::VectorXd x0(9);
  x0 << 0, 0, 0, 0, 0, 0, std::sqrt(3 * s.values[2]), std::sqrt(3 * s.values[1]), std::sqrt(3 * s.values[0]);

  auto make = [r0](const Eigen::VectorXd& x) -> std::optional<Ellipsoid> {
    const Vec3 axes(x[6], x[7], x[8]);
    if (!(axes.minCoeff() > 0.0)) return std::nullopt;
    return Ellipsoid{Vec3(x[0], x[1], x[2]), axes, Eigen::Quaterniond(r0 * rotation_of(Vec3(x[3], x[4], x[5])))};
  };
  const LsqResult lsq = gauss_newton(sdf_residuals(pts, make), x0, options);
  Ellipsoid e = *make(lsq.x);

  // Descending semi-axes with the frame permuted to match.
  const Mat3 rot = e.orientation.toRotationMatrix();
  std::array<int, 3> idx{0, 1, 2};
  std::stable_sort(idx.begin(), idx.end(), [&](int p, int q) { return e.semi_axes[p] > e.semi_axes[q]; });
  Mat3 sorted;
  Vec3 axes;
  for (int k = 0; k < 3; ++k) {
    sorted.col(k) = rot.col(idx[k]);
    axes[k] = e.semi_axes[idx[k]];
  }
  if (sorted.determinant() < 0) sorted.col(2) = -sorted.col(2);
  e.semi_axes = axes;
  e.orientation = Eigen::Quaterniond(sorted).normalized();
  return finish(e, s.centroid, lsq, pts.size());
}

FitResult fit_cylinder(std::span<const Vec3> points, const LsqOptions& options) {
  require_points(points, 30, "fit_cylinder");
  const Spread s = spread(points);
  require_spread(s, "fit_cylinder");
  const std::vector<Vec3> pts = centred(points, s.centroid);

  std::optional<FitResult> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int candidate : {0, 2}) {
    const Vec3 u0 = s.axes.col(candidate);
    const Vec3 v1 = any_perpendicular(u0);
    const Vec3 v2 = u0.cross(v1);
    double lo = 1e300, hi = -1e300;
    for (const Vec3& p : pts) {
      lo = std::min(lo, p.dot(u0));
      hi = std::max(hi, p.dot(u0));
    }
    const Vec3 c0 = 0.5 * (lo + hi) * u0;
    double r0 = 0.0;
    for (const Vec3& p : pts) {
      const Vec3 d = p - c0;
      r0 = std::max(r0, (d - d.dot(u0) * u0).norm());
    }
    Eigen::VectorXd x0(7);
    x0 << c0.x(), c0.y(), c0.z(), 0, 0, r0, hi - lo;
    auto make = [u0, v1, v2](const Eigen::VectorXd& x) -> std::optional<Cylinder> {
      if (!(x[5] > 0.0 && x[6] > 0.0)) return std::nullopt;
      return Cylinder{Vec3(x[0], x[1], x[2]), (u0 + x[3] * v1 + x[4] * v2).normalized(), x[5], x[6]};
    };
    const LsqResult lsq = gauss_newton(sdf_residuals(pts, make), x0, options);
    if (lsq.cost < best_cost) {
      best_cost = lsq.cost;
      best = finish(*make(lsq.x), s.centroid, lsq, pts.size());
    }
  }
  return *best;
}

namespace {

TriPrism prism_from(const Vec3& c, const Mat3& frame, double edge, double height) {
  return TriPrism{edge, height, RigidTransform::from_matrix(frame, c)};
}

// Frame with local z = w and local y at angle theta in the (u, v) plane.
Mat3 prism_frame(const Vec3& w, const Vec3& u, const Vec3& v, double theta) {
  Mat3 f;
  f.col(1) = std::cos(theta) * u + std::sin(theta) * v;
  f.col(2) = w;
  f.col(0) = f.col(1).cross(w);
  return f;
}

}  // namespace

FitResult fit_triprism(std::span<const Vec3> points, const LsqOptions& options) {
  require_points(points, 50, "fit_triprism");
  const Spread s = spread(points);
  require_spread(s, "fit_triprism");
  const std::vector<Vec3> pts = centred(points, s.centroid);

  std::optional<FitResult> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int candidate : {2, 0, 1}) {
    const Vec3 w = s.axes.col(candidate);
    const Vec3 u = any_perpendicular(w);
    const Vec3 v = w.cross(u);
    double lo = 1e300, hi = -1e300;
    for (const Vec3& p : pts) {
      lo = std::min(lo, p.dot(w));
      hi = std::max(hi, p.dot(w));
    }
    const double mid = 0.5 * (lo + hi), h0 = hi - lo;

    // Side points away from the caps, projected to the cross-section plane.
    std::vector<Vec3> side;
    for (const Vec3& p : pts) {
      if (std::abs(p.dot(w) - mid) < 0.4 * h0) side.push_back(Vec3(p.dot(u), p.dot(v), 0.0));
    }
    if (side.size() < 10) continue;
    Vec3 c2 = Vec3::Zero();
    for (const Vec3& q : side) c2 += q;
    c2 /= static_cast<double>(side.size());
    const Spread plane = spread(side);
    if (!(plane.values[1] > 1e-10 * plane.values[2])) continue;
    double rmax = 0.0;
    for (const Vec3& q : side) rmax = std::max(rmax, (q - c2).norm());

    // Cross section: a long prism evaluated in its mid-plane is the 2D triangle distance.
    const double tall = 1e6;
    auto make2d = [&](const Eigen::VectorXd& x) -> std::optional<TriPrism> {
      if (!(x[3] > 0.0)) return std::nullopt;
      return prism_from(Vec3(x[0], x[1], 0.0), prism_frame(Vec3::UnitZ(), Vec3::UnitX(), Vec3::UnitY(), x[2]), x[3], tall);
    };
    const ResidualFn res2d = sdf_residuals(side, make2d);
    Eigen::VectorXd x2(4);
    x2 << c2.x(), c2.y(), 0.0, rmax * std::sqrt(3.0);
    double seed_cost = std::numeric_limits<double>::infinity();
    Eigen::VectorXd r;
    for (int step = 0; step < 60; ++step) {
      Eigen::VectorXd trial = x2;
      trial[2] = step * (2.0 * kPi / 3.0) / 60.0;
      res2d(trial, r);
      if (r.squaredNorm() < seed_cost) {
        seed_cost = r.squaredNorm();
        x2 = trial;
      }
    }
    const LsqResult fit2d = gauss_newton(res2d, x2, options);
    x2 = fit2d.x;

    const Vec3 c0 = x2[0] * u + x2[1] * v + mid * w;
    const Mat3 f0 = prism_frame(w, u, v, x2[2]);
    Eigen::VectorXd x0(8);
    x0 << c0.x(), c0.y(), c0.z(), 0, 0, 0, x2[3], h0;
    auto make = [f0](const Eigen::VectorXd& x) -> std::optional<TriPrism> {
      if (!(x[6] > 0.0 && x[7] > 0.0)) return std::nullopt;
      return prism_from(Vec3(x[0], x[1], x[2]), f0 * rotation_of(Vec3(x[3], x[4], x[5])), x[6], x[7]);
    };
    const LsqResult lsq = gauss_newton(sdf_residuals(pts, make), x0, options);
    if (lsq.cost < best_cost) {
      best_cost = lsq.cost;
      best = finish(*make(lsq.x), s.centroid, lsq, pts.size());
    }
  }
  if (!best) throw Error(ErrorKind::kDegenerateConfiguration, "fit_triprism: degenerate cross-section");
  return *best;
}

FitResult fit_like(const ShapeSpec& like, std::span<const Vec3> points, const LsqOptions& options) {
  return std::visit(
      [&](const auto& s) -> FitResult {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) return fit_sphere(points, options);
        if constexpr (std::is_same_v<T, Ellipsoid>) return fit_ellipsoid(points, options);
        if constexpr (std::is_same_v<T, Cylinder>) return fit_cylinder(points, options);
        if constexpr (std::is_same_v<T, TriPrism>) return fit_triprism(points, options);
      },
      like);
}

}  // namespace usqa
