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

#include "usqa/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "usqa/error.hpp"

namespace usqa {
namespace {

constexpr double kPi = std::numbers::pi;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kInvalidInput, what);
}

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }

Vec3 any_perpendicular(const Vec3& axis) {
  const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return axis.cross(helper).normalized();
}

// Combines a 2D cross-section distance with an axial slab distance; exact for
// extrusions.
double extrude(double d2, double dz) {
  const double outside = std::hypot(std::max(d2, 0.0), std::max(dz, 0.0));
  return std::min(std::max(d2, dz), 0.0) + outside;
}

std::array<Eigen::Vector2d, 3> triangle_2d(double edge) {
  const double r = edge / std::sqrt(3.0);
  return {Eigen::Vector2d(0.0, r), Eigen::Vector2d(-r * std::sqrt(3.0) / 2.0, -r / 2.0),
          Eigen::Vector2d(r * std::sqrt(3.0) / 2.0, -r / 2.0)};
}

double triangle_sdf(const std::array<Eigen::Vector2d, 3>& v, const Eigen::Vector2d& p) {
  double max_plane = -std::numeric_limits<double>::infinity();
  double min_seg = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector2d a = v[i];
    const Eigen::Vector2d e = v[(i + 1) % 3] - a;
    const Eigen::Vector2d n = Eigen::Vector2d(e.y(), -e.x()).normalized();
    max_plane = std::max(max_plane, n.dot(p - a));
    const double s = std::clamp((p - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    min_seg = std::min(min_seg, (p - a - s * e).norm());
  }
  return max_plane <= 0.0 ? max_plane : min_seg;
}

// Root of sum_i (r_i z_i / (s + r_i))^2 = 1 with r_last = 1, bracketed by
// [z_last - 1, |r z| - 1] (outside) or [z_last - 1, 0] (inside). The function
// is convex and decreasing there, so Newton from the left end is monotone;
// bisection guards against round-off.
double ellipsoid_root(const double* r, const double* z, int n, double g0) {
  double lo = z[n - 1] - 1.0;
  double hi = 0.0;
  if (g0 > 0.0) {
    double len = 0.0;
    for (int i = 0; i < n; ++i) len += (r[i] * z[i]) * (r[i] * z[i]);
    hi = std::sqrt(len) - 1.0;
  }
  double s = lo;
  for (int it = 0; it < 200; ++it) {
    double g = -1.0;
    double dg = 0.0;
    for (int i = 0; i < n; ++i) {
      const double q = r[i] * z[i] / (s + r[i]);
      g += q * q;
      dg -= 2.0 * q * q / (s + r[i]);
    }
    if (!std::isfinite(g)) {
      lo = s;
      s = 0.5 * (lo + hi);
      continue;
    }
    if (g > 0.0) {
      lo = s;
    } else if (g < 0.0) {
      hi = s;
    } else {
      break;
    }
    double next = dg < 0.0 ? s - g / dg : 0.5 * (lo + hi);
    if (!(next >= lo && next <= hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - s) <= 4e-16 * std::max(1.0, std::abs(s))) return next;
    s = next;
  }
  return s;
}

// Closest point on an ellipse with e0 >= e1 to (y0, y1), y >= 0.
void ellipse_foot(double e0, double e1, double y0, double y1, double& x0, double& x1) {
  if (y1 > 0.0) {
    if (y0 > 0.0) {
      const double z[2] = {y0 / e0, y1 / e1};
      const double g = z[0] * z[0] + z[1] * z[1] - 1.0;
      if (g != 0.0) {
        const double r[2] = {(e0 / e1) * (e0 / e1), 1.0};
        const double s = ellipsoid_root(r, z, 2, g);
        x0 = r[0] * y0 / (s + r[0]);
        x1 = y1 / (s + 1.0);
      } else {
        x0 = y0;
        x1 = y1;
      }
    } else {
      x0 = 0.0;
      x1 = e1;
    }
    return;
  }
  const double numer0 = e0 * y0;
  const double denom0 = e0 * e0 - e1 * e1;
  if (numer0 < denom0) {
    const double xde0 = numer0 / denom0;
    x0 = e0 * xde0;
    x1 = e1 * std::sqrt(std::max(0.0, 1.0 - xde0 * xde0));
  } else {
    x0 = e0;
    x1 = 0.0;
  }
}

// Closest point on an ellipsoid with e0 >= e1 >= e2 to y >= 0.
Vec3 ellipsoid_foot(const double e[3], const double y[3]) {
  double x[3] = {0.0, 0.0, 0.0};
  if (y[2] > 0.0) {
    if (y[1] > 0.0) {
      if (y[0] > 0.0) {
        const double z[3] = {y[0] / e[0], y[1] / e[1], y[2] / e[2]};
        const double g = z[0] * z[0] + z[1] * z[1] + z[2] * z[2] - 1.0;
        if (g != 0.0) {
          const double r[3] = {(e[0] / e[2]) * (e[0] / e[2]), (e[1] / e[2]) * (e[1] / e[2]), 1.0};
          const double s = ellipsoid_root(r, z, 3, g);
          x[0] = r[0] * y[0] / (s + r[0]);
          x[1] = r[1] * y[1] / (s + r[1]);
          x[2] = y[2] / (s + 1.0);
        } else {
          x[0] = y[0];
          x[1] = y[1];
          x[2] = y[2];
        }
      } else {
        ellipse_foot(e[1], e[2], y[1], y[2], x[1], x[2]);
      }
    } else if (y[0] > 0.0) {
      ellipse_foot(e[0], e[2], y[0], y[2], x[0], x[2]);
    } else {
      x[2] = e[2];
    }
    return {x[0], x[1], x[2]};
  }
  const double denom0 = e[0] * e[0] - e[2] * e[2];
  const double denom1 = e[1] * e[1] - e[2] * e[2];
  const double numer0 = e[0] * y[0];
  const double numer1 = e[1] * y[1];
  if (numer0 < denom0 && numer1 < denom1 && denom1 > 0.0) {
    const double xde0 = numer0 / denom0;
    const double xde1 = numer1 / denom1;
    const double discr = 1.0 - xde0 * xde0 - xde1 * xde1;
    if (discr > 0.0) return {e[0] * xde0, e[1] * xde1, e[2] * std::sqrt(discr)};
  }
  ellipse_foot(e[0], e[1], y[0], y[1], x[0], x[1]);
  return {x[0], x[1], 0.0};
}

// Mesh generation -------------------------------------------------------------

// Weighted point between corners a and b, evaluated in corner-id order so
// faces sharing an edge produce bit-identical points.
Vec3 edge_point(const Vec3& pa, int ida, const Vec3& pb, int idb, int wa, int n) {
  if (wa == n) return pa;
  if (wa == 0) return pb;
  if (ida < idb) return (double(wa) * pa + double(n - wa) * pb) / double(n);
  return (double(n - wa) * pb + double(wa) * pa) / double(n);
}

using PointMap = std::function<Vec3(const Vec3&)>;

void subdivided_triangle(MeshBuilder& builder, const std::array<Vec3, 3>& p, const std::array<int, 3>& id, int f,
                         const PointMap& map) {
  // Lattice point (i, j) has weights (i, j, f - i - j) on corners (0, 1, 2).
  std::vector<std::vector<std::uint32_t>> idx(f + 1);
  for (int i = 0; i <= f; ++i) {
    idx[i].resize(f + 1 - i);
    for (int j = 0; j <= f - i; ++j) {
      const int k = f - i - j;
      Vec3 q;
      if (k == 0) {
        q = edge_point(p[0], id[0], p[1], id[1], i, f);
      } else if (j == 0) {
        q = edge_point(p[0], id[0], p[2], id[2], i, f);
      } else if (i == 0) {
        q = edge_point(p[1], id[1], p[2], id[2], j, f);
      } else {
        q = (double(i) * p[0] + double(j) * p[1] + double(k) * p[2]) / double(f);
      }
      idx[i][j] = builder.vertex(map(q));
    }
  }
  for (int i = 0; i < f; ++i) {
    for (int j = 0; j < f - i; ++j) {
      builder.triangle(idx[i][j], idx[i + 1][j], idx[i][j + 1]);
      if (j + 1 < f - i) builder.triangle(idx[i + 1][j], idx[i + 1][j + 1], idx[i][j + 1]);
    }
  }
}

TriangleMesh icosphere_mesh(int f, const PointMap& from_unit) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::array<Vec3, 12> v = {Vec3(-1, phi, 0), Vec3(1, phi, 0), Vec3(-1, -phi, 0), Vec3(1, -phi, 0),
                            Vec3(0, -1, phi), Vec3(0, 1, phi), Vec3(0, -1, -phi), Vec3(0, 1, -phi),
                            Vec3(phi, 0, -1), Vec3(phi, 0, 1), Vec3(-phi, 0, -1), Vec3(-phi, 0, 1)};
  for (auto& p : v) p.normalize();
  const int faces[20][3] = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
                            {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
                            {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  MeshBuilder builder;
  const PointMap map = [&](const Vec3& q) { return from_unit(q.normalized()); };
  for (const auto& face : faces) {
    std::array<int, 3> id = {face[0], face[1], face[2]};
    if ((v[id[1]] - v[id[0]]).cross(v[id[2]] - v[id[0]]).dot(v[id[0]] + v[id[1]] + v[id[2]]) < 0.0) {
      std::swap(id[1], id[2]);
    }
    subdivided_triangle(builder, {v[id[0]], v[id[1]], v[id[2]]}, id, f, map);
  }
  return builder.take();
}

TriangleMesh cylinder_mesh(const Cylinder& c, double e) {
  const Vec3 axis = c.axis.normalized();
  const Vec3 u = any_perpendicular(axis);
  const Vec3 v = axis.cross(u);
  const int nt = std::max(12, static_cast<int>(std::ceil(2.0 * kPi * c.radius / e)));
  const int nh = std::max(1, static_cast<int>(std::ceil(c.height / e)));
  const int nr = std::max(1, static_cast<int>(std::ceil(c.radius / e)));
  MeshBuilder builder;
  auto point = [&](int m, int k, double z) {
    if (m == 0) return Vec3(c.center + z * axis);
    const double rho = c.radius * (m == nr ? 1.0 : double(m) / double(nr));
    const double th = 2.0 * kPi * double(k % nt) / double(nt);
    return Vec3(c.center + z * axis + rho * (std::cos(th) * u + std::sin(th) * v));
  };
  auto axial = [&](int j) { return c.height * (double(j) / double(nh) - 0.5); };
  for (int j = 0; j < nh; ++j) {
    for (int k = 0; k < nt; ++k) {
      const Vec3 a = point(nr, k, axial(j));
      const Vec3 b = point(nr, k + 1, axial(j));
      const Vec3 cc = point(nr, k + 1, axial(j + 1));
      const Vec3 d = point(nr, k, axial(j + 1));
      builder.triangle(a, b, cc);
      builder.triangle(a, cc, d);
    }
  }
  for (int side = 0; side < 2; ++side) {
    const double z = side == 0 ? axial(nh) : axial(0);
    for (int m = 1; m <= nr; ++m) {
      for (int k = 0; k < nt; ++k) {
        const Vec3 a = point(m - 1, k, z);
        const Vec3 b = point(m, k, z);
        const Vec3 cc = point(m, k + 1, z);
        const Vec3 d = point(m - 1, k + 1, z);
        if (side == 0) {
          if (m == 1) {
            builder.triangle(a, b, cc);
          } else {
            builder.triangle(a, b, cc);
            builder.triangle(a, cc, d);
          }
        } else {
          if (m == 1) {
            builder.triangle(a, cc, b);
          } else {
            builder.triangle(a, cc, b);
            builder.triangle(a, d, cc);
          }
        }
      }
    }
  }
  return builder.take();
}

TriangleMesh prism_mesh(const TriPrism& prism, double e) {
  const auto tri = triangle_2d(prism.edge_length);
  std::array<Vec3, 3> base;
  for (int i = 0; i < 3; ++i) base[i] = Vec3(tri[i].x(), tri[i].y(), 0.0);
  const int nl = std::max(1, static_cast<int>(std::ceil(prism.edge_length / e)));
  const int nh = std::max(1, static_cast<int>(std::ceil(prism.height / e)));
  const double h = prism.height;
  MeshBuilder builder;
  auto at = [&](const Vec3& q, double z) { return prism.pose.apply(Vec3(q.x(), q.y(), z)); };
  subdivided_triangle(builder, {base[0], base[1], base[2]}, {0, 1, 2}, nl,
                      [&](const Vec3& q) { return at(q, 0.5 * h); });
  subdivided_triangle(builder, {base[0], base[2], base[1]}, {0, 2, 1}, nl,
                      [&](const Vec3& q) { return at(q, -0.5 * h); });
  for (int i = 0; i < 3; ++i) {
    const int jv = (i + 1) % 3;
    std::vector<std::vector<std::uint32_t>> idx(nl + 1, std::vector<std::uint32_t>(nh + 1));
    for (int a = 0; a <= nl; ++a) {
      const Vec3 q = edge_point(base[i], i, base[jv], jv, nl - a, nl);
      for (int b = 0; b <= nh; ++b) {
        const double z = b == 0 ? -0.5 * h : (b == nh ? 0.5 * h : h * (double(b) / double(nh) - 0.5));
        idx[a][b] = builder.vertex(at(q, z));
      }
    }
    for (int a = 0; a < nl; ++a) {
      for (int b = 0; b < nh; ++b) {
        builder.triangle(idx[a][b], idx[a + 1][b], idx[a + 1][b + 1]);
        builder.triangle(idx[a][b], idx[a + 1][b + 1], idx[a][b + 1]);
      }
    }
  }
  return builder.take();
}

// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double t = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = t;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (t * p1 - p0) / (t * t - 1.0);
      const double dt = p1 / dp;
      t -= dt;
      if (std::abs(dt) < 1e-15) break;
    }
    x[i] = t;
    w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
  }
}

double ellipsoid_area(const Vec3& s) {
  const double a = s.x();
  const double b = s.y();
  const double c = s.z();
  std::vector<double> x;
  std::vector<double> w;
  gauss_legendre(96, x, w);
  const int nphi = 256;
  double total = 0.0;
  for (int i = 0; i < 96; ++i) {
    const double th = 0.5 * kPi * (x[i] + 1.0);
    const double st = std::sin(th);
    const double ct = std::cos(th);
    double ring = 0.0;
    for (int k = 0; k < nphi; ++k) {
      const double ph = 2.0 * kPi * k / nphi;
      const double cp = std::cos(ph);
      const double sp = std::sin(ph);
      ring += st * std::sqrt(b * b * c * c * st * st * cp * cp + a * a * c * c * st * st * sp * sp +
                             a * a * b * b * ct * ct);
    }
    total += w[i] * ring * (2.0 * kPi / nphi);
  }
  return total * 0.5 * kPi;
}

DescriptorRecord finish(double volume, double area, const Vec3& centroid, double feret, const Mat3& axes,
                        const Vec3& values) {
  // Sort moments descending, carrying the axes along.
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return values[i] > values[j]; });
  DescriptorRecord d;
  d.volume = volume;
  d.surface_area = area;
  d.centroid = centroid;
  d.feret_max = feret;
  d.roundness = sphericity(volume, area);
  for (int k = 0; k < 3; ++k) {
    d.principal_values[k] = values[order[k]];
    d.principal_axes[k] = axes.col(order[k]);
  }
  d.elongation = std::sqrt(d.principal_values[0] / d.principal_values[1]);
  d.flatness = std::sqrt(d.principal_values[1] / d.principal_values[2]);
  return d;
}

std::vector<double> vec_from(const nlohmann::json& j, std::size_t n, const char* key) {
  require(j.contains(key) && j.at(key).is_array() && j.at(key).size() == n, std::string("missing array ") + key);
  std::vector<double> out;
  for (const auto& e : j.at(key)) {
    require(e.is_number(), std::string("non-numeric entry in ") + key);
    out.push_back(e.get<double>());
  }
  return out;
}

Vec3 vec3_from(const nlohmann::json& j, const char* key) {
  const auto v = vec_from(j, 3, key);
  return {v[0], v[1], v[2]};
}

Eigen::Quaterniond quat_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return Eigen::Quaterniond::Identity();
  const auto v = vec_from(j, 4, key);
  Eigen::Quaterniond q(v[0], v[1], v[2], v[3]);
  require(q.norm() > 0.0, "zero quaternion");
  return q.normalized();
}

double number_from(const nlohmann::json& j, const char* key) {
  require(j.contains(key) && j.at(key).is_number(), std::string("missing number ") + key);
  return j.at(key).get<double>();
}

nlohmann::json arr(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
nlohmann::json arr(const Eigen::Quaterniond& q) { return {q.w(), q.x(), q.y(), q.z()}; }

}  // namespace

std::string shape_tag(const ShapeSpec& shape) {
  return std::visit(Overloaded{[](const Sphere&) { return std::string("sphere"); },
                               [](const Ellipsoid&) { return std::string("ellipsoid"); },
                               [](const Cylinder&) { return std::string("cylinder"); },
                               [](const TriPrism&) { return std::string("triprism"); }},
                    shape);
}

void validate(const ShapeSpec& shape) {
  std::visit(Overloaded{[](const Sphere& s) {
                          require(s.center.allFinite(), "sphere: non-finite center");
                          require(positive_finite(s.radius), "sphere: radius must be positive");
                        },
                        [](const Ellipsoid& e) {
                          require(e.center.allFinite(), "ellipsoid: non-finite center");
                          for (int i = 0; i < 3; ++i) {
                            require(positive_finite(e.semi_axes[i]), "ellipsoid: semi-axes must be positive");
                          }
                          require(std::isfinite(e.orientation.norm()) && e.orientation.norm() > 0.0,
                                  "ellipsoid: invalid orientation");
                        },
                        [](const Cylinder& c) {
                          require(c.center.allFinite(), "cylinder: non-finite center");
                          require(c.axis.allFinite() && c.axis.norm() > 0.0, "cylinder: invalid axis");
                          require(positive_finite(c.radius), "cylinder: radius must be positive");
                          require(positive_finite(c.height), "cylinder: height must be positive");
                        },
                        [](const TriPrism& p) {
                          require(positive_finite(p.edge_length), "triprism: edge length must be positive");
                          require(positive_finite(p.height), "triprism: height must be positive");
                        }},
             shape);
}

Vec3 ellipsoid_closest_point(const Vec3& semi_axes, const Vec3& p) {
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return semi_axes[i] > semi_axes[j]; });
  double e[3];
  double y[3];
  for (int k = 0; k < 3; ++k) {
    e[k] = semi_axes[order[k]];
    y[k] = std::abs(p[order[k]]);
    // Components below round-off of the axis are on the symmetry plane.
    if (y[k] < 1e-13 * e[k]) y[k] = 0.0;
  }
  const Vec3 x = ellipsoid_foot(e, y);
  Vec3 out;
  for (int k = 0; k < 3; ++k) out[order[k]] = std::copysign(x[k], p[order[k]]);
  return out;
}

double signed_distance(const ShapeSpec& shape, const Vec3& p) {
  return std::visit(
      Overloaded{[&](const Sphere& s) { return (p - s.center).norm() - s.radius; },
                 [&](const Ellipsoid& e) {
                   const Vec3 q = e.orientation.conjugate() * (p - e.center);
                   const double level = q.cwiseQuotient(e.semi_axes).squaredNorm() - 1.0;
                   const double d = (q - ellipsoid_closest_point(e.semi_axes, q)).norm();
                   return level < 0.0 ? -d : d;
                 },
                 [&](const Cylinder& c) {
                   const Vec3 axis = c.axis.normalized();
                   const Vec3 r = p - c.center;
                   const double a = r.dot(axis);
                   const double rho = (r - a * axis).norm();
                   return extrude(rho - c.radius, std::abs(a) - 0.5 * c.height);
                 },
                 [&](const TriPrism& t) {
                   const Vec3 q = invert(t.pose).apply(p);
                   const double d2 = triangle_sdf(triangle_2d(t.edge_length), q.head<2>());
                   return extrude(d2, std::abs(q.z()) - 0.5 * t.height);
                 }},
      shape);
}

bool contains(const ShapeSpec& shape, const Vec3& p) {
  return std::visit(Overloaded{[&](const Sphere& s) { return (p - s.center).squaredNorm() < s.radius * s.radius; },
                               [&](const Ellipsoid& e) {
                                 const Vec3 q = e.orientation.conjugate() * (p - e.center);
                                 return q.cwiseQuotient(e.semi_axes).squaredNorm() < 1.0;
                               },
                               [&](const Cylinder& c) {
                                 const Vec3 axis = c.axis.normalized();
                                 const Vec3 r = p - c.center;
                                 const double a = r.dot(axis);
                                 return std::abs(a) < 0.5 * c.height && (r - a * axis).squaredNorm() < c.radius * c.radius;
                               },
                               [&](const TriPrism& t) {
                                 const Vec3 q = t.pose.rotation().conjugate() * (p - t.pose.translation());
                                 if (!(std::abs(q.z()) < 0.5 * t.height)) return false;
                                 // Inradius is edge / (2 sqrt 3); edge normals point at 270, 30, 150 degrees.
                                 const double rin = t.edge_length / (2.0 * std::sqrt(3.0));
                                 const double c30 = std::sqrt(3.0) / 2.0;
                                 return -q.y() < rin && c30 * q.x() + 0.5 * q.y() < rin &&
                                        -c30 * q.x() + 0.5 * q.y() < rin;
                               }},
                    shape);
}

std::array<Vec3, 6> prism_vertices(const TriPrism& prism) {
  const auto tri = triangle_2d(prism.edge_length);
  std::array<Vec3, 6> out;
  for (int i = 0; i < 3; ++i) {
    out[i] = prism.pose.apply(Vec3(tri[i].x(), tri[i].y(), -0.5 * prism.height));
    out[i + 3] = prism.pose.apply(Vec3(tri[i].x(), tri[i].y(), 0.5 * prism.height));
  }
  return out;
}

Aabb bounds(const ShapeSpec& shape) {
  return std::visit(Overloaded{[](const Sphere& s) {
                                 return Aabb{s.center.array() - s.radius, s.center.array() + s.radius};
                               },
                               [](const Ellipsoid& e) {
                                 const Mat3 m = e.orientation.normalized().toRotationMatrix() *
                                                e.semi_axes.asDiagonal();
                                 const Vec3 half = m.rowwise().norm();
                                 return Aabb{e.center - half, e.center + half};
                               },
                               [](const Cylinder& c) {
                                 const Vec3 a = c.axis.normalized();
                                 Vec3 half;
                                 for (int i = 0; i < 3; ++i) {
                                   half[i] = std::abs(a[i]) * 0.5 * c.height +
                                             c.radius * std::sqrt(std::max(0.0, 1.0 - a[i] * a[i]));
                                 }
                                 return Aabb{c.center - half, c.center + half};
                               },
                               [](const TriPrism& t) {
                                 Aabb box;
                                 for (const auto& v : prism_vertices(t)) box.extend(v);
                                 return box;
                               }},
                    shape);
}

Vec3 shape_center(const ShapeSpec& shape) {
  return std::visit(Overloaded{[](const Sphere& s) { return s.center; }, [](const Ellipsoid& e) { return e.center; },
                               [](const Cylinder& c) { return c.center; },
                               [](const TriPrism& t) { return t.pose.translation(); }},
                    shape);
}

ShapeSpec transform_shape(const RigidTransform& t, const ShapeSpec& shape) {
  return std::visit(Overloaded{[&](const Sphere& s) -> ShapeSpec { return Sphere{t.apply(s.center), s.radius}; },
                               [&](const Ellipsoid& e) -> ShapeSpec {
                                 return Ellipsoid{t.apply(e.center), e.semi_axes,
                                                  (t.rotation() * e.orientation).normalized()};
                               },
                               [&](const Cylinder& c) -> ShapeSpec {
                                 return Cylinder{t.apply(c.center), t.rotate(c.axis.normalized()), c.radius, c.height};
                               },
                               [&](const TriPrism& p) -> ShapeSpec {
                                 return TriPrism{p.edge_length, p.height, compose(t, p.pose)};
                               }},
                    shape);
}

TriangleMesh ground_truth_mesh(const ShapeSpec& shape, double target_edge_len) {
  validate(shape);
  require(positive_finite(target_edge_len), "ground_truth_mesh: edge length must be positive");
  return std::visit(
      Overloaded{[&](const Sphere& s) {
                   const int f = std::max(1, static_cast<int>(std::ceil(1.2 * s.radius / target_edge_len)));
                   return icosphere_mesh(f, [&](const Vec3& u) { return Vec3(s.center + s.radius * u); });
                 },
                 [&](const Ellipsoid& e) {
                   const int f = std::max(1, static_cast<int>(std::ceil(1.2 * e.semi_axes.maxCoeff() / target_edge_len)));
                   const Mat3 r = e.orientation.normalized().toRotationMatrix();
                   return icosphere_mesh(f, [&](const Vec3& u) { return Vec3(e.center + r * e.semi_axes.cwiseProduct(u)); });
                 },
                 [&](const Cylinder& c) { return cylinder_mesh(c, target_edge_len); },
                 [&](const TriPrism& t) { return prism_mesh(t, target_edge_len); }},
      shape);
}

DescriptorRecord analytic_descriptors(const ShapeSpec& shape) {
  validate(shape);
  return std::visit(
      Overloaded{[](const Sphere& s) {
                   const double r = s.radius;
                   return finish(4.0 / 3.0 * kPi * r * r * r, 4.0 * kPi * r * r, s.center, 2.0 * r,
                                 Mat3::Identity(), Vec3::Constant(r * r / 5.0));
                 },
                 [](const Ellipsoid& e) {
                   const Vec3& a = e.semi_axes;
                   return finish(4.0 / 3.0 * kPi * a.prod(), ellipsoid_area(a), e.center, 2.0 * a.maxCoeff(),
                                 e.orientation.normalized().toRotationMatrix(), a.cwiseProduct(a) / 5.0);
                 },
                 [](const Cylinder& c) {
                   const double r = c.radius;
                   const double h = c.height;
                   Mat3 axes;
                   const Vec3 axis = c.axis.normalized();
                   axes.col(0) = axis;
                   axes.col(1) = any_perpendicular(axis);
                   axes.col(2) = axis.cross(axes.col(1));
                   return finish(kPi * r * r * h, 2.0 * kPi * r * r + 2.0 * kPi * r * h, c.center,
                                 std::hypot(2.0 * r, h), axes, Vec3(h * h / 12.0, r * r / 4.0, r * r / 4.0));
                 },
                 [](const TriPrism& t) {
                   const double l = t.edge_length;
                   const double h = t.height;
                   const double tri_area = std::sqrt(3.0) / 4.0 * l * l;
                   const Mat3 axes = t.pose.rotation_matrix();
                   return finish(tri_area * h, 2.0 * tri_area + 3.0 * l * h, t.pose.translation(), std::hypot(l, h),
                                 axes, Vec3(l * l / 24.0, l * l / 24.0, h * h / 12.0));
                 }},
      shape);
}

// Scene -----------------------------------------------------------------------

namespace {

// Surfaces are disjoint and neither shape encloses the other; checked on
// dense ground-truth surface samples.
bool separated(const ShapeSpec& a, const ShapeSpec& b) {
  for (int pass = 0; pass < 2; ++pass) {
    const ShapeSpec& src = pass == 0 ? a : b;
    const ShapeSpec& other = pass == 0 ? b : a;
    for (const Vec3& p : ground_truth_mesh(src, 1.0).vertices) {
      if (signed_distance(other, p) <= 0.0) return false;
    }
  }
  return true;
}

}  // namespace

void PhantomScene::validate() const {
  require(block.valid() && block.min.allFinite() && block.max.allFinite(), "scene: invalid block");
  require(positive_finite(background.mean) && std::isfinite(background.log_sigma) && background.log_sigma >= 0.0,
          "scene: invalid background speckle");
  require(std::isfinite(inclusion_intensity.mean) && std::isfinite(inclusion_intensity.sigma) &&
              inclusion_intensity.sigma >= 0.0,
          "scene: invalid inclusion intensity");
  for (std::size_t i = 0; i < inclusions.size(); ++i) {
    usqa::validate(inclusions[i].shape);
    const Aabb b = bounds(inclusions[i].shape);
    require(block.contains(b), "scene: inclusion '" + inclusions[i].label + "' leaves the block");
    for (std::size_t j = 0; j < i; ++j) {
      if (bounds(inclusions[j].shape).overlaps(b) && !separated(inclusions[i].shape, inclusions[j].shape)) {
        throw Error(ErrorKind::kDegenerateConfiguration,
                    "scene: inclusions '" + inclusions[j].label + "' and '" + inclusions[i].label + "' overlap");
      }
    }
  }
}

Aabb PhantomScene::inclusion_bounds() const {
  Aabb box;
  for (const auto& inc : inclusions) box.extend(bounds(inc.shape));
  return box;
}

SceneDistance signed_distance(const PhantomScene& scene, const Vec3& p) {
  SceneDistance best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i < scene.inclusions.size(); ++i) {
    const double d = signed_distance(scene.inclusions[i].shape, p);
    if (d < best.distance) best = {d, i};
  }
  return best;
}

PhantomScene default_scene() {
  PhantomScene scene;
  scene.block = Aabb{Vec3(0.0, -40.0, -60.0), Vec3(180.0, 40.0, 0.0)};
  const double depth = -26.0;
  scene.inclusions.push_back({"sphere", Sphere{Vec3(17.0, 0.0, depth), 11.57}});
  scene.inclusions.push_back(
      {"ellipsoid", Ellipsoid{Vec3(59.0, 0.0, depth), Vec3(24.65, 12.33, 12.33), Eigen::Quaterniond::Identity()}});
  scene.inclusions.push_back({"cylinder", Cylinder{Vec3(110.5, 0.0, depth), Vec3::UnitX(), 11.96, 42.57}});
  // Prism axis along world x with one edge-to-apex direction pointing up.
  Mat3 r;
  r.col(0) = Vec3::UnitY();
  r.col(1) = Vec3::UnitZ();
  r.col(2) = Vec3::UnitX();
  scene.inclusions.push_back(
      {"triprism", TriPrism{23.51, 36.98, RigidTransform::from_matrix(r, Vec3(156.0, 0.0, depth))}});
  return scene;
}

nlohmann::json to_json(const ShapeSpec& shape) {
  return std::visit(
      Overloaded{[](const Sphere& s) {
                   return nlohmann::json{{"type", "sphere"}, {"center", arr(s.center)}, {"radius", s.radius}};
                 },
                 [](const Ellipsoid& e) {
                   return nlohmann::json{{"type", "ellipsoid"},
                                         {"center", arr(e.center)},
                                         {"semi_axes", arr(e.semi_axes)},
                                         {"orientation_wxyz", arr(e.orientation)}};
                 },
                 [](const Cylinder& c) {
                   return nlohmann::json{{"type", "cylinder"},
                                         {"center", arr(c.center)},
                                         {"axis", arr(c.axis)},
                                         {"radius", c.radius},
                                         {"height", c.height}};
                 },
                 [](const TriPrism& t) {
                   return nlohmann::json{{"type", "triprism"},
                                         {"edge_length", t.edge_length},
                                         {"height", t.height},
                                         {"center", arr(t.pose.translation())},
                                         {"orientation_wxyz", arr(t.pose.rotation())}};
                 }},
      shape);
}

ShapeSpec shape_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("type") && j.at("type").is_string(), "shape: missing type");
  const std::string type = j.at("type").get<std::string>();
  ShapeSpec out;
  if (type == "sphere") {
    out = Sphere{vec3_from(j, "center"), number_from(j, "radius")};
  } else if (type == "ellipsoid") {
    out = Ellipsoid{vec3_from(j, "center"), vec3_from(j, "semi_axes"), quat_from(j, "orientation_wxyz")};
  } else if (type == "cylinder") {
    out = Cylinder{vec3_from(j, "center"), vec3_from(j, "axis"), number_from(j, "radius"), number_from(j, "height")};
  } else if (type == "triprism") {
    out = TriPrism{number_from(j, "edge_length"), number_from(j, "height"),
                   RigidTransform(quat_from(j, "orientation_wxyz"), vec3_from(j, "center"))};
  } else {
    throw Error(ErrorKind::kInvalidInput, "shape: unknown type '" + type + "'");
  }
  validate(out);
  return out;
}

nlohmann::json to_json(const PhantomScene& scene) {
  nlohmann::json inc = nlohmann::json::array();
  for (const auto& i : scene.inclusions) inc.push_back({{"label", i.label}, {"shape", to_json(i.shape)}});
  return {{"block", {{"min", arr(scene.block.min)}, {"max", arr(scene.block.max)}}},
          {"background", {{"mean", scene.background.mean}, {"log_sigma", scene.background.log_sigma}}},
          {"inclusion_intensity",
           {{"mean", scene.inclusion_intensity.mean}, {"sigma", scene.inclusion_intensity.sigma}}},
          {"inclusions", inc}};
}

PhantomScene scene_from_json(const nlohmann::json& j) {
  require(j.is_object(), "scene: expected an object");
  PhantomScene scene = default_scene();
  if (j.contains("block")) {
    scene.block = Aabb{vec3_from(j.at("block"), "min"), vec3_from(j.at("block"), "max")};
  }
  if (j.contains("background")) {
    const auto& b = j.at("background");
    if (b.contains("mean")) scene.background.mean = number_from(b, "mean");
    if (b.contains("log_sigma")) scene.background.log_sigma = number_from(b, "log_sigma");
  }
  if (j.contains("inclusion_intensity")) {
    const auto& b = j.at("inclusion_intensity");
    if (b.contains("mean")) scene.inclusion_intensity.mean = number_from(b, "mean");
    if (b.contains("sigma")) scene.inclusion_intensity.sigma = number_from(b, "sigma");
  }
  if (j.contains("inclusions")) {
    require(j.at("inclusions").is_array(), "scene: inclusions must be an array");
    scene.inclusions.clear();
    for (const auto& e : j.at("inclusions")) {
      require(e.is_object() && e.contains("shape"), "scene: inclusion without shape");
      const std::string label = e.contains("label") ? e.at("label").get<std::string>() : shape_tag(shape_from_json(e.at("shape")));
      scene.inclusions.push_back({label, shape_from_json(e.at("shape"))});
    }
  }
  scene.validate();
  return scene;
}

PhantomScene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open scene file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("scene: ") + e.what());
  }
  return scene_from_json(j);
}

void save_scene(const PhantomScene& scene, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write scene file " + path.string());
  out << to_json(scene).dump(2) << '\n';
}

}  // namespace usqa
