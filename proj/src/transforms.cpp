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

#include "usqa/transforms.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>

#include <Eigen/SVD>

#include "usqa/error.hpp"
#include "usqa/kdtree.hpp"

namespace usqa {

RigidTransform::RigidTransform(const Eigen::Quaterniond& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  const double n = rotation_.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorKind::kInvalidInput, "RigidTransform: invalid quaternion");
  rotation_.coeffs() /= n;
  if (!translation_.allFinite()) throw Error(ErrorKind::kInvalidInput, "RigidTransform: non-finite translation");
}

RigidTransform RigidTransform::from_matrix(const Mat3& rotation, const Vec3& translation) {
  return {Eigen::Quaterniond(rotation), translation};
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& translation) {
  return {Eigen::Quaterniond(Eigen::AngleAxisd(angle_rad, axis.normalized())), translation};
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

double RigidTransform::angle() const {
  const double s = rotation_.vec().norm();
  return 2.0 * std::atan2(s, std::abs(rotation_.w()));
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

RigidTransform invert(const RigidTransform& t) {
  const Eigen::Quaterniond inv = t.rotation().conjugate();
  return {inv, -(inv * t.translation())};
}

PointSet transform_points(const RigidTransform& t, std::span<const Vec3> points) {
  PointSet out;
  out.reserve(points.size());
  const Mat3 r = t.rotation_matrix();
  for (const auto& p : points) out.push_back(r * p + t.translation());
  return out;
}

TriangleMesh transform_mesh(const RigidTransform& t, const TriangleMesh& mesh) {
  return TriangleMesh{transform_points(t, mesh.vertices), mesh.triangles};
}

// PoseStream ------------------------------------------------------------------

PoseStream::PoseStream(std::vector<TimedPose> samples) {
  samples_.reserve(samples.size());
  for (const auto& s : samples) push_back(s);
}

void PoseStream::push_back(const TimedPose& sample) {
  if (!std::isfinite(sample.timestamp) || sample.timestamp < 0.0) {
    throw Error(ErrorKind::kInvalidInput, "PoseStream: timestamps must be finite and non-negative");
  }
  if (!samples_.empty() && !(sample.timestamp > samples_.back().timestamp)) {
    throw Error(ErrorKind::kInvalidInput, "PoseStream: timestamps must be strictly increasing");
  }
  samples_.push_back(sample);
}

std::size_t PoseStream::bracket(double t) const {
  auto it = std::upper_bound(samples_.begin(), samples_.end(), t,
                             [](double v, const TimedPose& s) { return v < s.timestamp; });
  return static_cast<std::size_t>(std::distance(samples_.begin(), it)) - 1;
}

Eigen::Quaterniond slerp(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b_in, double s) {
  Eigen::Quaterniond b = b_in;
  double cos_theta = a.dot(b);
  if (cos_theta < 0.0) {
    b.coeffs() = -b.coeffs();
    cos_theta = -cos_theta;
  }
  Eigen::Quaterniond out;
  if (cos_theta > 1.0 - 1e-12) {
    out.coeffs() = (1.0 - s) * a.coeffs() + s * b.coeffs();
  } else {
    const double theta = std::acos(cos_theta);
    const double sin_theta = std::sin(theta);
    out.coeffs() = (std::sin((1.0 - s) * theta) / sin_theta) * a.coeffs() + (std::sin(s * theta) / sin_theta) * b.coeffs();
  }
  return out.normalized();
}

RigidTransform interpolate_pose(const PoseStream& stream, double t) {
  if (stream.size() < 2) throw Error(ErrorKind::kInvalidInput, "interpolate_pose: need at least two samples");
  if (!(t >= stream.front_time() && t <= stream.back_time())) {
    throw Error(ErrorKind::kOutOfRange, "interpolate_pose: time outside stream range");
  }
  const std::size_t i = stream.bracket(t);
  const TimedPose& a = stream[i];
  if (t == a.timestamp || i + 1 == stream.size()) return a.pose;
  const TimedPose& b = stream[i + 1];
  const double s = (t - a.timestamp) / (b.timestamp - a.timestamp);
  const Vec3 translation = a.pose.translation() + s * (b.pose.translation() - a.pose.translation());
  return {slerp(a.pose.rotation(), b.pose.rotation(), s), translation};
}

// CSV -------------------------------------------------------------------------

namespace {
constexpr const char* kPoseHeader = "timestamp_s,qx,qy,qz,qw,tx_mm,ty_mm,tz_mm";

double parse_double(const std::string& field) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  while (begin < end && *begin == ' ') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) throw Error(ErrorKind::kInvalidInput, "pose CSV: bad number '" + field + "'");
  return v;
}
}  // namespace

void write_pose_csv(const PoseStream& stream, std::ostream& out) {
  out << kPoseHeader << '\n';
  out << std::setprecision(17);
  for (const auto& s : stream.samples()) {
    const auto& q = s.pose.rotation();
    const auto& t = s.pose.translation();
    out << s.timestamp << ',' << q.x() << ',' << q.y() << ',' << q.z() << ',' << q.w() << ',' << t.x() << ','
        << t.y() << ',' << t.z() << '\n';
  }
}

void write_pose_csv(const PoseStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_pose_csv(stream, out);
}

PoseStream read_pose_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kInvalidInput, "pose CSV: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPoseHeader) throw Error(ErrorKind::kInvalidInput, "pose CSV: unexpected header '" + line + "'");
  PoseStream stream;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 8> v{};
    std::stringstream ss(line);
    std::string field;
    std::size_t n = 0;
    while (std::getline(ss, field, ',')) {
      if (n >= v.size()) throw Error(ErrorKind::kInvalidInput, "pose CSV: too many columns");
      v[n++] = parse_double(field);
    }
    if (n != v.size()) throw Error(ErrorKind::kInvalidInput, "pose CSV: expected 8 columns");
    stream.push_back({v[0], RigidTransform(Eigen::Quaterniond(v[4], v[1], v[2], v[3]), Vec3(v[5], v[6], v[7]))});
  }
  return stream;
}

PoseStream read_pose_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return read_pose_csv(in);
}

// Temporal calibration --------------------------------------------------------

namespace {

std::vector<double> resample_onto(const SampledSignal& reference, const SampledSignal& signal) {
  const std::size_t n = reference.values.size();
  std::vector<double> out(n, std::numeric_limits<double>::quiet_NaN());
  if (signal.rate_hz == reference.rate_hz && signal.start_time == reference.start_time) {
    std::copy_n(signal.values.begin(), std::min(n, signal.values.size()), out.begin());
    return out;
  }
  const double last = static_cast<double>(signal.values.size() - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = reference.start_time + static_cast<double>(k) / reference.rate_hz;
    const double x = (t - signal.start_time) * signal.rate_hz;
    if (x < 0.0 || x > last) continue;
    const auto i = static_cast<std::size_t>(std::floor(x));
    if (i + 1 > signal.values.size() - 1) {
      out[k] = signal.values[i];
      continue;
    }
    const double f = x - static_cast<double>(i);
    out[k] = (1.0 - f) * signal.values[i] + f * signal.values[i + 1];
  }
  return out;
}

bool has_variance(const std::vector<double>& v) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double x : v) {
    if (std::isnan(x)) continue;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  return hi > lo;
}

// Pearson correlation of ref[k] against del[k + lag] over the valid overlap.
double lagged_correlation(const std::vector<double>& ref, const std::vector<double>& del, long lag) {
  const long n = static_cast<long>(ref.size());
  double sa = 0.0, sb = 0.0;
  long count = 0;
  for (long k = std::max(0L, -lag); k < n && k + lag < n; ++k) {
    const double b = del[k + lag];
    if (std::isnan(b)) continue;
    sa += ref[k];
    sb += b;
    ++count;
  }
  if (count < 3) return -std::numeric_limits<double>::infinity();
  const double ma = sa / count;
  const double mb = sb / count;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (long k = std::max(0L, -lag); k < n && k + lag < n; ++k) {
    const double b = del[k + lag];
    if (std::isnan(b)) continue;
    const double da = ref[k] - ma;
    const double db = b - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (!(va > 0.0) || !(vb > 0.0)) return -std::numeric_limits<double>::infinity();
  return cov / std::sqrt(va * vb);
}

}  // namespace

double estimate_latency(const SampledSignal& reference, const SampledSignal& delayed, double search_window_s) {
  if (!(reference.rate_hz > 0.0) || !(delayed.rate_hz > 0.0)) {
    throw Error(ErrorKind::kInvalidInput, "estimate_latency: sampling rates must be positive");
  }
  if (!(search_window_s > 0.0)) throw Error(ErrorKind::kInvalidInput, "estimate_latency: search window must be positive");
  if (reference.values.size() < 3 || delayed.values.size() < 3) {
    throw Error(ErrorKind::kInvalidInput, "estimate_latency: signals too short");
  }
  if (!(reference.duration() > 2.0 * search_window_s) || !(delayed.duration() > 2.0 * search_window_s)) {
    throw Error(ErrorKind::kInvalidInput, "estimate_latency: duration must exceed twice the search window");
  }
  const std::vector<double> ref = reference.values;
  const std::vector<double> del = resample_onto(reference, delayed);
  if (!has_variance(ref) || !has_variance(del)) {
    throw Error(ErrorKind::kDegenerateSignal, "estimate_latency: flat signal");
  }
  const long window = static_cast<long>(std::ceil(search_window_s * reference.rate_hz));
  std::vector<double> corr(static_cast<std::size_t>(2 * window + 1));
  long best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (long lag = -window; lag <= window; ++lag) {
    const double c = lagged_correlation(ref, del, lag);
    corr[static_cast<std::size_t>(lag + window)] = c;
    if (c > best_value) {
      best_value = c;
      best = lag;
    }
  }
  if (!std::isfinite(best_value)) throw Error(ErrorKind::kDegenerateSignal, "estimate_latency: no valid overlap");
  double offset = 0.0;
  if (best > -window && best < window) {
    const double cm = corr[static_cast<std::size_t>(best - 1 + window)];
    const double c0 = corr[static_cast<std::size_t>(best + window)];
    const double cp = corr[static_cast<std::size_t>(best + 1 + window)];
    const double denom = cm - 2.0 * c0 + cp;
    if (std::isfinite(cm) && std::isfinite(cp) && denom < 0.0) {
      offset = std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
    }
  }
  return (static_cast<double>(best) + offset) / reference.rate_hz;
}

// Registration ----------------------------------------------------------------

FiducialResult fiducial_register(std::span<const Vec3> moving, std::span<const Vec3> fixed) {
  if (moving.size() != fixed.size()) {
    throw Error(ErrorKind::kInvalidInput, "fiducial_register: point sets must have equal length");
  }
  if (moving.size() < 3) throw Error(ErrorKind::kDegenerateConfiguration, "fiducial_register: need at least 3 points");
  const double n = static_cast<double>(moving.size());
  Vec3 cm = Vec3::Zero();
  Vec3 cf = Vec3::Zero();
  for (std::size_t i = 0; i < moving.size(); ++i) {
    if (!moving[i].allFinite() || !fixed[i].allFinite()) {
      throw Error(ErrorKind::kInvalidInput, "fiducial_register: non-finite coordinates");
    }
    cm += moving[i];
    cf += fixed[i];
  }
  cm /= n;
  cf /= n;
  Mat3 h = Mat3::Zero();
  Mat3 spread = Mat3::Zero();
  for (std::size_t i = 0; i < moving.size(); ++i) {
    const Vec3 a = moving[i] - cm;
    h += a * (fixed[i] - cf).transpose();
    spread += a * a.transpose();
  }
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Mat3>(spread).singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw Error(ErrorKind::kDegenerateConfiguration, "fiducial_register: points are collinear");
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Vec3 d = Vec3::Ones();
  d(2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = v * d.asDiagonal() * u.transpose();
  const Vec3 t = cf - r * cm;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < moving.size(); ++i) sum_sq += (r * moving[i] + t - fixed[i]).squaredNorm();
  return {RigidTransform::from_matrix(r, t), std::sqrt(sum_sq / n)};
}

namespace {

template <class Closest>
IcpResult run_icp(std::span<const Vec3> source, const Closest& closest, const RigidTransform& init,
                  const IcpOptions& options) {
  PointSet matched(source.size());
  RigidTransform current = init;
  IcpResult best{init, std::numeric_limits<double>::infinity(), 0, false};
  double previous_rms = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Mat3 r = current.rotation_matrix();
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i) {
      const Vec3 p = r * source[i] + current.translation();
      matched[i] = closest(p);
      sum_sq += (matched[i] - p).squaredNorm();
    }
    const double rms = std::sqrt(sum_sq / static_cast<double>(source.size()));
    if (rms < best.rms) best = IcpResult{current, rms, it, false};
    if (std::abs(previous_rms - rms) < options.rms_change_tolerance) {
      return IcpResult{current, rms, it, true};
    }
    previous_rms = rms;
    current = fiducial_register(source, matched).transform;
  }
  best.iterations = options.max_iterations;
  best.converged = false;
  return best;
}

}  // namespace

IcpResult icp_register(std::span<const Vec3> source, std::span<const Vec3> target, const RigidTransform& init,
                       const IcpOptions& options) {
  if (source.empty()) throw Error(ErrorKind::kInvalidInput, "icp_register: empty source");
  if (target.empty()) throw Error(ErrorKind::kInvalidInput, "icp_register: empty target");
  const KdTree tree(target);
  return run_icp(source, [&](const Vec3& p) { return tree.point(tree.nearest(p).index); }, init, options);
}

IcpResult icp_register(std::span<const Vec3> source, const TriangleMesh& target, const RigidTransform& init,
                       const IcpOptions& options) {
  if (source.empty()) throw Error(ErrorKind::kInvalidInput, "icp_register: empty source");
  if (target.empty()) throw Error(ErrorKind::kInvalidInput, "icp_register: empty target mesh");
  const MeshDistance distance(target);
  return run_icp(source, [&](const Vec3& p) { return distance.query(p).closest; }, init, options);
}

}  // namespace usqa
