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

#ifndef USQA_TRANSFORMS_HPP
#define USQA_TRANSFORMS_HPP

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Geometry>

#include "usqa/geometry.hpp"
#include "usqa/mesh.hpp"

namespace usqa {

/**
 * Rigid-body transform: unit quaternion rotation plus translation in mm.
 *
 * Applying the transform to a point computes R * p + t. The quaternion is
 * normalized on construction.
 */
class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const Eigen::Quaterniond& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_matrix(const Mat3& rotation, const Vec3& translation);
  static RigidTransform from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& translation = Vec3::Zero());
  static RigidTransform translation_only(const Vec3& translation) {
    return {Eigen::Quaterniond::Identity(), translation};
  }

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 rotate(const Vec3& v) const { return rotation_ * v; }

  /// Rotation angle in radians, in [0, pi].
  double angle() const;

 private:
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
  Vec3 translation_ = Vec3::Zero();
};

/// a ∘ b: applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

PointSet transform_points(const RigidTransform& t, std::span<const Vec3> points);
TriangleMesh transform_mesh(const RigidTransform& t, const TriangleMesh& mesh);

struct TimedPose {
  double timestamp = 0.0;  // s
  RigidTransform pose;
};

/// Timestamped poses with strictly increasing, finite, non-negative times.
class PoseStream {
 public:
  PoseStream() = default;
  explicit PoseStream(std::vector<TimedPose> samples);

  void push_back(const TimedPose& sample);

  const std::vector<TimedPose>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const TimedPose& operator[](std::size_t i) const { return samples_[i]; }
  double front_time() const { return samples_.front().timestamp; }
  double back_time() const { return samples_.back().timestamp; }

  /// Index of the last sample with timestamp <= t (t must be in range).
  std::size_t bracket(double t) const;

 private:
  std::vector<TimedPose> samples_;
};

/// Pose at time t: linear translation, spherical-linear rotation between the
/// bracketing samples; exact at sample timestamps.
RigidTransform interpolate_pose(const PoseStream& stream, double t);

/// Spherical linear interpolation between two rotations, shortest arc.
Eigen::Quaterniond slerp(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b, double s);

/// CSV with header `timestamp_s,qx,qy,qz,qw,tx_mm,ty_mm,tz_mm`. Values are
/// written with round-trip precision.
void write_pose_csv(const PoseStream& stream, std::ostream& out);
void write_pose_csv(const PoseStream& stream, const std::filesystem::path& path);
PoseStream read_pose_csv(std::istream& in);
PoseStream read_pose_csv(const std::filesystem::path& path);

// Temporal calibration --------------------------------------------------------

struct SampledSignal {
  double rate_hz = 0.0;
  double start_time = 0.0;  // s, time of values[0]
  std::vector<double> values;

  double duration() const { return values.empty() ? 0.0 : (values.size() - 1) / rate_hz; }
};

/**
 * Lag d (seconds) such that `delayed(t) ≈ reference(t - d)`.
 *
 * The delayed signal is resampled onto the reference time base when the
 * rates or start times differ. For every integer lag within +-search_window
 * the Pearson correlation of the overlapping, mean-removed segments is
 * computed; the best lag is refined by fitting a parabola through the peak
 * and its two neighbours.
 */
double estimate_latency(const SampledSignal& reference, const SampledSignal& delayed, double search_window_s);

// Registration ----------------------------------------------------------------

struct FiducialResult {
  RigidTransform transform;  // maps moving into fixed
  double fre_rms = 0.0;      // mm
};

/// Least-squares rigid alignment of corresponding point sets (Kabsch with
/// determinant correction, so the rotation is always proper).
FiducialResult fiducial_register(std::span<const Vec3> moving, std::span<const Vec3> fixed);

struct IcpOptions {
  int max_iterations = 200;
  double rms_change_tolerance = 1e-6;   // mm
};

struct IcpResult {
  RigidTransform transform;  // maps source into target
  double rms = 0.0;          // mm
  int iterations = 0;
  bool converged = false;
};

/// Closest-point ICP. Point-set targets match to the nearest target point;
/// mesh targets match to the exact closest point on the triangles.
IcpResult icp_register(std::span<const Vec3> source, std::span<const Vec3> target,
                       const RigidTransform& init = RigidTransform::identity(), const IcpOptions& options = {});
IcpResult icp_register(std::span<const Vec3> source, const TriangleMesh& target,
                       const RigidTransform& init = RigidTransform::identity(), const IcpOptions& options = {});

}  // namespace usqa

#endif /* USQA_TRANSFORMS_HPP */
