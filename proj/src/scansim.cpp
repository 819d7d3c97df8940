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

#include "usqa/scansim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "usqa/error.hpp"

namespace usqa {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::uint64_t kTrackerStream = 0x74726b;
constexpr std::uint64_t kJitterStream = 0x6a6974;
constexpr std::uint64_t kCalibrationStream = 0x63616c;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kInvalidInput, what);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix64(seed ^ splitmix64(stream + 1)); }

Mat3 rot_x(double deg) { return Eigen::AngleAxisd(deg * kPi / 180.0, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double deg) { return Eigen::AngleAxisd(deg * kPi / 180.0, Vec3::UnitY()).toRotationMatrix(); }

nlohmann::json arr(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 vec3(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 3, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
nlohmann::json pose_json(const RigidTransform& t) {
  const auto& q = t.rotation();
  return {{"translation", arr(t.translation())}, {"rotation_wxyz", {q.w(), q.x(), q.y(), q.z()}}};
}
RigidTransform pose_from(const nlohmann::json& j) {
  const auto& q = j.at("rotation_wxyz");
  require(q.is_array() && q.size() == 4, "rotation_wxyz must have 4 entries");
  return {Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()),
          vec3(j.at("translation"))};
}

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void FrameSpec::validate() const {
  require(width > 0 && height > 0, "frame: dimensions must be positive");
  require(std::isfinite(pixel_spacing) && pixel_spacing > 0.0, "frame: pixel spacing must be positive");
  require(std::abs(width * pixel_spacing - fov_width) <= pixel_spacing + 1e-9, "frame: width * spacing must match the FOV");
  require(elevational_thickness >= 0.1 && elevational_thickness <= 5.0, "frame: elevational thickness outside [0.1, 5] mm");
  require(std::isfinite(frame_rate) && frame_rate > 0.0, "frame: frame rate must be positive");
}

RigidTransform image_to_probe(const FrameSpec& spec) {
  return RigidTransform::translation_only(Vec3(-0.5 * (spec.width - 1) * spec.pixel_spacing, 0.0, 0.0));
}

Mat3 baseline_probe_orientation() {
  Mat3 r;
  r.col(0) = Vec3(0.0, 1.0, 0.0);
  r.col(1) = Vec3(0.0, 0.0, -1.0);
  r.col(2) = Vec3(-1.0, 0.0, 0.0);
  return r;
}

void TrajectoryPlan::validate() const {
  require(std::isfinite(speed) && speed > 0.0, "plan: speed must be positive");
  require(std::isfinite(length) && length > 0.0, "plan: length must be positive");
  require(scan_direction.allFinite() && scan_direction.norm() > 0.0, "plan: invalid scan direction");
  require(std::abs(scan_direction.normalized().z()) < 1.0 - 1e-9, "plan: scan direction must not be vertical");
  require(!sweep_offsets.empty(), "plan: at least one sweep is required");
  require(std::isfinite(axial_angle_deg) && std::isfinite(lateral_tilt_deg), "plan: angles must be finite");
  require(sweep_gap > 0.0 && start_time >= 0.0, "plan: invalid timing");
}

Vec3 TrajectoryPlan::offset_axis() const { return Vec3::UnitZ().cross(scan_direction.normalized()).normalized(); }

Mat3 TrajectoryPlan::orientation() const {
  return start_pose.rotation_matrix() * rot_y(axial_angle_deg) * rot_x(lateral_tilt_deg);
}

std::size_t TrajectoryPlan::frames_per_sweep(double frame_rate) const {
  return static_cast<std::size_t>(std::floor(length / speed * frame_rate + 1e-9)) + 1;
}

double TrajectoryPlan::sweep_start_time(std::size_t sweep, double frame_rate) const {
  const double duration = static_cast<double>(frames_per_sweep(frame_rate) - 1) / frame_rate;
  return start_time + static_cast<double>(sweep) * (duration + sweep_gap);
}

RigidTransform TrajectoryPlan::probe_pose(std::size_t sweep, double distance) const {
  const Vec3 t = start_pose.translation() + sweep_offsets.at(sweep) * offset_axis() +
                 distance * scan_direction.normalized();
  return RigidTransform::from_matrix(orientation(), t);
}

PoseStream plan_poses(const TrajectoryPlan& plan, double frame_rate) {
  plan.validate();
  require(frame_rate > 0.0, "plan_poses: frame rate must be positive");
  PoseStream out;
  const std::size_t n = plan.frames_per_sweep(frame_rate);
  for (std::size_t s = 0; s < plan.sweep_offsets.size(); ++s) {
    const double t0 = plan.sweep_start_time(s, frame_rate);
    for (std::size_t k = 0; k < n; ++k) {
      const double dt = static_cast<double>(k) / frame_rate;
      out.push_back({t0 + dt, plan.probe_pose(s, plan.speed * dt)});
    }
  }
  return out;
}

TrajectoryPlan plan_for_scene(const PhantomScene& scene, const FrameSpec& spec, double speed, double axial_angle_deg,
                              double lateral_tilt_deg, int roi_border_px) {
  spec.validate();
  require(!scene.inclusions.empty(), "plan_for_scene: scene has no inclusions");
  TrajectoryPlan plan;
  plan.speed = speed;
  plan.axial_angle_deg = axial_angle_deg;
  plan.lateral_tilt_deg = lateral_tilt_deg;
  plan.start_pose = RigidTransform::from_matrix(baseline_probe_orientation(), Vec3::Zero());
  const Mat3 r = plan.orientation();
  const Vec3 normal = r.col(2);
  plan.scan_direction = std::abs(normal.x()) >= std::abs(normal.y()) ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 d = plan.scan_direction;
  const Vec3 o = plan.offset_axis();

  // ROI corners relative to the probe origin, in world orientation.
  const RigidTransform to_probe = image_to_probe(spec);
  const int b = roi_border_px;
  double dmin = 1e300, dmax = -1e300, omin = 1e300, omax = -1e300;
  for (int cx : {b, spec.width - 1 - b}) {
    for (int cy : {b, spec.height - 1 - b}) {
      const Vec3 q = r * to_probe.apply(Vec3(cx * spec.pixel_spacing, cy * spec.pixel_spacing, 0.0));
      dmin = std::min(dmin, q.dot(d));
      dmax = std::max(dmax, q.dot(d));
      omin = std::min(omin, q.dot(o));
      omax = std::max(omax, q.dot(o));
    }
  }
  const Aabb box = scene.inclusion_bounds();
  const double pad = 4.0;
  auto proj_range = [&](const Vec3& axis) {
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < 8; ++i) {
      const Vec3 c((i & 1) ? box.max.x() : box.min.x(), (i & 2) ? box.max.y() : box.min.y(),
                   (i & 4) ? box.max.z() : box.min.z());
      lo = std::min(lo, c.dot(axis));
      hi = std::max(hi, c.dot(axis));
    }
    return std::pair<double, double>(lo, hi);
  };
  const auto [bd_lo, bd_hi] = proj_range(d);
  const auto [bo_lo, bo_hi] = proj_range(o);
  const double s_start = bd_lo - dmax - pad;
  const double s_end = bd_hi - dmin + pad;
  plan.length = s_end - s_start;
  const double base_o = 0.5 * (bo_lo + bo_hi) - 0.5 * (omin + omax);
  plan.start_pose = RigidTransform::from_matrix(baseline_probe_orientation(), s_start * d + base_o * o);

  plan.sweep_offsets = {0.0};
  if (axial_angle_deg > 30.0) {
    const double footprint = omax - omin;
    const double step = 0.8 * footprint;
    const double extent = (bo_hi - bo_lo) + 6.0;
    const int n = std::max(1, static_cast<int>(std::ceil(extent / step)));
    plan.sweep_offsets.clear();
    for (int i = 0; i < n; ++i) plan.sweep_offsets.push_back((i - 0.5 * (n - 1)) * step);
  }
  return plan;
}

void TrackerModel::validate() const {
  require(std::isfinite(pos_noise_rms) && pos_noise_rms >= 0.0, "tracker: noise must be >= 0");
  require(std::isfinite(distortion.amplitude) && distortion.amplitude >= 0.0, "tracker: distortion amplitude must be >= 0");
  require(distortion.spatial_period > 0.0, "tracker: distortion period must be positive");
  require(std::isfinite(latency) && latency >= 0.0, "tracker: latency must be >= 0");
  require(rate_hz > 0.0, "tracker: rate must be positive");
  require(max_gap > 0.0, "tracker: max_gap must be positive");
  require(timestamp_jitter >= 0.0, "tracker: jitter must be >= 0");
  for (const auto& [a, b] : dropout_intervals) require(a <= b, "tracker: dropout interval reversed");
}

const char* tracker_name(TrackerKind kind) {
  switch (kind) {
    case TrackerKind::kKinematic:
      return "kinematic";
    case TrackerKind::kOptical:
      return "optical";
    case TrackerKind::kElectromagnetic:
      return "em";
  }
  return "kinematic";
}

TrackerKind tracker_kind_from_name(const std::string& name) {
  if (name == "kinematic") return TrackerKind::kKinematic;
  if (name == "optical") return TrackerKind::kOptical;
  if (name == "em") return TrackerKind::kElectromagnetic;
  throw Error(ErrorKind::kInvalidInput, "unknown tracker '" + name + "'");
}

PoseStream corrupt_poses(const PoseStream& truth, const TrackerModel& model, std::uint64_t seed) {
  model.validate();
  std::mt19937_64 rng(derive_seed(seed, kTrackerStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = model.pos_noise_rms / std::sqrt(3.0);
  PoseStream out;
  for (const TimedPose& s : truth.samples()) {
    // Always draw so the noise sequence does not depend on dropouts.
    const Vec3 noise(normal(rng), normal(rng), normal(rng));
    if (model.kind == TrackerKind::kOptical) {
      bool dropped = false;
      for (const auto& [a, b] : model.dropout_intervals) dropped = dropped || (s.timestamp >= a && s.timestamp < b);
      if (dropped) continue;
    }
    Vec3 t = s.pose.translation() + sigma * noise;
    if (model.kind == TrackerKind::kElectromagnetic && model.distortion.amplitude > 0.0) {
      const double dist = (s.pose.translation() - model.distortion.field_origin).norm();
      t += Vec3::Constant(model.distortion.amplitude *
                          std::sin(2.0 * kPi * dist / model.distortion.spatial_period + model.distortion.phase));
    }
    out.push_back({s.timestamp + model.latency, RigidTransform(s.pose.rotation(), t)});
  }
  return out;
}

RenderedFrame render_frame(const PhantomScene& scene, const RigidTransform& image_to_world, const FrameSpec& spec,
                           std::uint64_t seed) {
  spec.validate();
  RenderedFrame out{GrayImage(spec.width, spec.height), BinaryMask(spec.width, spec.height)};
  const Mat3 r = image_to_world.rotation_matrix();
  const Vec3 ex = r.col(0) * spec.pixel_spacing;
  const Vec3 ey = r.col(1) * spec.pixel_spacing;
  const Vec3 ez = r.col(2);
  const Vec3 origin = image_to_world.translation();
  constexpr int kSamples = 5;
  std::array<double, kSamples> offsets;
  for (int i = 0; i < kSamples; ++i) {
    offsets[i] = spec.elevational_thickness * (static_cast<double>(i) / (kSamples - 1) - 0.5);
  }
  std::vector<Aabb> boxes;
  for (const auto& inc : scene.inclusions) boxes.push_back(bounds(inc.shape));

  // Inclusions whose box meets the slab of this frame.
  std::vector<std::size_t> active;
  {
    Aabb slab;
    for (int cx : {0, spec.width - 1}) {
      for (int cy : {0, spec.height - 1}) {
        for (double u : {offsets.front(), offsets.back()}) slab.extend(Vec3(origin + cx * ex + cy * ey + u * ez));
      }
    }
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (boxes[i].overlaps(slab)) active.push_back(i);
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& bg = scene.background;
  const auto& inc = scene.inclusion_intensity;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double speckle = bg.mean * std::exp(bg.log_sigma * normal(rng));
      const double dark = inc.mean + inc.sigma * normal(rng);
      const Vec3 p = origin + x * ex + y * ey;
      int inside = 0;
      bool centre = false;
      if (!active.empty()) {
        for (int s = 0; s < kSamples; ++s) {
          const Vec3 q = p + offsets[s] * ez;
          for (std::size_t i : active) {
            if (boxes[i].contains(q) && contains(scene.inclusions[i].shape, q)) {
              ++inside;
              if (s == kSamples / 2) centre = true;
              break;
            }
          }
        }
      }
      const double f = static_cast<double>(inside) / kSamples;
      const double v = (1.0 - f) * speckle + f * dark;
      out.image.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      out.gt_mask.at(x, y) = centre;
    }
  }
  return out;
}

namespace {

// Oscillating probe motion observed by the frames (reference) and by the
// tracker (delayed); the lag between them is the tracker latency.
double calibrate_latency(const TrajectoryPlan& plan, const FrameSpec& spec, const TrackerModel& model,
                         std::uint64_t seed) {
  const double duration = 20.0;
  const double amplitude = 5.0;
  const double freq = 0.5;
  const Vec3 axis = plan.scan_direction.normalized();
  auto pose_at = [&](double t) {
    const RigidTransform base = plan.probe_pose(0, 0.0);
    return RigidTransform(base.rotation(), base.translation() + amplitude * std::sin(2.0 * kPi * freq * t) * axis);
  };
  SampledSignal reference{spec.frame_rate, 0.0, {}};
  for (int k = 0; k <= static_cast<int>(duration * spec.frame_rate); ++k) {
    reference.values.push_back(pose_at(k / spec.frame_rate).translation().dot(axis));
  }
  PoseStream truth;
  for (int k = 0; k <= static_cast<int>(duration * model.rate_hz); ++k) {
    truth.push_back({k / model.rate_hz, pose_at(k / model.rate_hz)});
  }
  TrackerModel calib = model;
  calib.dropout_intervals.clear();
  const PoseStream seen = corrupt_poses(truth, calib, derive_seed(seed, kCalibrationStream));
  SampledSignal delayed{model.rate_hz, seen.front_time(), {}};
  for (const auto& s : seen.samples()) delayed.values.push_back(s.pose.translation().dot(axis));
  return estimate_latency(reference, delayed, 0.5);
}

}  // namespace

ScanResult simulate_scan(const PhantomScene& scene, const TrajectoryPlan& plan, const FrameSpec& spec,
                         const TrackerModel& model, std::uint64_t seed) {
  scene.validate();
  plan.validate();
  spec.validate();
  model.validate();
  ScanResult result;
  const std::size_t per_sweep = plan.frames_per_sweep(spec.frame_rate);
  const double sweep_duration = static_cast<double>(per_sweep - 1) / spec.frame_rate;

  // One tracker clock spanning all sweeps with half a second to spare; in the
  // gaps each sample follows the nearer sweep's line.
  PoseStream truth;
  {
    const std::size_t sweeps = plan.sweep_offsets.size();
    const double first = plan.sweep_start_time(0, spec.frame_rate) - 0.5;
    const double last = plan.sweep_start_time(sweeps - 1, spec.frame_rate) + sweep_duration + 0.5;
    const auto n = static_cast<long>(std::floor((last - first) * model.rate_hz + 1e-9));
    std::size_t s = 0;
    for (long j = 0; j <= n; ++j) {
      const double t = first + static_cast<double>(j) / model.rate_hz;
      while (s + 1 < sweeps && t > plan.sweep_start_time(s, spec.frame_rate) + sweep_duration + 0.5 * plan.sweep_gap) ++s;
      const double dt = t - plan.sweep_start_time(s, spec.frame_rate);
      truth.push_back({t, plan.probe_pose(s, plan.speed * dt)});
    }
  }
  PoseStream reported = corrupt_poses(truth, model, seed);
  if (model.temporal_calibration && !reported.empty()) {
    const double lag = calibrate_latency(plan, spec, model, seed);
    result.estimated_latency = lag;
    PoseStream shifted;
    for (const auto& s : reported.samples()) shifted.push_back({s.timestamp - lag, s.pose});
    reported = std::move(shifted);
  }

  std::mt19937_64 jitter_rng(derive_seed(seed, kJitterStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  const RigidTransform to_probe = image_to_probe(spec);
  const RigidTransform reported_calib = compose(to_probe, model.calibration_perturbation);
  std::size_t index = 0;
  for (std::size_t s = 0; s < plan.sweep_offsets.size(); ++s) {
    const double t0 = plan.sweep_start_time(s, spec.frame_rate);
    for (std::size_t k = 0; k < per_sweep; ++k, ++index) {
      const double dt = static_cast<double>(k) / spec.frame_rate;
      TrackedFrame frame;
      frame.pixel_spacing = spec.pixel_spacing;
      frame.timestamp = t0 + dt;
      frame.sweep = static_cast<int>(s);
      frame.true_pose = compose(plan.probe_pose(s, plan.speed * dt), to_probe);
      const double t_assoc = frame.timestamp + model.timestamp_jitter * normal(jitter_rng);
      frame.tracked = reported.size() >= 2 && t_assoc >= reported.front_time() && t_assoc <= reported.back_time();
      if (frame.tracked) {
        const std::size_t i = reported.bracket(t_assoc);
        if (i + 1 < reported.size() && reported[i].timestamp != t_assoc &&
            reported[i + 1].timestamp - reported[i].timestamp > model.max_gap) {
          frame.tracked = false;
        }
      }
      if (frame.tracked) {
        frame.reported_pose = compose(interpolate_pose(reported, t_assoc), reported_calib);
      } else {
        ++result.untracked;
      }
      RenderedFrame img = render_frame(scene, frame.true_pose, spec, derive_seed(seed, index));
      frame.image = std::move(img.image);
      frame.gt_mask = std::move(img.gt_mask);
      result.frames.push_back(std::move(frame));
    }
  }
  result.tracker_stream = std::move(reported);
  result.dropout_warning = 2 * result.untracked > result.frames.size();
  return result;
}

// Serialization ---------------------------------------------------------------

nlohmann::json to_json(const FrameSpec& spec) {
  return {{"width", spec.width},
          {"height", spec.height},
          {"pixel_spacing_mm", spec.pixel_spacing},
          {"fov_width_mm", spec.fov_width},
          {"elevational_thickness_mm", spec.elevational_thickness},
          {"frame_rate_hz", spec.frame_rate}};
}

FrameSpec frame_spec_from_json(const nlohmann::json& j) {
  require(j.is_object(), "frame spec must be an object");
  FrameSpec s;
  try {
    maybe(j, "width", s.width);
    maybe(j, "height", s.height);
    maybe(j, "pixel_spacing_mm", s.pixel_spacing);
    maybe(j, "fov_width_mm", s.fov_width);
    maybe(j, "elevational_thickness_mm", s.elevational_thickness);
    maybe(j, "frame_rate_hz", s.frame_rate);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("frame spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const TrajectoryPlan& plan) {
  return {{"start_pose", pose_json(plan.start_pose)},
          {"scan_direction", arr(plan.scan_direction)},
          {"length_mm", plan.length},
          {"speed_mm_s", plan.speed},
          {"axial_angle_deg", plan.axial_angle_deg},
          {"lateral_tilt_deg", plan.lateral_tilt_deg},
          {"sweep_offsets_mm", plan.sweep_offsets},
          {"sweep_gap_s", plan.sweep_gap},
          {"start_time_s", plan.start_time}};
}

TrajectoryPlan plan_from_json(const nlohmann::json& j) {
  require(j.is_object(), "plan must be an object");
  TrajectoryPlan p;
  try {
    if (j.contains("start_pose")) p.start_pose = pose_from(j.at("start_pose"));
    if (j.contains("scan_direction")) p.scan_direction = vec3(j.at("scan_direction"));
    maybe(j, "length_mm", p.length);
    maybe(j, "speed_mm_s", p.speed);
    maybe(j, "axial_angle_deg", p.axial_angle_deg);
    maybe(j, "lateral_tilt_deg", p.lateral_tilt_deg);
    maybe(j, "sweep_offsets_mm", p.sweep_offsets);
    maybe(j, "sweep_gap_s", p.sweep_gap);
    maybe(j, "start_time_s", p.start_time);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("plan: ") + e.what());
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const TrackerModel& m) {
  nlohmann::json drop = nlohmann::json::array();
  for (const auto& [a, b] : m.dropout_intervals) drop.push_back({a, b});
  return {{"kind", tracker_name(m.kind)},
          {"pos_noise_rms_mm", m.pos_noise_rms},
          {"dropout_intervals_s", drop},
          {"distortion",
           {{"amplitude_mm", m.distortion.amplitude},
            {"spatial_period_mm", m.distortion.spatial_period},
            {"phase_rad", m.distortion.phase},
            {"field_origin_mm", arr(m.distortion.field_origin)}}},
          {"latency_s", m.latency},
          {"calibration_perturbation", pose_json(m.calibration_perturbation)},
          {"rate_hz", m.rate_hz},
          {"max_gap_s", m.max_gap},
          {"timestamp_jitter_s", m.timestamp_jitter},
          {"temporal_calibration", m.temporal_calibration}};
}

TrackerModel tracker_from_json(const nlohmann::json& j) {
  require(j.is_object(), "tracker must be an object");
  TrackerModel m;
  try {
    if (j.contains("kind")) m.kind = tracker_kind_from_name(j.at("kind").get<std::string>());
    maybe(j, "pos_noise_rms_mm", m.pos_noise_rms);
    if (j.contains("dropout_intervals_s")) {
      for (const auto& e : j.at("dropout_intervals_s")) {
        require(e.is_array() && e.size() == 2, "dropout interval must be [t0, t1]");
        m.dropout_intervals.emplace_back(e[0].get<double>(), e[1].get<double>());
      }
    }
    if (j.contains("distortion")) {
      const auto& d = j.at("distortion");
      maybe(d, "amplitude_mm", m.distortion.amplitude);
      maybe(d, "spatial_period_mm", m.distortion.spatial_period);
      maybe(d, "phase_rad", m.distortion.phase);
      if (d.contains("field_origin_mm")) m.distortion.field_origin = vec3(d.at("field_origin_mm"));
    }
    maybe(j, "latency_s", m.latency);
    if (j.contains("calibration_perturbation")) m.calibration_perturbation = pose_from(j.at("calibration_perturbation"));
    maybe(j, "rate_hz", m.rate_hz);
    maybe(j, "max_gap_s", m.max_gap);
    maybe(j, "timestamp_jitter_s", m.timestamp_jitter);
    maybe(j, "temporal_calibration", m.temporal_calibration);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("tracker: ") + e.what());
  }
  m.validate();
  return m;
}

namespace {

std::string frame_name(std::size_t i, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu%s", i, suffix);
  return buf;
}

}  // namespace

void write_scan(const ScanResult& scan, const nlohmann::json& meta, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "frames", ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + (dir / "frames").string());
  PoseStream reported, truth;
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < scan.frames.size(); ++i) {
    const TrackedFrame& f = scan.frames[i];
    write_pgm(f.image, dir / "frames" / frame_name(i, ".pgm"));
    write_pbm(f.gt_mask, dir / "frames" / frame_name(i, "_gt.pbm"));
    truth.push_back({f.timestamp, f.true_pose});
    if (f.tracked) reported.push_back({f.timestamp, f.reported_pose});
    frames.push_back({{"index", i}, {"timestamp_s", f.timestamp}, {"tracked", f.tracked}, {"sweep", f.sweep},
                      {"pixel_spacing_mm", f.pixel_spacing}});
  }
  write_pose_csv(reported, dir / "poses.csv");
  write_pose_csv(truth, dir / "truth_poses.csv");
  nlohmann::json m = meta;
  m["frames"] = frames;
  m["untracked_frames"] = scan.untracked;
  m["dropout_warning"] = scan.dropout_warning;
  m["estimated_latency_s"] = scan.estimated_latency ? nlohmann::json(*scan.estimated_latency) : nlohmann::json(nullptr);
  std::ofstream out(dir / "meta.json");
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / "meta.json").string());
  out << m.dump(2) << '\n';
}

LoadedScan read_scan(const std::filesystem::path& dir) {
  LoadedScan out;
  std::ifstream in(dir / "meta.json");
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + (dir / "meta.json").string());
  try {
    out.meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("meta.json: ") + e.what());
  }
  const PoseStream reported = read_pose_csv(dir / "poses.csv");
  const PoseStream truth = read_pose_csv(dir / "truth_poses.csv");
  std::size_t next_reported = 0;
  const auto& frames = out.meta.at("frames");
  if (frames.size() != truth.size()) throw Error(ErrorKind::kIo, "truth_poses.csv does not match meta.json");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    TrackedFrame f;
    f.timestamp = frames[i].at("timestamp_s").get<double>();
    f.tracked = frames[i].at("tracked").get<bool>();
    f.sweep = frames[i].at("sweep").get<int>();
    f.pixel_spacing = frames[i].at("pixel_spacing_mm").get<double>();
    f.true_pose = truth[i].pose;
    if (f.tracked) {
      if (next_reported >= reported.size() || reported[next_reported].timestamp != f.timestamp) {
        throw Error(ErrorKind::kIo, "poses.csv does not match meta.json");
      }
      f.reported_pose = reported[next_reported++].pose;
    }
    f.image = read_pgm(dir / "frames" / frame_name(i, ".pgm"));
    const auto gt = dir / "frames" / frame_name(i, "_gt.pbm");
    f.gt_mask = std::filesystem::exists(gt) ? read_pbm(gt) : BinaryMask(f.image.width, f.image.height);
    out.frames.push_back(std::move(f));
  }
  return out;
}

}  // namespace usqa
