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

#ifndef USQA_SCANSIM_HPP
#define USQA_SCANSIM_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "json.hpp"
#include "usqa/image.hpp"
#include "usqa/phantom.hpp"
#include "usqa/transforms.hpp"

namespace usqa {

struct FrameSpec {
  int width = 192;              // px, lateral
  int height = 240;             // px, depth
  double pixel_spacing = 0.2;   // mm/px
  double fov_width = 38.4;      // mm
  double elevational_thickness = 1.0;  // mm
  double frame_rate = 20.0;     // Hz

  void validate() const;
  double depth() const { return height * pixel_spacing; }
};

/// Fixed transform from image coordinates (col * s, row * s, 0) to the probe
/// frame, whose origin is the top centre of the image.
RigidTransform image_to_probe(const FrameSpec& spec);

/// Probe orientation for the reference scan over the default block: image
/// lateral along world +y, depth along world -z, scanning along world +x.
Mat3 baseline_probe_orientation();

struct TrajectoryPlan {
  RigidTransform start_pose;  // probe-to-world at t = 0 of the first sweep, before angles
  Vec3 scan_direction = Vec3::UnitX();
  double length = 100.0;      // mm
  double speed = 5.0;         // mm/s
  double axial_angle_deg = 0.0;   // about the probe depth axis
  double lateral_tilt_deg = 0.0;  // about the probe lateral axis
  std::vector<double> sweep_offsets{0.0};  // mm along offset_axis()
  double sweep_gap = 1.0;     // s between sweeps
  double start_time = 1.0;    // s, first frame

  void validate() const;
  /// Horizontal direction perpendicular to the scan: normalize(z x scan).
  Vec3 offset_axis() const;
  Mat3 orientation() const;
  std::size_t frames_per_sweep(double frame_rate) const;
  double sweep_start_time(std::size_t sweep, double frame_rate) const;
  /// True probe pose at `distance` mm along sweep `sweep`.
  RigidTransform probe_pose(std::size_t sweep, double distance) const;
};

/// Probe poses at the frame rate, sweeps concatenated in time.
PoseStream plan_poses(const TrajectoryPlan& plan, double frame_rate);

/**
 * Trajectory covering every inclusion of `scene`.
 *
 * The scan runs along world x or y, whichever is closer to the image-plane
 * normal after the axial rotation, from before the first inclusion to past
 * the last one (image footprint plus 4 mm). Axial angles above 30 degrees
 * add parallel sweeps spaced at 80 % of the ROI footprint along the offset
 * axis.
 */
TrajectoryPlan plan_for_scene(const PhantomScene& scene, const FrameSpec& spec, double speed, double axial_angle_deg,
                              double lateral_tilt_deg, int roi_border_px = 16);

enum class TrackerKind { kKinematic, kOptical, kElectromagnetic };

struct EmDistortion {
  double amplitude = 0.0;         // mm
  double spatial_period = 100.0;  // mm
  double phase = 0.0;             // rad
  Vec3 field_origin = Vec3::Zero();
};

struct TrackerModel {
  TrackerKind kind = TrackerKind::kKinematic;
  double pos_noise_rms = 0.0;  // mm, 3D RMS
  std::vector<std::pair<double, double>> dropout_intervals;  // s, [t0, t1), optical only
  EmDistortion distortion;                                   // EM only
  double latency = 0.0;                                      // s
  RigidTransform calibration_perturbation;                   // image side
  double rate_hz = 60.0;
  double max_gap = 0.1;            // s, longest bracket accepted for a frame
  double timestamp_jitter = 0.0;   // s, std dev on frame association time
  bool temporal_calibration = false;

  void validate() const;
};

const char* tracker_name(TrackerKind kind);
TrackerKind tracker_kind_from_name(const std::string& name);

/// Tracker-side corruption of a probe pose stream: Gaussian translation
/// noise with 3D RMS `pos_noise_rms`, EM bias
/// amplitude * sin(2 pi |p - field_origin| / period + phase) on every axis,
/// optical dropout removing samples inside the intervals, and all timestamps
/// delayed by `latency`.
PoseStream corrupt_poses(const PoseStream& truth, const TrackerModel& model, std::uint64_t seed);

struct RenderedFrame {
  GrayImage image;
  BinaryMask gt_mask;
};

/// Slab-occupancy rendering: five samples across the elevational thickness;
/// intensity mixes log-normal background speckle with dark inclusion noise by
/// the occupied fraction. The mask is the centre-plane occupancy.
RenderedFrame render_frame(const PhantomScene& scene, const RigidTransform& image_to_world, const FrameSpec& spec,
                           std::uint64_t seed);

struct TrackedFrame {
  GrayImage image;
  BinaryMask gt_mask;
  double pixel_spacing = 0.2;
  double timestamp = 0.0;
  RigidTransform reported_pose;  // image-to-world
  RigidTransform true_pose;      // image-to-world
  bool tracked = true;
  int sweep = 0;
};

struct ScanResult {
  std::vector<TrackedFrame> frames;
  PoseStream tracker_stream;  // reported probe poses
  std::size_t untracked = 0;
  bool dropout_warning = false;  // more than half of the frames untracked
  std::optional<double> estimated_latency;
};

ScanResult simulate_scan(const PhantomScene& scene, const TrajectoryPlan& plan, const FrameSpec& spec,
                         const TrackerModel& model, std::uint64_t seed);

nlohmann::json to_json(const FrameSpec& spec);
FrameSpec frame_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrajectoryPlan& plan);
TrajectoryPlan plan_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrackerModel& model);
TrackerModel tracker_from_json(const nlohmann::json& j);

/// Directory layout: frames/NNNNN.pgm, frames/NNNNN_gt.pbm, poses.csv
/// (reported poses of tracked frames), truth_poses.csv (all frames) and
/// meta.json (frame spec, plan, tracker, seed, per-frame flags).
void write_scan(const ScanResult& scan, const nlohmann::json& meta, const std::filesystem::path& dir);
struct LoadedScan {
  std::vector<TrackedFrame> frames;
  nlohmann::json meta;
};
LoadedScan read_scan(const std::filesystem::path& dir);

}  // namespace usqa

#endif /* USQA_SCANSIM_HPP */
