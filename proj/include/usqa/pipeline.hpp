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

#ifndef USQA_PIPELINE_HPP
#define USQA_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "usqa/metrics.hpp"
#include "usqa/phantom.hpp"
#include "usqa/reconstruction.hpp"
#include "usqa/scansim.hpp"
#include "usqa/segmentation.hpp"

namespace usqa {

inline constexpr const char* kToolVersion = "0.1.0";

struct TrajectoryConfig {
  double speed = 5.0;  // mm/s
  double axial_angle_deg = 0.0;
  double lateral_tilt_deg = 0.0;
  std::optional<TrajectoryPlan> plan;  // explicit plan; otherwise planned from the scene
};

/// Limits checked against the per-shape means. Unset limits are not checked.
struct QaThresholds {
  std::optional<double> min_dsc_3d;
  std::optional<double> max_hd95;  // mm
  bool require_all_shapes = true;
};

struct ExperimentConfig {
  std::string scene = "default";  // "default" or a scene JSON path
  FrameSpec frame;
  TrajectoryConfig trajectory;
  TrackerModel tracker;
  SegConfig segmentation;
  double grid_spacing = 0.5;  // mm
  int repeats = 3;
  std::uint64_t seed = 0;
  bool use_gt_masks = false;  // reconstruct from simulator masks, skipping segmentation
  double surface_smoothing = 1.0;  // voxels
  std::size_t min_component_voxels = 100;
  double hd_sample_spacing = 0.25;  // mm
  QaThresholds thresholds;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// FNV-1a 64 of the canonical (sorted-key, compact) config dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

PhantomScene resolve_scene(const ExperimentConfig& config);
TrajectoryPlan resolve_plan(const ExperimentConfig& config, const PhantomScene& scene);

struct FitErrors {
  ShapeSpec fitted;
  double rms = 0.0;  // mm
  bool converged = false;
  double center_error = 0.0;                 // mm
  std::map<std::string, double> parameters;  // fitted minus truth, mm
};

struct ShapeMetrics {
  std::string label;
  std::string type;
  bool matched = false;
  bool merged = false;  // component also covers another inclusion
  double dsc_3d = 0.0;
  double hd = 0.0;    // mm
  double hd95 = 0.0;  // mm
  double volume_error_pct = 0.0;        // signed
  double surface_area_error_pct = 0.0;  // signed
  double roundness = 0.0;
  double flatness = 0.0;
  double elongation = 0.0;
  double icp_rms = 0.0;  // mm
  double error_map_rms = 0.0;  // mm
  std::optional<FitErrors> fit;
};

struct RepeatResult {
  int index = 0;
  std::uint64_t seed = 0;
  std::size_t frames = 0;
  std::size_t untracked_frames = 0;
  bool dropout_warning = false;
  std::optional<double> estimated_latency;
  double mean_dsc_2d = 0.0;  // frames where either mask is non-empty
  std::size_t components = 0;
  double fiducial_fre = 0.0;  // mm
  std::vector<std::string> flags;
  std::vector<ShapeMetrics> shapes;  // scene order
  double mean_dsc_3d = 0.0;   // missing shapes count as 0
  double mean_hd95 = 0.0;     // matched shapes only
};

/// Meshes kept for export; not part of the JSON report.
struct ShapeArtifacts {
  std::string label;
  SurfaceErrorMap error_map;  // registered reconstruction with signed distances
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};
Stat summarize(const std::vector<double>& values);

struct QaReport {
  nlohmann::json config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::vector<RepeatResult> repeats;
  Stat mean_dsc_3d;
  Stat mean_hd95;
  std::map<std::string, std::map<std::string, Stat>> shape_stats;  // label -> metric -> stat
  std::vector<std::vector<ShapeArtifacts>> artifacts;              // per repeat
};

nlohmann::json to_json(const QaReport& report);
/// Inverse of to_json; artifacts are not restored.
QaReport report_from_json(const nlohmann::json& j);
QaReport load_report(const std::filesystem::path& path);

// Stages. Each consumes what the previous one persists, so a staged run from
// disk reproduces the in-memory run exactly.

std::vector<BinaryMask> segment_scan(std::span<const TrackedFrame> frames, const SegConfig& config,
                                     bool use_gt_masks = false);
/// Tracked frames only.
VoxelGrid reconstruct_scan(std::span<const TrackedFrame> frames, std::span<const BinaryMask> masks, double spacing);
/// Fills the frame counts, dropout warning and mean DSC-2D of a repeat.
void annotate_scan(RepeatResult& result, std::span<const TrackedFrame> frames, std::span<const BinaryMask> masks,
                   std::optional<double> estimated_latency);
RepeatResult evaluate_volume(const VoxelGrid& grid, const PhantomScene& scene, const ExperimentConfig& config,
                             std::uint64_t seed, std::vector<ShapeArtifacts>* artifacts = nullptr);

/// simulate, segment, reconstruct and evaluate one seed.
RepeatResult run_repeat(const ExperimentConfig& config, int index, std::vector<ShapeArtifacts>* artifacts = nullptr);
/// Repeats run concurrently with seeds seed + i and are reduced in order.
QaReport run_baseline(const ExperimentConfig& config, bool keep_artifacts = false);
/// Aggregates finished repeats into a report.
QaReport make_report(const ExperimentConfig& config, std::vector<RepeatResult> repeats);

struct SweepRow {
  double speed = 0.0;
  double axial_angle_deg = 0.0;
  double lateral_tilt_deg = 0.0;
  std::size_t sweeps = 1;
  QaReport report;
};
/// Any explicit plan is dropped so every point is planned from the scene.
std::vector<SweepRow> sweep_speed(const ExperimentConfig& config, const std::vector<double>& speeds);
/// Every axial angle combined with every lateral tilt.
std::vector<SweepRow> sweep_angle(const ExperimentConfig& config, const std::vector<double>& axial_angles_deg,
                                  const std::vector<double>& lateral_tilts_deg);

/// Descriptions of threshold violations; empty when the report passes.
std::vector<std::string> qa_failures(const QaReport& report, const QaThresholds& thresholds);

inline const char* kShapeCsvHeader =
    "repeat,seed,label,type,matched,merged,dsc_3d,hd_mm,hd95_mm,volume_error_pct,surface_area_error_pct,"
    "roundness,flatness,elongation,icp_rms_mm,fit_rms_mm,fit_center_error_mm,fit_radius_error_mm,"
    "fit_semi_axis_1_error_mm,fit_semi_axis_2_error_mm,fit_semi_axis_3_error_mm,fit_height_error_mm,"
    "fit_edge_length_error_mm";
inline const char* kSpeedCsvHeader = "speed_mm_s,repeats,mean_dsc_3d,std_dsc_3d,mean_hd95_mm,std_hd95_mm";
inline const char* kAngleCsvHeader =
    "axial_angle_deg,lateral_tilt_deg,sweeps,repeats,mean_dsc_3d,std_dsc_3d,mean_hd95_mm,std_hd95_mm,min_components";

void write_report_json(const QaReport& report, const std::filesystem::path& path);
void write_shape_csv(const QaReport& report, const std::filesystem::path& path);
void write_speed_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
void write_angle_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

/// formats: any of "json", "csv", "stl", "ply". Meshes go to repeat_NN/.
void export_report(const QaReport& report, const std::filesystem::path& dir, const std::set<std::string>& formats);

}  // namespace usqa

#endif /* USQA_PIPELINE_HPP */
