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

#include "usqa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include "usqa/error.hpp"
#include "usqa/shapefit.hpp"

namespace usqa {
namespace {

using nlohmann::json;

// Defaults patched with whatever the document supplies, so partial sections work.
json patched(json defaults, const json& j, const char* key) {
  if (j.contains(key)) {
    if (!j.at(key).is_object()) throw Error(ErrorKind::kInvalidInput, std::string("config: '") + key + "' must be an object");
    defaults.merge_patch(j.at(key));
  }
  return defaults;
}

void require_finite_positive(double v, const char* what) {
  if (!(std::isfinite(v) && v > 0.0)) throw Error(ErrorKind::kInvalidInput, std::string("config: ") + what + " must be positive");
}

std::vector<Vec3> subsample(const std::vector<Vec3>& points, std::size_t max_points) {
  if (points.size() <= max_points) return points;
  const std::size_t stride = (points.size() + max_points - 1) / max_points;
  std::vector<Vec3> out;
  out.reserve(points.size() / stride + 1);
  for (std::size_t i = 0; i < points.size(); i += stride) out.push_back(points[i]);
  return out;
}

std::array<Vec3, 8> block_corners(const Aabb& b) {
  std::array<Vec3, 8> c;
  for (int i = 0; i < 8; ++i) {
    c[i] = Vec3(i & 1 ? b.max.x() : b.min.x(), i & 2 ? b.max.y() : b.min.y(), i & 4 ? b.max.z() : b.min.z());
  }
  return c;
}

// Block corners as a tracked pointer would report them, then the rigid map
// from tracker space onto the phantom.
FiducialResult prealign(const PhantomScene& scene, const TrackerModel& tracker, std::uint64_t seed) {
  const auto truth = block_corners(scene.block);
  PoseStream touched;
  for (int i = 0; i < 8; ++i) touched.push_back({static_cast<double>(i), RigidTransform::translation_only(truth[i])});
  TrackerModel pointer = tracker;
  pointer.dropout_intervals.clear();
  pointer.latency = 0.0;
  const PoseStream seen = corrupt_poses(touched, pointer, seed ^ 0x666964756369616cULL);
  std::vector<Vec3> measured;
  for (const auto& s : seen.samples()) measured.push_back(s.pose.translation());
  if (measured.size() != truth.size()) throw Error(ErrorKind::kDegenerateConfiguration, "prealign: fiducial lost");
  return fiducial_register(measured, std::vector<Vec3>(truth.begin(), truth.end()));
}

FitErrors fit_errors(const ShapeSpec& truth, const FitResult& fit) {
  FitErrors e;
  e.fitted = fit.shape;
  e.rms = fit.rms_residual;
  e.converged = fit.converged;
  e.center_error = (shape_center(fit.shape) - shape_center(truth)).norm();
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        const auto& f = std::get<T>(fit.shape);
        if constexpr (std::is_same_v<T, Sphere>) {
          e.parameters["radius"] = f.radius - t.radius;
        } else if constexpr (std::is_same_v<T, Ellipsoid>) {
          Vec3 a = t.semi_axes, b = f.semi_axes;
          std::sort(a.data(), a.data() + 3, std::greater<>());
          std::sort(b.data(), b.data() + 3, std::greater<>());
          for (int k = 0; k < 3; ++k) e.parameters["semi_axis_" + std::to_string(k + 1)] = b[k] - a[k];
        } else if constexpr (std::is_same_v<T, Cylinder>) {
          e.parameters["radius"] = f.radius - t.radius;
          e.parameters["height"] = f.height - t.height;
        } else {
          e.parameters["edge_length"] = f.edge_length - t.edge_length;
          e.parameters["height"] = f.height - t.height;
        }
      },
      truth);
  return e;
}

json to_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; }

json to_json(const ShapeMetrics& m) {
  json j = {{"label", m.label}, {"type", m.type}, {"matched", m.matched}, {"merged", m.merged}};
  if (!m.matched) return j;
  j["dsc_3d"] = m.dsc_3d;
  j["hd_mm"] = m.hd;
  j["hd95_mm"] = m.hd95;
  j["volume_error_pct"] = m.volume_error_pct;
  j["surface_area_error_pct"] = m.surface_area_error_pct;
  j["roundness"] = m.roundness;
  j["flatness"] = m.flatness;
  j["elongation"] = m.elongation;
  j["icp_rms_mm"] = m.icp_rms;
  j["error_map_rms_mm"] = m.error_map_rms;
  if (m.fit) {
    json p = json::object();
    for (const auto& [k, v] : m.fit->parameters) p[k + "_mm"] = v;
    j["fit"] = {{"shape", to_json(m.fit->fitted)},
                {"rms_mm", m.fit->rms},
                {"converged", m.fit->converged},
                {"center_error_mm", m.fit->center_error},
                {"parameter_errors", p}};
  }
  return j;
}

json to_json(const RepeatResult& r) {
  json j = {{"index", r.index},
            {"seed", r.seed},
            {"frames", r.frames},
            {"untracked_frames", r.untracked_frames},
            {"dropout_warning", r.dropout_warning},
            {"mean_dsc_2d", r.mean_dsc_2d},
            {"components", r.components},
            {"fiducial_fre_mm", r.fiducial_fre},
            {"flags", r.flags},
            {"mean_dsc_3d", r.mean_dsc_3d},
            {"mean_hd95_mm", r.mean_hd95}};
  if (r.estimated_latency) j["estimated_latency_s"] = *r.estimated_latency;
  json shapes = json::array();
  for (const auto& s : r.shapes) shapes.push_back(to_json(s));
  j["shapes"] = shapes;
  return j;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string opt_param(const std::optional<FitErrors>& fit, const char* name) {
  if (!fit) return "";
  const auto it = fit->parameters.find(name);
  return it == fit->parameters.end() ? "" : num(it->second);
}

std::size_t sweep_count(const ExperimentConfig& config) {
  return resolve_plan(config, resolve_scene(config)).sweep_offsets.size();
}

}  // namespace

// Config ----------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (scene.empty()) throw Error(ErrorKind::kInvalidInput, "config: scene must be \"default\" or a path");
  frame.validate();
  tracker.validate();
  segmentation.validate(frame.width, frame.height);
  require_finite_positive(trajectory.speed, "trajectory speed");
  if (!std::isfinite(trajectory.axial_angle_deg) || !std::isfinite(trajectory.lateral_tilt_deg)) {
    throw Error(ErrorKind::kInvalidInput, "config: trajectory angles must be finite");
  }
  if (trajectory.plan) trajectory.plan->validate();
  require_finite_positive(grid_spacing, "grid spacing");
  require_finite_positive(hd_sample_spacing, "hd sample spacing");
  if (!(std::isfinite(surface_smoothing) && surface_smoothing >= 0.0)) {
    throw Error(ErrorKind::kInvalidInput, "config: surface smoothing must be >= 0");
  }
  if (repeats < 1) throw Error(ErrorKind::kInvalidInput, "config: repeats must be >= 1");
  if (thresholds.min_dsc_3d && !std::isfinite(*thresholds.min_dsc_3d)) {
    throw Error(ErrorKind::kInvalidInput, "config: min_dsc_3d must be finite");
  }
  if (thresholds.max_hd95 && !std::isfinite(*thresholds.max_hd95)) {
    throw Error(ErrorKind::kInvalidInput, "config: max_hd95_mm must be finite");
  }
}

json to_json(const ExperimentConfig& c) {
  json traj = {{"speed_mm_s", c.trajectory.speed},
               {"axial_angle_deg", c.trajectory.axial_angle_deg},
               {"lateral_tilt_deg", c.trajectory.lateral_tilt_deg}};
  if (c.trajectory.plan) traj["plan"] = to_json(*c.trajectory.plan);
  json thr = {{"require_all_shapes", c.thresholds.require_all_shapes}};
  if (c.thresholds.min_dsc_3d) thr["min_dsc_3d"] = *c.thresholds.min_dsc_3d;
  if (c.thresholds.max_hd95) thr["max_hd95_mm"] = *c.thresholds.max_hd95;
  return {{"scene", c.scene},
          {"frame", to_json(c.frame)},
          {"trajectory", traj},
          {"tracker", to_json(c.tracker)},
          {"segmentation", to_json(c.segmentation)},
          {"grid_spacing_mm", c.grid_spacing},
          {"repeats", c.repeats},
          {"seed", c.seed},
          {"use_gt_masks", c.use_gt_masks},
          {"surface_smoothing_voxels", c.surface_smoothing},
          {"min_component_voxels", c.min_component_voxels},
          {"hd_sample_spacing_mm", c.hd_sample_spacing},
          {"thresholds", thr}};
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kInvalidInput, "config: expected a JSON object");
  try {
    ExperimentConfig c;
    c.scene = j.value("scene", c.scene);
    c.frame = frame_spec_from_json(patched(to_json(c.frame), j, "frame"));
    // Tracker defaults depend on the kind, so only the given fields are read on top of them.
    c.tracker = tracker_from_json(patched(to_json(c.tracker), j, "tracker"));
    c.segmentation = seg_config_from_json(patched(to_json(c.segmentation), j, "segmentation"));
    if (j.contains("trajectory")) {
      const json& t = j.at("trajectory");
      c.trajectory.speed = t.value("speed_mm_s", c.trajectory.speed);
      c.trajectory.axial_angle_deg = t.value("axial_angle_deg", c.trajectory.axial_angle_deg);
      c.trajectory.lateral_tilt_deg = t.value("lateral_tilt_deg", c.trajectory.lateral_tilt_deg);
      if (t.contains("plan")) c.trajectory.plan = plan_from_json(t.at("plan"));
    }
    c.grid_spacing = j.value("grid_spacing_mm", c.grid_spacing);
    c.repeats = j.value("repeats", c.repeats);
    c.seed = j.value("seed", c.seed);
    c.use_gt_masks = j.value("use_gt_masks", c.use_gt_masks);
    c.surface_smoothing = j.value("surface_smoothing_voxels", c.surface_smoothing);
    c.min_component_voxels = j.value("min_component_voxels", c.min_component_voxels);
    c.hd_sample_spacing = j.value("hd_sample_spacing_mm", c.hd_sample_spacing);
    if (j.contains("thresholds")) {
      const json& t = j.at("thresholds");
      if (t.contains("min_dsc_3d")) c.thresholds.min_dsc_3d = t.at("min_dsc_3d").get<double>();
      if (t.contains("max_hd95_mm")) c.thresholds.max_hd95 = t.at("max_hd95_mm").get<double>();
      c.thresholds.require_all_shapes = t.value("require_all_shapes", c.thresholds.require_all_shapes);
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, "config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PhantomScene resolve_scene(const ExperimentConfig& config) {
  return config.scene == "default" ? default_scene() : load_scene(config.scene);
}

TrajectoryPlan resolve_plan(const ExperimentConfig& config, const PhantomScene& scene) {
  if (config.trajectory.plan) return *config.trajectory.plan;
  return plan_for_scene(scene, config.frame, config.trajectory.speed, config.trajectory.axial_angle_deg,
                        config.trajectory.lateral_tilt_deg, config.segmentation.roi_border);
}

// Stages ----------------------------------------------------------------------

std::vector<BinaryMask> segment_scan(std::span<const TrackedFrame> frames, const SegConfig& config, bool use_gt_masks) {
  std::vector<BinaryMask> masks;
  masks.reserve(frames.size());
  for (const auto& f : frames) masks.push_back(use_gt_masks ? f.gt_mask : segment_frame(f.image, config).mask);
  return masks;
}

VoxelGrid reconstruct_scan(std::span<const TrackedFrame> frames, std::span<const BinaryMask> masks, double spacing) {
  if (frames.size() != masks.size()) throw Error(ErrorKind::kInvalidInput, "reconstruct: one mask per frame required");
  std::vector<FrameRef> refs;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].tracked) refs.push_back({&masks[i], frames[i].reported_pose, frames[i].pixel_spacing});
  }
  if (refs.empty()) throw Error(ErrorKind::kDegenerateConfiguration, "reconstruct: no tracked frames");
  return reconstruct(refs, auto_grid(refs, spacing));
}

void annotate_scan(RepeatResult& r, std::span<const TrackedFrame> frames, std::span<const BinaryMask> masks,
                   std::optional<double> estimated_latency) {
  r.frames = frames.size();
  r.untracked_frames = std::count_if(frames.begin(), frames.end(), [](const auto& f) { return !f.tracked; });
  r.dropout_warning = 2 * r.untracked_frames > r.frames;
  r.estimated_latency = estimated_latency;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < frames.size() && i < masks.size(); ++i) {
    if (frames[i].gt_mask.empty() && masks[i].empty()) continue;
    sum += dsc_2d(masks[i], frames[i].gt_mask);
    ++n;
  }
  r.mean_dsc_2d = n ? sum / n : 0.0;
  if (r.dropout_warning) r.flags.push_back("dropout_warning");
}

RepeatResult evaluate_volume(const VoxelGrid& grid, const PhantomScene& scene, const ExperimentConfig& config,
                             std::uint64_t seed, std::vector<ShapeArtifacts>* artifacts) {
  RepeatResult r;
  r.seed = seed;
  const LabeledComponents comps = threshold_and_label(grid, 128, config.min_component_voxels);
  r.components = comps.size();
  const FiducialResult fid = prealign(scene, config.tracker, seed);
  r.fiducial_fre = fid.fre_rms;
  const RigidTransform& pre = fid.transform;

  const std::size_t n = scene.inclusions.size();
  if (comps.size() != n) r.flags.push_back("component_count:" + std::to_string(comps.size()));
  std::vector<Vec3> centroids;
  for (std::size_t j = 0; j < comps.size(); ++j) centroids.push_back(pre.apply(comps.centroid(static_cast<int>(j) + 1)));

  // Each component joins the inclusion with the nearest centre, within half
  // its bounding-box diagonal, so fragments of one shape are scored together.
  std::vector<std::vector<int>> groups(n);
  std::size_t stray = 0;
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    int owner = -1;
    double best = INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      const ShapeSpec& shape = scene.inclusions[i].shape;
      const Aabb b = bounds(shape);
      const double d = (centroids[j] - shape_center(shape)).norm();
      if (d <= 0.5 * (b.max - b.min).norm() && d < best) {
        best = d;
        owner = static_cast<int>(i);
      }
    }
    if (owner >= 0) {
      groups[owner].push_back(static_cast<int>(j) + 1);
    } else {
      ++stray;
    }
  }
  if (stray) r.flags.push_back("unassigned_components:" + std::to_string(stray));
  // A component covering another inclusion's centre spans both: merged.
  std::vector<bool> merged(n, false);
  const RigidTransform to_grid = invert(pre);
  const GridSpec& geo = comps.geometry;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 q = (to_grid.apply(shape_center(scene.inclusions[i].shape)) - geo.origin) / geo.spacing;
    const int x = static_cast<int>(std::lround(q.x())), y = static_cast<int>(std::lround(q.y())),
              z = static_cast<int>(std::lround(q.z()));
    if (x < 0 || y < 0 || z < 0 || x >= geo.dims[0] || y >= geo.dims[1] || z >= geo.dims[2]) continue;
    const int label = comps.labels[geo.index(x, y, z)];
    if (label == 0 || std::count(groups[i].begin(), groups[i].end(), label)) continue;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i && std::count(groups[k].begin(), groups[k].end(), label)) {
        merged[i] = merged[k] = true;
        groups[i].push_back(label);
      }
    }
  }

  r.shapes.resize(n);
  double dsc_sum = 0.0, hd95_sum = 0.0;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Inclusion& inc = scene.inclusions[i];
    ShapeMetrics& m = r.shapes[i];
    m.label = inc.label;
    m.type = shape_tag(inc.shape);
    if (groups[i].empty()) {
      r.flags.push_back("missing:" + inc.label);
      continue;
    }
    m.merged = merged[i];
    if (m.merged) r.flags.push_back("merged:" + inc.label);
    if (groups[i].size() > 1) r.flags.push_back("fragments:" + inc.label + ":" + std::to_string(groups[i].size()));

    // Fragments too thin to survive smoothing cannot be scored.
    try {
      VoxelSet voxels = component_voxels(comps, groups[i].front());
      for (std::size_t g = 1; g < groups[i].size(); ++g) {
        for (std::size_t v = 0; v < comps.labels.size(); ++v) voxels.occupancy[v] |= comps.labels[v] == groups[i][g];
      }
      const TriangleMesh surface = extract_surface(voxels.geometry, voxels.occupancy, config.surface_smoothing);
      const TriangleMesh reference = ground_truth_mesh(inc.shape, 0.5);
      const IcpResult icp = icp_register(subsample(transform_points(pre, surface.vertices), 3000), reference);
      const RigidTransform reg = compose(icp.transform, pre);
      SurfaceErrorMap emap = surface_error_map(surface, reference, reg);

      m.matched = true;
      m.icp_rms = icp.rms;
      m.dsc_3d = dsc_3d(voxels, voxelize(transform_shape(invert(reg), inc.shape), grid.geometry));
      const HausdorffResult hd = surface_hausdorff(emap.mesh, reference, config.hd_sample_spacing);
      m.hd = hd.hd_max;
      m.hd95 = hd.hd95;
      const DescriptorRecord got = shape_descriptors(voxels, surface);
      const DescriptorRecord want = analytic_descriptors(inc.shape);
      m.volume_error_pct = 100.0 * (got.volume - want.volume) / want.volume;
      m.surface_area_error_pct = 100.0 * (got.surface_area - want.surface_area) / want.surface_area;
      m.roundness = got.roundness;
      m.flatness = got.flatness;
      m.elongation = got.elongation;
      m.error_map_rms = emap.rms;
      try {
        m.fit = fit_errors(inc.shape, fit_like(inc.shape, subsample(emap.mesh.vertices, 4000)));
      } catch (const Error&) {
        r.flags.push_back("fit_failed:" + inc.label);
      }
      if (artifacts) artifacts->push_back({inc.label, std::move(emap)});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDegenerateComponent) throw;
      ShapeMetrics blank;
      blank.label = m.label;
      blank.type = m.type;
      blank.merged = m.merged;
      m = std::move(blank);
      r.flags.push_back("degenerate:" + inc.label);
      continue;
    }
    dsc_sum += m.dsc_3d;
    hd95_sum += m.hd95;
    ++matched;
  }
  r.mean_dsc_3d = n ? dsc_sum / n : 0.0;
  r.mean_hd95 = matched ? hd95_sum / matched : 0.0;
  return r;
}

RepeatResult run_repeat(const ExperimentConfig& config, int index, std::vector<ShapeArtifacts>* artifacts) {
  const PhantomScene scene = resolve_scene(config);
  const TrajectoryPlan plan = resolve_plan(config, scene);
  const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(index);
  const ScanResult scan = simulate_scan(scene, plan, config.frame, config.tracker, seed);
  const std::vector<BinaryMask> masks = segment_scan(scan.frames, config.segmentation, config.use_gt_masks);
  const VoxelGrid grid = reconstruct_scan(scan.frames, masks, config.grid_spacing);
  RepeatResult r = evaluate_volume(grid, scene, config, seed, artifacts);
  r.index = index;
  annotate_scan(r, scan.frames, masks, scan.estimated_latency);
  return r;
}

// Reports ---------------------------------------------------------------------

Stat summarize(const std::vector<double>& values) {
  Stat s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= values.size();
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (values.size() - 1));
  }
  return s;
}

QaReport make_report(const ExperimentConfig& config, std::vector<RepeatResult> repeats) {
  QaReport rep;
  rep.config = to_json(config);
  rep.config_hash = config_hash(config);
  rep.seed = config.seed;
  rep.repeats = std::move(repeats);
  std::vector<double> dsc, hd95;
  std::map<std::string, std::map<std::string, std::vector<double>>> per_shape;
  for (const auto& r : rep.repeats) {
    dsc.push_back(r.mean_dsc_3d);
    hd95.push_back(r.mean_hd95);
    for (const auto& m : r.shapes) {
      if (!m.matched) continue;
      auto& s = per_shape[m.label];
      s["dsc_3d"].push_back(m.dsc_3d);
      s["hd_mm"].push_back(m.hd);
      s["hd95_mm"].push_back(m.hd95);
      s["volume_error_pct"].push_back(m.volume_error_pct);
      s["surface_area_error_pct"].push_back(m.surface_area_error_pct);
      s["roundness"].push_back(m.roundness);
      s["flatness"].push_back(m.flatness);
      s["elongation"].push_back(m.elongation);
      if (m.fit) {
        s["fit_rms_mm"].push_back(m.fit->rms);
        s["fit_center_error_mm"].push_back(m.fit->center_error);
        for (const auto& [k, v] : m.fit->parameters) s["fit_" + k + "_error_mm"].push_back(v);
      }
    }
  }
  rep.mean_dsc_3d = summarize(dsc);
  rep.mean_hd95 = summarize(hd95);
  for (const auto& [label, metrics] : per_shape) {
    for (const auto& [name, values] : metrics) rep.shape_stats[label][name] = summarize(values);
  }
  return rep;
}

QaReport run_baseline(const ExperimentConfig& config, bool keep_artifacts) {
  config.validate();
  const int n = config.repeats;
  std::vector<RepeatResult> results(n);
  std::vector<std::vector<ShapeArtifacts>> artifacts(n);
  const int workers = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  for (int begin = 0; begin < n; begin += workers) {
    std::vector<std::future<RepeatResult>> jobs;
    for (int i = begin; i < std::min(n, begin + workers); ++i) {
      jobs.push_back(std::async(std::launch::async, [&config, &artifacts, keep_artifacts, i] {
        return run_repeat(config, i, keep_artifacts ? &artifacts[i] : nullptr);
      }));
    }
    for (int i = begin; i < std::min(n, begin + workers); ++i) results[i] = jobs[i - begin].get();
  }
  QaReport rep = make_report(config, std::move(results));
  if (keep_artifacts) rep.artifacts = std::move(artifacts);
  return rep;
}

json to_json(const QaReport& r) {
  json repeats = json::array();
  for (const auto& x : r.repeats) repeats.push_back(to_json(x));
  json shapes = json::object();
  for (const auto& [label, metrics] : r.shape_stats) {
    for (const auto& [name, s] : metrics) shapes[label][name] = to_json(s);
  }
  return {{"tool", "usqa3d"},
          {"tool_version", r.tool_version},
          {"config_hash", r.config_hash},
          {"seed", r.seed},
          {"config", r.config},
          {"metadata", {{"prism_edge_length", "edge length of the equilateral cross-section"},
                        {"std", "sample standard deviation over repeats, 0 for one repeat"}}},
          {"repeats", repeats},
          {"aggregate",
           {{"repeats", r.repeats.size()},
            {"mean_dsc_3d", to_json(r.mean_dsc_3d)},
            {"mean_hd95_mm", to_json(r.mean_hd95)},
            {"shapes", shapes}}}};
}

QaReport report_from_json(const json& j) {
  try {
    QaReport r;
    r.config = j.at("config");
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.tool_version = j.at("tool_version").get<std::string>();
    for (const json& x : j.at("repeats")) {
      RepeatResult rr;
      rr.index = x.at("index").get<int>();
      rr.seed = x.at("seed").get<std::uint64_t>();
      rr.frames = x.at("frames").get<std::size_t>();
      rr.untracked_frames = x.at("untracked_frames").get<std::size_t>();
      rr.dropout_warning = x.at("dropout_warning").get<bool>();
      if (x.contains("estimated_latency_s")) rr.estimated_latency = x.at("estimated_latency_s").get<double>();
      rr.mean_dsc_2d = x.at("mean_dsc_2d").get<double>();
      rr.components = x.at("components").get<std::size_t>();
      rr.fiducial_fre = x.at("fiducial_fre_mm").get<double>();
      rr.flags = x.at("flags").get<std::vector<std::string>>();
      rr.mean_dsc_3d = x.at("mean_dsc_3d").get<double>();
      rr.mean_hd95 = x.at("mean_hd95_mm").get<double>();
      for (const json& s : x.at("shapes")) {
        ShapeMetrics m;
        m.label = s.at("label").get<std::string>();
        m.type = s.at("type").get<std::string>();
        m.matched = s.at("matched").get<bool>();
        m.merged = s.at("merged").get<bool>();
        if (m.matched) {
          m.dsc_3d = s.at("dsc_3d").get<double>();
          m.hd = s.at("hd_mm").get<double>();
          m.hd95 = s.at("hd95_mm").get<double>();
          m.volume_error_pct = s.at("volume_error_pct").get<double>();
          m.surface_area_error_pct = s.at("surface_area_error_pct").get<double>();
          m.roundness = s.at("roundness").get<double>();
          m.flatness = s.at("flatness").get<double>();
          m.elongation = s.at("elongation").get<double>();
          m.icp_rms = s.at("icp_rms_mm").get<double>();
          m.error_map_rms = s.at("error_map_rms_mm").get<double>();
        }
        if (s.contains("fit")) {
          const json& f = s.at("fit");
          FitErrors e;
          e.fitted = shape_from_json(f.at("shape"));
          e.rms = f.at("rms_mm").get<double>();
          e.converged = f.at("converged").get<bool>();
          e.center_error = f.at("center_error_mm").get<double>();
          for (const auto& [k, v] : f.at("parameter_errors").items()) {
            e.parameters[k.substr(0, k.size() - 3)] = v.get<double>();
          }
          m.fit = std::move(e);
        }
        rr.shapes.push_back(std::move(m));
      }
      r.repeats.push_back(std::move(rr));
    }
    auto stat = [](const json& s) { return Stat{s.at("mean").get<double>(), s.at("std").get<double>(), s.at("count").get<std::size_t>()}; };
    const json& agg = j.at("aggregate");
    r.mean_dsc_3d = stat(agg.at("mean_dsc_3d"));
    r.mean_hd95 = stat(agg.at("mean_hd95_mm"));
    for (const auto& [label, metrics] : agg.at("shapes").items()) {
      for (const auto& [name, s] : metrics.items()) r.shape_stats[label][name] = stat(s);
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("report: ") + e.what());
  }
}

QaReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  try {
    return report_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kInvalidInput, "report: " + path.string() + ": " + e.what());
  }
}

// Sweeps ----------------------------------------------------------------------

std::vector<SweepRow> sweep_speed(const ExperimentConfig& config, const std::vector<double>& speeds) {
  if (speeds.empty()) throw Error(ErrorKind::kInvalidInput, "sweep_speed: no speeds");
  std::vector<SweepRow> rows;
  for (double v : speeds) {
    ExperimentConfig c = config;
    c.trajectory.plan.reset();
    c.trajectory.speed = v;
    c.validate();
    SweepRow row{v, c.trajectory.axial_angle_deg, c.trajectory.lateral_tilt_deg, sweep_count(c), run_baseline(c)};
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> sweep_angle(const ExperimentConfig& config, const std::vector<double>& axial_angles_deg,
                                  const std::vector<double>& lateral_tilts_deg) {
  if (axial_angles_deg.empty() || lateral_tilts_deg.empty()) {
    throw Error(ErrorKind::kInvalidInput, "sweep_angle: empty angle list");
  }
  std::vector<SweepRow> rows;
  for (double a : axial_angles_deg) {
    for (double t : lateral_tilts_deg) {
      ExperimentConfig c = config;
      c.trajectory.plan.reset();
      c.trajectory.axial_angle_deg = a;
      c.trajectory.lateral_tilt_deg = t;
      c.validate();
      SweepRow row{c.trajectory.speed, a, t, sweep_count(c), run_baseline(c)};
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::vector<std::string> qa_failures(const QaReport& report, const QaThresholds& thresholds) {
  std::vector<std::string> out;
  if (thresholds.require_all_shapes) {
    for (const auto& r : report.repeats) {
      for (const auto& m : r.shapes) {
        if (!m.matched) out.push_back("repeat " + std::to_string(r.index) + ": " + m.label + " missing");
      }
    }
  }
  for (const auto& [label, metrics] : report.shape_stats) {
    if (thresholds.min_dsc_3d && metrics.at("dsc_3d").mean < *thresholds.min_dsc_3d) {
      out.push_back(label + ": mean DSC-3D " + num(metrics.at("dsc_3d").mean) + " < " + num(*thresholds.min_dsc_3d));
    }
    if (thresholds.max_hd95 && metrics.at("hd95_mm").mean > *thresholds.max_hd95) {
      out.push_back(label + ": mean HD95 " + num(metrics.at("hd95_mm").mean) + " mm > " + num(*thresholds.max_hd95));
    }
  }
  return out;
}

// Export ----------------------------------------------------------------------

void write_report_json(const QaReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << to_json(report).dump(2) << '\n';
  finish(out, path);
}

void write_shape_csv(const QaReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kShapeCsvHeader << '\n';
  for (const auto& r : report.repeats) {
    for (const auto& m : r.shapes) {
      out << r.index << ',' << r.seed << ',' << m.label << ',' << m.type << ',' << (m.matched ? 1 : 0) << ','
          << (m.merged ? 1 : 0);
      if (!m.matched) {
        out << std::string(17, ',') << '\n';
        continue;
      }
      out << ',' << num(m.dsc_3d) << ',' << num(m.hd) << ',' << num(m.hd95) << ',' << num(m.volume_error_pct) << ','
          << num(m.surface_area_error_pct) << ',' << num(m.roundness) << ',' << num(m.flatness) << ','
          << num(m.elongation) << ',' << num(m.icp_rms) << ',' << (m.fit ? num(m.fit->rms) : "") << ','
          << (m.fit ? num(m.fit->center_error) : "") << ',' << opt_param(m.fit, "radius") << ','
          << opt_param(m.fit, "semi_axis_1") << ',' << opt_param(m.fit, "semi_axis_2") << ','
          << opt_param(m.fit, "semi_axis_3") << ',' << opt_param(m.fit, "height") << ','
          << opt_param(m.fit, "edge_length") << '\n';
    }
  }
  finish(out, path);
}

void write_speed_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kSpeedCsvHeader << '\n';
  for (const auto& row : rows) {
    const QaReport& r = row.report;
    out << num(row.speed) << ',' << r.repeats.size() << ',' << num(r.mean_dsc_3d.mean) << ','
        << num(r.mean_dsc_3d.std) << ',' << num(r.mean_hd95.mean) << ',' << num(r.mean_hd95.std) << '\n';
  }
  finish(out, path);
}

void write_angle_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kAngleCsvHeader << '\n';
  for (const auto& row : rows) {
    const QaReport& r = row.report;
    std::size_t min_components = r.repeats.empty() ? 0 : r.repeats.front().components;
    for (const auto& x : r.repeats) min_components = std::min(min_components, x.components);
    out << num(row.axial_angle_deg) << ',' << num(row.lateral_tilt_deg) << ',' << row.sweeps << ','
        << r.repeats.size() << ',' << num(r.mean_dsc_3d.mean) << ',' << num(r.mean_dsc_3d.std) << ','
        << num(r.mean_hd95.mean) << ',' << num(r.mean_hd95.std) << ',' << min_components << '\n';
  }
  finish(out, path);
}

void export_report(const QaReport& report, const std::filesystem::path& dir, const std::set<std::string>& formats) {
  for (const auto& f : formats) {
    if (f != "json" && f != "csv" && f != "stl" && f != "ply") throw Error(ErrorKind::kInvalidInput, "export: unknown format " + f);
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string());
  if (formats.count("json")) write_report_json(report, dir / "report.json");
  if (formats.count("csv")) write_shape_csv(report, dir / "shapes.csv");
  const bool stl = formats.count("stl") > 0, ply = formats.count("ply") > 0;
  if (!stl && !ply) return;

  const PhantomScene scene = resolve_scene(config_from_json(report.config));
  auto write_mesh = [&](const TriangleMesh& mesh, const std::filesystem::path& stem) {
    if (stl) write_stl(mesh, stem.string() + ".stl");
    if (ply) write_ply(mesh, stem.string() + ".ply");
  };
  for (std::size_t k = 0; k < report.repeats.size(); ++k) {
    const RepeatResult& r = report.repeats[k];
    char name[32];
    std::snprintf(name, sizeof name, "repeat_%02d", r.index);
    const auto sub = dir / name;
    std::filesystem::create_directories(sub, ec);
    if (ec) throw Error(ErrorKind::kIo, "cannot create " + sub.string());
    for (std::size_t i = 0; i < r.shapes.size() && i < scene.inclusions.size(); ++i) {
      const ShapeMetrics& m = r.shapes[i];
      write_mesh(ground_truth_mesh(scene.inclusions[i].shape, 0.5), sub / (m.label + "_reference"));
      if (m.fit) write_mesh(ground_truth_mesh(m.fit->fitted, 0.5), sub / (m.label + "_fit"));
    }
    if (k >= report.artifacts.size()) continue;
    for (const auto& a : report.artifacts[k]) {
      if (stl) write_stl(a.error_map.mesh, sub / (a.label + "_reconstruction.stl"));
      if (ply) write_ply(a.error_map.mesh, sub / (a.label + "_error.ply"), a.error_map.distances, "distance");
    }
  }
}

}  // namespace usqa
