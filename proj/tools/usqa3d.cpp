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

// usqa3d: simulate, segment, reconstruct and evaluate phantom scans.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "usqa/error.hpp"
#include "usqa/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace usqa;

namespace {

constexpr int kExitInvalidConfig = 2;
constexpr int kExitQaFailure = 3;

struct Globals {
  std::string config;
  std::string seg_config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

// Raised for problems in the user's configuration, as opposed to runtime failures.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ExperimentConfig load(const Globals& g) {
  try {
    json j = g.config.empty() ? json::object() : read_json(g.config);
    if (!g.seg_config.empty()) {
      json seg = j.value("segmentation", json::object());
      seg.merge_patch(read_json(g.seg_config));
      j["segmentation"] = seg;
    }
    if (g.seed) j["seed"] = *g.seed;
    return config_from_json(j);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

std::vector<BinaryMask> read_masks(const fs::path& dir, std::size_t n) {
  std::vector<BinaryMask> masks;
  for (std::size_t i = 0; i < n; ++i) masks.push_back(read_pbm(dir / (frame_name(i) + ".pbm")));
  return masks;
}

std::optional<double> scan_latency(const json& meta) {
  if (meta.contains("estimated_latency_s") && meta.at("estimated_latency_s").is_number()) {
    return meta.at("estimated_latency_s").get<double>();
  }
  return std::nullopt;
}

int gate(const QaReport& report, const ExperimentConfig& config) {
  const auto failures = qa_failures(report, config.thresholds);
  for (const auto& f : failures) std::cerr << "QA FAIL " << f << '\n';
  return failures.empty() ? 0 : kExitQaFailure;
}

void print_summary(const QaReport& r) {
  std::printf("config %s  repeats %zu  mean DSC-3D %.4f +- %.4f  mean HD95 %.3f +- %.3f mm\n", r.config_hash.c_str(),
              r.repeats.size(), r.mean_dsc_3d.mean, r.mean_dsc_3d.std, r.mean_hd95.mean, r.mean_hd95.std);
  for (const auto& [label, m] : r.shape_stats) {
    std::printf("  %-10s DSC-3D %.4f +- %.4f  HD95 %.3f +- %.3f mm  vol err %+.2f %%\n", label.c_str(),
                m.at("dsc_3d").mean, m.at("dsc_3d").std, m.at("hd95_mm").mean, m.at("hd95_mm").std,
                m.at("volume_error_pct").mean);
  }
  for (const auto& rep : r.repeats) {
    for (const auto& f : rep.flags) std::printf("  repeat %d flag %s\n", rep.index, f.c_str());
  }
}

std::string sweep_dir_name(const char* prefix, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%g", prefix, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tracked-ultrasound phantom QA: simulate, reconstruct and score 3D scans"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment config JSON");
  app.add_option("--seg-config", g.seg_config, "segmentation overrides JSON");
  app.add_option("--seed", g.seed, "base seed, overrides the config");
  app.add_option("--out-dir", g.out_dir, "output directory");

  auto* simulate = app.add_subcommand("simulate", "simulate a tracked scan into out-dir");
  int sim_repeat = 0;
  simulate->add_option("--repeat", sim_repeat, "repeat index, seed offset")->check(CLI::NonNegativeNumber);

  auto* segment = app.add_subcommand("segment", "segment every frame of a scan into out-dir/masks");
  std::string scan_dir;
  segment->add_option("--scan", scan_dir, "scan directory")->required();

  auto* recon = app.add_subcommand("reconstruct", "compound masks into out-dir/volume.mhd");
  std::string masks_dir;
  recon->add_option("--scan", scan_dir, "scan directory")->required();
  recon->add_option("--masks", masks_dir, "mask directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score a reconstructed volume against the scene");
  std::string volume_path;
  evaluate->add_option("--volume", volume_path, "volume header (.mhd)")->required();
  evaluate->add_option("--scan", scan_dir, "scan directory, for frame statistics");
  evaluate->add_option("--masks", masks_dir, "mask directory, for frame statistics");
  evaluate->add_option("--repeat", sim_repeat, "repeat index the volume came from")->check(CLI::NonNegativeNumber);

  auto* baseline = app.add_subcommand("baseline", "full pipeline over all repeats");

  auto* sweep_v = app.add_subcommand("sweep-speed", "baseline at each scan speed");
  std::vector<double> speeds{2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5};
  sweep_v->add_option("--speeds", speeds, "speeds in mm/s")->delimiter(',');

  auto* sweep_a = app.add_subcommand("sweep-angle", "baseline at each axial angle and lateral tilt");
  std::vector<double> axial{0.0, 30.0, 45.0, 90.0};
  std::vector<double> tilt{0.0};
  sweep_a->add_option("--axial", axial, "axial angles in degrees")->delimiter(',');
  sweep_a->add_option("--tilt", tilt, "lateral tilts in degrees")->delimiter(',');

  auto* exporter = app.add_subcommand("export", "re-emit a saved report in other formats");
  std::string report_path;
  std::vector<std::string> formats{"json", "csv", "stl", "ply"};
  exporter->add_option("--report", report_path, "report JSON")->required();
  exporter->add_option("--formats", formats, "json, csv, stl, ply")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInvalidConfig;
  }

  const fs::path out = g.out_dir;
  try {
    if (*simulate) {
      const ExperimentConfig config = load(g);
      const PhantomScene scene = resolve_scene(config);
      const TrajectoryPlan plan = resolve_plan(config, scene);
      const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(sim_repeat);
      const ScanResult scan = simulate_scan(scene, plan, config.frame, config.tracker, seed);
      write_scan(scan, {{"config", to_json(config)}, {"seed", seed}, {"plan", to_json(plan)}}, out);
      std::printf("%zu frames (%zu untracked) -> %s\n", scan.frames.size(), scan.untracked, out.string().c_str());
      if (scan.dropout_warning) std::fprintf(stderr, "warning: more than half of the frames are untracked\n");
      return 0;
    }
    if (*segment) {
      const ExperimentConfig config = load(g);
      const LoadedScan scan = read_scan(scan_dir);
      const auto masks = segment_scan(scan.frames, config.segmentation, config.use_gt_masks);
      fs::create_directories(out / "masks");
      for (std::size_t i = 0; i < masks.size(); ++i) write_pbm(masks[i], out / "masks" / (frame_name(i) + ".pbm"));
      std::printf("%zu masks -> %s\n", masks.size(), (out / "masks").string().c_str());
      return 0;
    }
    if (*recon) {
      const ExperimentConfig config = load(g);
      const LoadedScan scan = read_scan(scan_dir);
      const auto masks = read_masks(masks_dir, scan.frames.size());
      const VoxelGrid grid = reconstruct_scan(scan.frames, masks, config.grid_spacing);
      fs::create_directories(out);
      write_mhd(grid, out / "volume.mhd");
      std::printf("%d x %d x %d voxels -> %s\n", grid.geometry.dims[0], grid.geometry.dims[1], grid.geometry.dims[2],
                  (out / "volume.mhd").string().c_str());
      return 0;
    }
    if (*evaluate) {
      const ExperimentConfig config = load(g);
      const VoxelGrid grid = read_mhd(volume_path);
      const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(sim_repeat);
      std::vector<ShapeArtifacts> artifacts;
      RepeatResult r = evaluate_volume(grid, resolve_scene(config), config, seed, &artifacts);
      r.index = sim_repeat;
      if (!scan_dir.empty() && !masks_dir.empty()) {
        const LoadedScan scan = read_scan(scan_dir);
        annotate_scan(r, scan.frames, read_masks(masks_dir, scan.frames.size()), scan_latency(scan.meta));
      }
      QaReport report = make_report(config, {r});
      report.artifacts = {std::move(artifacts)};
      export_report(report, out, {"json", "csv", "stl", "ply"});
      print_summary(report);
      return gate(report, config);
    }
    if (*baseline) {
      const ExperimentConfig config = load(g);
      const QaReport report = run_baseline(config, true);
      export_report(report, out, {"json", "csv", "stl", "ply"});
      print_summary(report);
      return gate(report, config);
    }
    if (*sweep_v || *sweep_a) {
      const ExperimentConfig config = load(g);
      const bool by_speed = sweep_v->parsed();
      const auto rows = by_speed ? sweep_speed(config, speeds) : sweep_angle(config, axial, tilt);
      int code = 0;
      for (const auto& row : rows) {
        const fs::path dir = by_speed ? out / sweep_dir_name("speed_", row.speed)
                                      : out / (sweep_dir_name("axial_", row.axial_angle_deg) +
                                               sweep_dir_name("_tilt_", row.lateral_tilt_deg));
        export_report(row.report, dir, {"json", "csv"});
        if (gate(row.report, config) != 0) code = kExitQaFailure;
      }
      if (by_speed) {
        write_speed_csv(rows, out / "speed_sweep.csv");
      } else {
        write_angle_csv(rows, out / "angle_sweep.csv");
      }
      for (const auto& row : rows) {
        std::printf("speed %g  axial %g  tilt %g  sweeps %zu  DSC-3D %.4f +- %.4f  HD95 %.3f +- %.3f\n", row.speed,
                    row.axial_angle_deg, row.lateral_tilt_deg, row.sweeps, row.report.mean_dsc_3d.mean,
                    row.report.mean_dsc_3d.std, row.report.mean_hd95.mean, row.report.mean_hd95.std);
      }
      return code;
    }
    if (*exporter) {
      const QaReport report = load_report(report_path);
      export_report(report, out, std::set<std::string>(formats.begin(), formats.end()));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
