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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "usqa/error.hpp"
#include "usqa/pipeline.hpp"

using namespace usqa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("usqa_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// One sphere in a short block keeps a full run to a couple of seconds.
ExperimentConfig small_config(const fs::path& dir) {
  PhantomScene scene = default_scene();
  scene.inclusions = {{"sphere", Sphere{Vec3(15, 0, -20), 8.0}}};
  scene.block.min = Vec3(0, -20, -40);
  scene.block.max = Vec3(30, 20, 0);
  save_scene(scene, dir / "scene.json");
  ExperimentConfig c;
  c.scene = (dir / "scene.json").string();
  c.repeats = 2;
  c.seed = 5;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

// Metrics only; the embedded config may hold nulls for unset optionals.
void check_finite(nlohmann::json j) {
  if (j.is_object()) j.erase("config");
  if (j.is_structured()) {
    for (const auto& v : j) {
      if (v.is_number()) CHECK(std::isfinite(v.get<double>()));
      if (v.is_structured()) check_finite(v);
      CHECK(!v.is_null());
    }
  }
}

}  // namespace

TEST_CASE("config: round trip, partial documents, hash and validation") {
  ExperimentConfig c;
  c.repeats = 4;
  c.seed = 99;
  c.trajectory.axial_angle_deg = 45.0;
  c.tracker.kind = TrackerKind::kElectromagnetic;
  c.tracker.distortion.amplitude = 2.0;
  c.thresholds.min_dsc_3d = 0.9;
  const nlohmann::json j = to_json(c);
  CHECK(to_json(config_from_json(j)) == j);
  CHECK(config_hash(config_from_json(j)) == config_hash(c));
  CHECK(config_hash(c).size() == 16);

  ExperimentConfig d = c;
  d.seed = 100;
  CHECK(config_hash(d) != config_hash(c));

  const ExperimentConfig p = config_from_json({{"repeats", 1}, {"frame", {{"frame_rate_hz", 30.0}}}});
  CHECK(p.repeats == 1);
  CHECK(p.frame.frame_rate == 30.0);
  CHECK(p.frame.width == FrameSpec{}.width);
  CHECK(p.grid_spacing == 0.5);
  CHECK(ExperimentConfig{}.repeats == 3);

  for (const nlohmann::json& bad : {nlohmann::json{{"repeats", 0}}, nlohmann::json{{"grid_spacing_mm", -1.0}},
                                    nlohmann::json{{"frame", {{"width", 0}}}}, nlohmann::json{{"repeats", "three"}},
                                    nlohmann::json::array()}) {
    try {
      config_from_json(bad);
      FAIL("expected an error for " << bad.dump());
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kInvalidInput);
    }
  }
}

TEST_CASE("summarize: sample standard deviation, zero for one value") {
  const Stat one = summarize({0.93});
  CHECK(one.mean == 0.93);
  CHECK(one.std == 0.0);
  CHECK(one.count == 1);
  const Stat s = summarize({1.0, 2.0, 4.0});
  CHECK(s.mean == doctest::Approx(7.0 / 3.0));
  // sum of squared deviations 42/9, divided by n - 1.
  CHECK(s.std == doctest::Approx(std::sqrt(42.0 / 9.0 / 2.0)));
}

TEST_CASE("run_baseline: deterministic, finite, aggregates match repeats") {
  const fs::path dir = scratch("baseline");
  const ExperimentConfig c = small_config(dir);
  const QaReport a = run_baseline(c);
  const QaReport b = run_baseline(c);
  CHECK(to_json(a).dump() == to_json(b).dump());
  REQUIRE(a.repeats.size() == 2);
  CHECK(a.repeats[0].seed == 5);
  CHECK(a.repeats[1].seed == 6);
  CHECK(a.config_hash == config_hash(c));

  const nlohmann::json j = to_json(a);
  check_finite(j);
  CHECK(j.at("aggregate").at("repeats") == 2);
  const auto& m = a.repeats[0].shapes.at(0);
  CHECK(m.matched);
  CHECK(m.dsc_3d > 0.92);
  CHECK(m.hd95 < 1.5);
  CHECK(m.fit.has_value());
  CHECK(std::abs(m.fit->parameters.at("radius")) < 1.0);
  CHECK(a.repeats[0].components == 1);

  const Stat& dsc = a.shape_stats.at("sphere").at("dsc_3d");
  CHECK(dsc.count == 2);
  CHECK(dsc.mean == doctest::Approx(0.5 * (a.repeats[0].shapes[0].dsc_3d + a.repeats[1].shapes[0].dsc_3d)));
  CHECK(dsc.std == doctest::Approx(std::abs(a.repeats[0].shapes[0].dsc_3d - a.repeats[1].shapes[0].dsc_3d) / std::sqrt(2.0)));

  ExperimentConfig single = c;
  single.repeats = 1;
  const QaReport s = run_baseline(single);
  CHECK(s.mean_dsc_3d.std == 0.0);
  for (const auto& [name, stat] : s.shape_stats.at("sphere")) CHECK(stat.std == 0.0);
  // First repeat does not depend on how many follow.
  CHECK(to_json(s).at("repeats")[0] == j.at("repeats")[0]);
}

TEST_CASE("stages from persisted artifacts reproduce the in-memory run") {
  const fs::path dir = scratch("stages");
  ExperimentConfig c = small_config(dir);
  c.repeats = 1;
  const QaReport direct = run_baseline(c);

  const PhantomScene scene = resolve_scene(c);
  const ScanResult scan = simulate_scan(scene, resolve_plan(c, scene), c.frame, c.tracker, c.seed);
  write_scan(scan, {{"seed", c.seed}}, dir / "scan");
  const LoadedScan loaded = read_scan(dir / "scan");
  REQUIRE(loaded.frames.size() == scan.frames.size());

  const auto masks = segment_scan(loaded.frames, c.segmentation);
  const auto direct_masks = segment_scan(scan.frames, c.segmentation);
  for (std::size_t i = 0; i < masks.size(); ++i) CHECK(masks[i].bits == direct_masks[i].bits);
  std::vector<BinaryMask> reread;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const fs::path p = dir / "masks" / (std::to_string(i) + ".pbm");
    fs::create_directories(p.parent_path());
    write_pbm(masks[i], p);
    reread.push_back(read_pbm(p));
  }
  const VoxelGrid grid = reconstruct_scan(loaded.frames, reread, c.grid_spacing);
  CHECK(grid.values == reconstruct_scan(scan.frames, masks, c.grid_spacing).values);
  write_mhd(grid, dir / "volume.mhd");
  const VoxelGrid vol = read_mhd(dir / "volume.mhd");
  CHECK(vol.values == grid.values);

  RepeatResult r = evaluate_volume(vol, scene, c, c.seed);
  annotate_scan(r, loaded.frames, reread, loaded.meta.contains("estimated_latency_s") &&
                                              loaded.meta["estimated_latency_s"].is_number()
                                          ? std::optional<double>(loaded.meta["estimated_latency_s"].get<double>())
                                          : std::nullopt);
  CHECK(to_json(make_report(c, {r})).dump() == to_json(direct).dump());
}

TEST_CASE("export: JSON re-emits byte-identically, CSV schema, PLY header") {
  const fs::path dir = scratch("export");
  ExperimentConfig c = small_config(dir);
  c.repeats = 1;
  const QaReport report = run_baseline(c, true);
  export_report(report, dir / "out", {"json", "csv", "stl", "ply"});

  const std::string text = slurp(dir / "out" / "report.json");
  CHECK(nlohmann::json::parse(text).dump(2) + "\n" == text);
  const QaReport back = load_report(dir / "out" / "report.json");
  CHECK(to_json(back).dump(2) + "\n" == text);

  std::ifstream csv(dir / "out" / "shapes.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == kShapeCsvHeader);
  const std::size_t columns = split(line).size();
  CHECK(columns == 23);
  int rows = 0;
  while (std::getline(csv, line)) {
    CHECK(split(line).size() == columns);
    ++rows;
  }
  CHECK(rows == 1);

  // ASCII header of a binary PLY: magic, format, element/property lines, end_header.
  std::ifstream ply(dir / "out" / "repeat_00" / "sphere_error.ply", std::ios::binary);
  REQUIRE(ply.good());
  std::vector<std::string> header;
  while (std::getline(ply, line) && line != "end_header") header.push_back(line);
  CHECK(line == "end_header");
  REQUIRE(header.size() >= 8);
  CHECK(header[0] == "ply");
  CHECK(header[1] == "format binary_little_endian 1.0");
  const std::size_t nv = report.artifacts.at(0).at(0).error_map.mesh.vertices.size();
  const std::size_t nf = report.artifacts.at(0).at(0).error_map.mesh.triangles.size();
  CHECK(std::find(header.begin(), header.end(), "element vertex " + std::to_string(nv)) != header.end());
  CHECK(std::find(header.begin(), header.end(), "element face " + std::to_string(nf)) != header.end());
  CHECK(std::find(header.begin(), header.end(), "property float distance") != header.end());
  for (const auto& h : header) {
    const bool known = h == "ply" || h.rfind("format ", 0) == 0 || h.rfind("comment ", 0) == 0 ||
                       h.rfind("element ", 0) == 0 || h.rfind("property ", 0) == 0;
    CHECK_MESSAGE(known, h);
  }
  const auto body = fs::file_size(dir / "out" / "repeat_00" / "sphere_error.ply") - static_cast<std::size_t>(ply.tellg());
  CHECK(body == nv * 16 + nf * 13);
  CHECK(fs::exists(dir / "out" / "repeat_00" / "sphere_reference.stl"));
  CHECK(fs::exists(dir / "out" / "repeat_00" / "sphere_fit.stl"));
  CHECK(fs::exists(dir / "out" / "repeat_00" / "sphere_reconstruction.stl"));

  CHECK_THROWS_AS(export_report(report, dir / "out", {"xml"}), Error);
}

TEST_CASE("sweeps: CSV rows and single-speed consistency") {
  const fs::path dir = scratch("sweep");
  ExperimentConfig c = small_config(dir);
  c.repeats = 1;
  const auto rows = sweep_speed(c, {5.0});
  REQUIRE(rows.size() == 1);
  CHECK(to_json(rows[0].report).dump() == to_json(run_baseline(c)).dump());
  write_speed_csv(rows, dir / "speed.csv");
  std::ifstream in(dir / "speed.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == kSpeedCsvHeader);
  std::getline(in, line);
  CHECK(split(line).size() == split(kSpeedCsvHeader).size());
  CHECK_THROWS_AS(sweep_speed(c, {}), Error);

  const auto angles = sweep_angle(c, {0.0, 90.0}, {0.0});
  REQUIRE(angles.size() == 2);
  CHECK(angles[0].sweeps == 1);
  CHECK(angles[1].report.repeats[0].components == 1);
  CHECK(angles[1].report.repeats[0].shapes[0].dsc_3d > 0.9);
  CHECK(to_json(angles[0].report).dump() == to_json(rows[0].report).dump());
  write_angle_csv(angles, dir / "angle.csv");
  std::ifstream ain(dir / "angle.csv");
  std::getline(ain, line);
  CHECK(line == kAngleCsvHeader);
  int n = 0;
  while (std::getline(ain, line)) n += split(line).size() == split(kAngleCsvHeader).size();
  CHECK(n == 2);
}

TEST_CASE("evaluate_volume: missing shape is flagged and scored zero") {
  const fs::path dir = scratch("missing");
  ExperimentConfig c = small_config(dir);
  PhantomScene scene = resolve_scene(c);
  scene.inclusions.push_back({"cylinder", Cylinder{Vec3(15, 0, -32), Vec3::UnitX(), 3.0, 10.0}});
  GridSpec g;
  g.origin = Vec3(2, -12, -32);
  g.spacing = 0.5;
  g.dims = {53, 49, 33};
  VoxelGrid grid(g);
  const VoxelSet sphere = voxelize(scene.inclusions[0].shape, g);
  for (std::size_t i = 0; i < sphere.occupancy.size(); ++i) grid.values[i] = sphere.occupancy[i] ? 255 : 0;

  const RepeatResult r = evaluate_volume(grid, scene, c, 1);
  REQUIRE(r.shapes.size() == 2);
  CHECK(r.shapes[0].matched);
  CHECK(!r.shapes[1].matched);
  CHECK(std::count(r.flags.begin(), r.flags.end(), "missing:cylinder") == 1);
  CHECK(std::count(r.flags.begin(), r.flags.end(), "component_count:1") == 1);
  CHECK(r.mean_dsc_3d == doctest::Approx(r.shapes[0].dsc_3d / 2));
  CHECK(r.mean_hd95 == r.shapes[0].hd95);

  QaReport rep = make_report(c, {r});
  CHECK(qa_failures(rep, QaThresholds{}).size() == 1);
  CHECK(qa_failures(rep, QaThresholds{std::nullopt, std::nullopt, false}).empty());
  CHECK(qa_failures(rep, QaThresholds{1.01, std::nullopt, false}).size() == 1);
  CHECK(qa_failures(rep, QaThresholds{std::nullopt, 0.0, false}).size() == 1);
  check_finite(to_json(rep));
}
