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

#include "usqa/reconstruction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "usqa/error.hpp"

namespace usqa {

void GridSpec::validate() const {
  if (!(std::isfinite(spacing) && spacing > 0.0)) throw Error(ErrorKind::kInvalidInput, "grid: spacing must be positive");
  if (!origin.allFinite()) throw Error(ErrorKind::kInvalidInput, "grid: origin must be finite");
  for (int d : dims) {
    if (d <= 0) throw Error(ErrorKind::kInvalidInput, "grid: dims must be positive");
  }
  if (size() > (std::size_t{1} << 31)) throw Error(ErrorKind::kInvalidInput, "grid: too many voxels");
}

Aabb GridSpec::bounds() const {
  return Aabb{origin, center(dims[0] - 1, dims[1] - 1, dims[2] - 1)};
}

VoxelGrid::VoxelGrid(const GridSpec& spec) : geometry(spec) {
  spec.validate();
  values.assign(spec.size(), 0);
  hit_count.assign(spec.size(), 0);
}

InsertStats insert_frame(VoxelGrid& grid, const BinaryMask& mask, const RigidTransform& pose, double pixel_spacing) {
  InsertStats stats;
  const GridSpec& g = grid.geometry;
  const Mat3 r = pose.rotation_matrix();
  const Vec3 ex = r.col(0) * pixel_spacing;
  const Vec3 ey = r.col(1) * pixel_spacing;
  const Vec3 t = pose.translation();
  const double inv = 1.0 / g.spacing;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      const Vec3 q = ((t + x * ex + y * ey) - g.origin) * inv;
      const long i = std::lround(q.x()), j = std::lround(q.y()), k = std::lround(q.z());
      if (i < 0 || j < 0 || k < 0 || i >= g.dims[0] || j >= g.dims[1] || k >= g.dims[2]) {
        ++stats.outside;
        continue;
      }
      const std::size_t idx = g.index(static_cast<int>(i), static_cast<int>(j), static_cast<int>(k));
      grid.values[idx] = 255;
      ++grid.hit_count[idx];
      ++stats.inserted;
    }
  }
  return stats;
}

VoxelGrid reconstruct(std::span<const FrameRef> frames, const GridSpec& spec, InsertStats* stats) {
  if (frames.empty()) throw Error(ErrorKind::kInvalidInput, "reconstruct: no frames");
  VoxelGrid grid(spec);
  InsertStats total;
  for (const FrameRef& f : frames) {
    if (f.mask == nullptr) throw Error(ErrorKind::kInvalidInput, "reconstruct: frame without mask");
    const InsertStats s = insert_frame(grid, *f.mask, f.pose, f.pixel_spacing);
    total.inserted += s.inserted;
    total.outside += s.outside;
  }
  if (stats) *stats = total;
  return grid;
}

GridSpec auto_grid(std::span<const FrameRef> frames, double spacing, double padding) {
  if (frames.empty()) throw Error(ErrorKind::kInvalidInput, "auto_grid: no frames");
  if (!(spacing > 0.0) || !(padding >= 0.0)) throw Error(ErrorKind::kInvalidInput, "auto_grid: invalid spacing");
  Aabb box;
  for (const FrameRef& f : frames) {
    const double w = f.mask->width * f.pixel_spacing;
    const double h = f.mask->height * f.pixel_spacing;
    for (double u : {0.0, w})
      for (double v : {0.0, h}) box.extend(f.pose.apply(Vec3(u, v, 0.0)));
  }
  GridSpec spec;
  spec.spacing = spacing;
  spec.origin = box.min - Vec3::Constant(padding);
  for (int a = 0; a < 3; ++a) {
    spec.dims[a] = static_cast<int>(std::ceil((box.max[a] - box.min[a] + 2.0 * padding) / spacing - 1e-9)) + 1;
  }
  spec.validate();
  return spec;
}

Vec3 LabeledComponents::centroid(int label) const {
  Vec3 sum = Vec3::Zero();
  std::size_t n = 0;
  for (int k = 0; k < geometry.dims[2]; ++k)
    for (int j = 0; j < geometry.dims[1]; ++j)
      for (int i = 0; i < geometry.dims[0]; ++i) {
        if (labels[geometry.index(i, j, k)] == label) {
          sum += geometry.center(i, j, k);
          ++n;
        }
      }
  if (n == 0) throw Error(ErrorKind::kDegenerateComponent, "centroid: empty label");
  return sum / static_cast<double>(n);
}

LabeledComponents threshold_and_label(const VoxelGrid& grid, std::uint8_t iso, std::size_t min_voxels) {
  const GridSpec& g = grid.geometry;
  LabeledComponents out;
  out.geometry = g;
  out.labels.assign(g.size(), 0);
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> queue;
  for (std::size_t seed = 0; seed < g.size(); ++seed) {
    if (grid.values[seed] < iso || out.labels[seed] != 0) continue;
    const auto label = static_cast<std::int32_t>(sizes.size() + 1);
    out.labels[seed] = label;
    queue.assign(1, seed);
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const std::size_t v = queue[head];
      const int i = static_cast<int>(v % nx), j = static_cast<int>((v / nx) % ny), k = static_cast<int>(v / nx / ny);
      for (int dk = -1; dk <= 1; ++dk)
        for (int dj = -1; dj <= 1; ++dj)
          for (int di = -1; di <= 1; ++di) {
            const int a = i + di, b = j + dj, c = k + dk;
            if (a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz) continue;
            const std::size_t u = g.index(a, b, c);
            if (grid.values[u] >= iso && out.labels[u] == 0) {
              out.labels[u] = label;
              queue.push_back(u);
            }
          }
    }
    sizes.push_back(queue.size());
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
  std::vector<std::int32_t> remap(sizes.size() + 1, 0);
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (sizes[order[r]] < min_voxels) break;
    remap[order[r] + 1] = static_cast<std::int32_t>(r + 1);
    out.counts.push_back(sizes[order[r]]);
  }
  for (auto& l : out.labels) l = remap[l];
  return out;
}

namespace {

// Kuhn split: the tetrahedra 0 -> e_a -> e_a + e_b -> (1,1,1) for every axis order.
constexpr int kOrders[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

}  // namespace

TriangleMesh extract_surface(const GridSpec& spec, std::span<const std::uint8_t> occupancy, double smoothing_sigma) {
  spec.validate();
  if (occupancy.size() != spec.size()) throw Error(ErrorKind::kInvalidInput, "extract_surface: size mismatch");
  if (!(smoothing_sigma >= 0.0)) throw Error(ErrorKind::kInvalidInput, "extract_surface: negative smoothing");
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  std::array<int, 3> lo{nx, ny, nz}, hi{-1, -1, -1};
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        if (!occupancy[spec.index(i, j, k)]) continue;
        lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
        hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
      }
  if (hi[0] < 0) throw Error(ErrorKind::kDegenerateComponent, "extract_surface: empty component");

  // Local field over the occupied box plus a margin; outside the grid is empty.
  const int radius = smoothing_sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * smoothing_sigma)) : 0;
  const int pad = radius + 1;
  std::array<int, 3> base{}, m{};
  for (int a = 0; a < 3; ++a) {
    base[a] = lo[a] - pad;
    m[a] = hi[a] - lo[a] + 1 + 2 * pad;
  }
  auto lidx = [&](int i, int j, int k) { return (static_cast<std::size_t>(k) * m[1] + j) * m[0] + i; };
  std::vector<double> field(static_cast<std::size_t>(m[0]) * m[1] * m[2], 0.0);
  for (int k = pad; k < m[2] - pad; ++k)
    for (int j = pad; j < m[1] - pad; ++j)
      for (int i = pad; i < m[0] - pad; ++i) {
        field[lidx(i, j, k)] = occupancy[spec.index(base[0] + i, base[1] + j, base[2] + k)] ? 1.0 : 0.0;
      }
  if (radius > 0) {
    std::vector<double> w(2 * radius + 1);
    double total = 0.0;
    for (int d = -radius; d <= radius; ++d) total += w[d + radius] = std::exp(-0.5 * d * d / (smoothing_sigma * smoothing_sigma));
    for (double& x : w) x /= total;
    std::vector<double> tmp(field.size());
    for (int axis = 0; axis < 3; ++axis) {
      std::fill(tmp.begin(), tmp.end(), 0.0);
      const std::array<int, 3> step{axis == 0, axis == 1, axis == 2};
      for (int k = 0; k < m[2]; ++k)
        for (int j = 0; j < m[1]; ++j)
          for (int i = 0; i < m[0]; ++i) {
            const std::array<int, 3> p{i, j, k};
            double acc = 0.0;
            for (int d = -radius; d <= radius; ++d) {
              const int q = p[axis] + d;
              if (q < 0 || q >= m[axis]) continue;
              acc += w[d + radius] * field[lidx(i + d * step[0], j + d * step[1], k + d * step[2])];
            }
            tmp[lidx(i, j, k)] = acc;
          }
      field.swap(tmp);
    }
  }

  auto value = [&](const std::array<int, 3>& p) { return field[lidx(p[0], p[1], p[2])]; };
  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  auto vertex_on = [&](const std::array<int, 3>& a, const std::array<int, 3>& b) {
    const std::array<int, 3>& lo_end = (a[0] <= b[0] && a[1] <= b[1] && a[2] <= b[2]) ? a : b;
    const std::array<int, 3>& hi_end = (&lo_end == &a) ? b : a;
    const int code = (hi_end[0] - lo_end[0]) | ((hi_end[1] - lo_end[1]) << 1) | ((hi_end[2] - lo_end[2]) << 2);
    const std::uint64_t key = static_cast<std::uint64_t>(lidx(lo_end[0], lo_end[1], lo_end[2])) * 8 + code;
    auto [it, fresh] = edge_vertex.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (fresh) {
      const double fa = value(lo_end), fb = value(hi_end);
      const double t = std::clamp((0.5 - fa) / (fb - fa), 1e-3, 1.0 - 1e-3);
      Vec3 p;
      for (int c = 0; c < 3; ++c) p[c] = base[c] + lo_end[c] + t * (hi_end[c] - lo_end[c]);
      mesh.vertices.push_back(spec.origin + spec.spacing * p);
    }
    return it->second;
  };
  auto emit = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, const Vec3& outward) {
    const Vec3& pa = mesh.vertices[a];
    const Vec3 n = (mesh.vertices[b] - pa).cross(mesh.vertices[c] - pa);
    if (n.dot(outward) < 0.0) std::swap(b, c);
    mesh.triangles.push_back({a, b, c});
  };

  for (int k = 0; k + 1 < m[2]; ++k)
    for (int j = 0; j + 1 < m[1]; ++j)
      for (int i = 0; i + 1 < m[0]; ++i) {
        for (const auto& order : kOrders) {
          std::array<std::array<int, 3>, 4> v;
          v[0] = {i, j, k};
          v[1] = v[0];
          v[1][order[0]] += 1;
          v[2] = v[1];
          v[2][order[1]] += 1;
          v[3] = {i + 1, j + 1, k + 1};
          std::array<int, 4> in, out;
          int n_in = 0, n_out = 0;
          for (int q = 0; q < 4; ++q) {
            if (value(v[q]) > 0.5)
              in[n_in++] = q;
            else
              out[n_out++] = q;
          }
          if (n_in == 0 || n_out == 0) continue;
          auto pos = [&](int q) { return Vec3(v[q][0], v[q][1], v[q][2]); };
          if (n_in == 1 || n_out == 1) {
            const bool single_in = n_in == 1;
            const int apex = single_in ? in[0] : out[0];
            const auto& others = single_in ? out : in;
            const std::uint32_t a = vertex_on(v[apex], v[others[0]]);
            const std::uint32_t b = vertex_on(v[apex], v[others[1]]);
            const std::uint32_t c = vertex_on(v[apex], v[others[2]]);
            const Vec3 rest = (pos(others[0]) + pos(others[1]) + pos(others[2])) / 3.0;
            emit(a, b, c, single_in ? Vec3(rest - pos(apex)) : Vec3(pos(apex) - rest));
          } else {
            const std::uint32_t ac = vertex_on(v[in[0]], v[out[0]]);
            const std::uint32_t ad = vertex_on(v[in[0]], v[out[1]]);
            const std::uint32_t bd = vertex_on(v[in[1]], v[out[1]]);
            const std::uint32_t bc = vertex_on(v[in[1]], v[out[0]]);
            const Vec3 outward = (pos(out[0]) + pos(out[1])) - (pos(in[0]) + pos(in[1]));
            emit(ac, ad, bd, outward);
            emit(ac, bd, bc, outward);
          }
        }
      }
  if (mesh.empty()) throw Error(ErrorKind::kDegenerateComponent, "extract_surface: component vanished under smoothing");
  return mesh;
}

TriangleMesh extract_surface(const LabeledComponents& components, int label, double smoothing_sigma) {
  if (label < 1 || static_cast<std::size_t>(label) > components.size()) {
    throw Error(ErrorKind::kInvalidInput, "extract_surface: no such label");
  }
  std::vector<std::uint8_t> occ(components.labels.size());
  for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = components.labels[i] == label;
  return extract_surface(components.geometry, occ, smoothing_sigma);
}

void write_mhd(const VoxelGrid& grid, const std::filesystem::path& header) {
  const GridSpec& g = grid.geometry;
  std::filesystem::path raw = header;
  raw.replace_extension(".raw");
  std::ofstream h(header);
  if (!h) throw Error(ErrorKind::kIo, "cannot write " + header.string());
  h.precision(17);
  h << "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n"
    << "CompressedData = False\nTransformMatrix = 1 0 0 0 1 0 0 0 1\n"
    << "Offset = " << g.origin.x() << ' ' << g.origin.y() << ' ' << g.origin.z() << '\n'
    << "ElementSpacing = " << g.spacing << ' ' << g.spacing << ' ' << g.spacing << '\n'
    << "DimSize = " << g.dims[0] << ' ' << g.dims[1] << ' ' << g.dims[2] << '\n'
    << "ElementType = MET_UCHAR\nElementDataFile = " << raw.filename().string() << '\n';
  std::ofstream r(raw, std::ios::binary);
  if (!r) throw Error(ErrorKind::kIo, "cannot write " + raw.string());
  r.write(reinterpret_cast<const char*>(grid.values.data()), static_cast<std::streamsize>(grid.values.size()));
  if (!r) throw Error(ErrorKind::kIo, "short write " + raw.string());
}

VoxelGrid read_mhd(const std::filesystem::path& header) {
  std::ifstream h(header);
  if (!h) throw Error(ErrorKind::kIo, "cannot open " + header.string());
  std::map<std::string, std::string> fields;
  std::string line;
  while (std::getline(h, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    fields[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const char* key) -> const std::string& {
    const auto it = fields.find(key);
    if (it == fields.end()) throw Error(ErrorKind::kIo, std::string("mhd: missing ") + key);
    return it->second;
  };
  if (need("ElementType") != "MET_UCHAR" || need("NDims") != "3") {
    throw Error(ErrorKind::kIo, "mhd: only 3D MET_UCHAR volumes are supported");
  }
  GridSpec g;
  double sy = 0, sz = 0;
  std::istringstream(need("Offset")) >> g.origin.x() >> g.origin.y() >> g.origin.z();
  std::istringstream(need("ElementSpacing")) >> g.spacing >> sy >> sz;
  std::istringstream(need("DimSize")) >> g.dims[0] >> g.dims[1] >> g.dims[2];
  if (sy != g.spacing || sz != g.spacing) throw Error(ErrorKind::kIo, "mhd: spacing must be isotropic");
  g.validate();
  VoxelGrid grid(g);
  const auto raw = header.parent_path() / need("ElementDataFile");
  std::ifstream r(raw, std::ios::binary);
  if (!r) throw Error(ErrorKind::kIo, "cannot open " + raw.string());
  r.read(reinterpret_cast<char*>(grid.values.data()), static_cast<std::streamsize>(grid.values.size()));
  if (r.gcount() != static_cast<std::streamsize>(grid.values.size())) throw Error(ErrorKind::kIo, "mhd: truncated data");
  return grid;
}

}  // namespace usqa
