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

#include "usqa/segmentation.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "usqa/error.hpp"

namespace usqa {
namespace {

void require_odd(int k, const char* what) {
  if (k < 1 || k % 2 == 0) throw Error(ErrorKind::kInvalidInput, std::string(what) + " must be odd and >= 1");
}

// One pass of a clamped box filter along rows (axis 0) or columns (axis 1);
// `all` selects erosion (every pixel set) instead of dilation (any set).
BinaryMask box_pass(const BinaryMask& m, int k, int axis, bool all) {
  const int r = k / 2;
  const int n = axis == 0 ? m.width : m.height;
  const int lines = axis == 0 ? m.height : m.width;
  BinaryMask out(m.width, m.height);
  std::vector<int> prefix(n + 1);
  for (int line = 0; line < lines; ++line) {
    auto get = [&](int i) { return axis == 0 ? m.at(i, line) : m.at(line, i); };
    prefix[0] = 0;
    for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + get(i);
    for (int i = 0; i < n; ++i) {
      const int lo = std::max(0, i - r);
      const int hi = std::min(n - 1, i + r);
      const int s = prefix[hi + 1] - prefix[lo];
      const bool v = all ? s == hi - lo + 1 : s > 0;
      if (axis == 0) {
        out.at(i, line) = v;
      } else {
        out.at(line, i) = v;
      }
    }
  }
  return out;
}

}  // namespace

void SegConfig::validate(int width, int height) const {
  require_odd(median_kernel, "median_kernel");
  require_odd(close_kernel, "close_kernel");
  require_odd(open_kernel, "open_kernel");
  if (!(dropout_column_fraction >= 0.0)) throw Error(ErrorKind::kInvalidInput, "dropout_column_fraction must be >= 0");
  if (dropout_column_mean_threshold && !(*dropout_column_mean_threshold >= 0.0)) {
    throw Error(ErrorKind::kInvalidInput, "dropout_column_mean_threshold must be >= 0");
  }
  if (!(max_class_mean_ratio > 0.0)) throw Error(ErrorKind::kInvalidInput, "max_class_mean_ratio must be > 0");
  if (roi_border < 0) throw Error(ErrorKind::kInvalidInput, "roi_border must be >= 0");
  if (!resolve_roi(width, height).inside(width, height)) throw Error(ErrorKind::kInvalidInput, "ROI outside image");
}

Roi SegConfig::resolve_roi(int width, int height) const {
  if (roi) return *roi;
  return Roi{roi_border, roi_border, width - 2 * roi_border, height - 2 * roi_border};
}

nlohmann::json to_json(const SegConfig& cfg) {
  nlohmann::json j{{"roi_border", cfg.roi_border},
                   {"median_kernel", cfg.median_kernel},
                   {"close_kernel", cfg.close_kernel},
                   {"open_kernel", cfg.open_kernel},
                   {"dropout_column_fraction", cfg.dropout_column_fraction},
                   {"max_class_mean_ratio", cfg.max_class_mean_ratio}};
  j["roi"] = cfg.roi ? nlohmann::json{cfg.roi->x, cfg.roi->y, cfg.roi->width, cfg.roi->height} : nlohmann::json(nullptr);
  j["dropout_column_mean_threshold"] =
      cfg.dropout_column_mean_threshold ? nlohmann::json(*cfg.dropout_column_mean_threshold) : nlohmann::json(nullptr);
  return j;
}

SegConfig seg_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::kInvalidInput, "segmentation config must be a JSON object");
  SegConfig cfg;
  try {
    if (j.contains("roi") && !j.at("roi").is_null()) {
      const auto& r = j.at("roi");
      if (!r.is_array() || r.size() != 4) throw Error(ErrorKind::kInvalidInput, "roi must be [x, y, width, height]");
      cfg.roi = Roi{r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
    }
    if (j.contains("roi_border")) cfg.roi_border = j.at("roi_border").get<int>();
    if (j.contains("median_kernel")) cfg.median_kernel = j.at("median_kernel").get<int>();
    if (j.contains("close_kernel")) cfg.close_kernel = j.at("close_kernel").get<int>();
    if (j.contains("open_kernel")) cfg.open_kernel = j.at("open_kernel").get<int>();
    if (j.contains("dropout_column_fraction")) cfg.dropout_column_fraction = j.at("dropout_column_fraction").get<double>();
    if (j.contains("dropout_column_mean_threshold") && !j.at("dropout_column_mean_threshold").is_null()) {
      cfg.dropout_column_mean_threshold = j.at("dropout_column_mean_threshold").get<double>();
    }
    if (j.contains("max_class_mean_ratio")) cfg.max_class_mean_ratio = j.at("max_class_mean_ratio").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, std::string("segmentation config: ") + e.what());
  }
  return cfg;
}

GrayImage median_filter(const GrayImage& img, int k) {
  require_odd(k, "median kernel");
  if (k == 1) return img;
  const int r = k / 2;
  const int w = img.width;
  const int h = img.height;
  const int pw = w + 2 * r;
  std::vector<std::uint8_t> pad(static_cast<std::size_t>(pw) * (h + 2 * r));
  for (int y = 0; y < h + 2 * r; ++y) {
    const int sy = std::clamp(y - r, 0, h - 1);
    for (int x = 0; x < pw; ++x) pad[static_cast<std::size_t>(y) * pw + x] = img.at(std::clamp(x - r, 0, w - 1), sy);
  }
  const int half = (k * k) / 2;
  GrayImage out(w, h);
  std::array<int, 256> hist{};
  for (int y = 0; y < h; ++y) {
    hist.fill(0);
    for (int dy = 0; dy < k; ++dy) {
      const auto* row = &pad[static_cast<std::size_t>(y + dy) * pw];
      for (int dx = 0; dx < k; ++dx) ++hist[row[dx]];
    }
    int m = 0;
    int lt = 0;
    while (lt + hist[m] <= half) lt += hist[m++];
    out.at(0, y) = static_cast<std::uint8_t>(m);
    for (int x = 1; x < w; ++x) {
      for (int dy = 0; dy < k; ++dy) {
        const auto* row = &pad[static_cast<std::size_t>(y + dy) * pw];
        const int gone = row[x - 1];
        const int added = row[x - 1 + k];
        --hist[gone];
        if (gone < m) --lt;
        ++hist[added];
        if (added < m) ++lt;
      }
      while (lt > half) lt -= hist[--m];
      while (lt + hist[m] <= half) lt += hist[m++];
      out.at(x, y) = static_cast<std::uint8_t>(m);
    }
  }
  return out;
}

int otsu_threshold(const GrayImage& img, const Roi& roi) {
  if (!roi.inside(img.width, img.height)) throw Error(ErrorKind::kInvalidInput, "otsu_threshold: ROI outside image");
  std::array<std::int64_t, 256> hist{};
  for (int y = roi.y; y < roi.y + roi.height; ++y) {
    for (int x = roi.x; x < roi.x + roi.width; ++x) ++hist[img.at(x, y)];
  }
  std::int64_t total = 0;
  std::int64_t sum = 0;
  for (int v = 0; v < 256; ++v) {
    total += hist[v];
    sum += v * hist[v];
  }
  // Between-class variance is proportional to (N s0 - n0 S)^2 / (n0 n1);
  // candidates are compared exactly by cross-multiplication.
  using u128 = unsigned __int128;
  int best_t = -1;
  u128 best_num = 0;
  u128 best_den = 1;
  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  for (int t = 1; t < 256; ++t) {
    n0 += hist[t - 1];
    s0 += (t - 1) * hist[t - 1];
    const std::int64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const std::int64_t a = total * s0 - n0 * sum;
    const u128 mag = static_cast<u128>(a < 0 ? -a : a);
    const u128 num = mag * mag;
    const u128 den = static_cast<u128>(n0) * static_cast<u128>(n1);
    if (best_t < 0 || num * best_den > best_num * den) {
      best_t = t;
      best_num = num;
      best_den = den;
    }
  }
  if (best_t < 0) throw Error(ErrorKind::kDegenerateHistogram, "otsu_threshold: constant ROI");
  return best_t;
}

BinaryMask dilate(const BinaryMask& m, int k) {
  require_odd(k, "structuring element");
  if (k == 1) return m;
  return box_pass(box_pass(m, k, 0, false), k, 1, false);
}

BinaryMask erode(const BinaryMask& m, int k) {
  require_odd(k, "structuring element");
  if (k == 1) return m;
  return box_pass(box_pass(m, k, 0, true), k, 1, true);
}

BinaryMask morph_close(const BinaryMask& m, int k) { return erode(dilate(m, k), k); }
BinaryMask morph_open(const BinaryMask& m, int k) { return dilate(erode(m, k), k); }

BinaryMask fill_holes(const BinaryMask& m) {
  const int w = m.width;
  const int h = m.height;
  std::vector<std::uint8_t> outside(m.bits.size(), 0);
  std::vector<int> stack;
  auto seed = [&](int x, int y) {
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    if (!m.bits[i] && !outside[i]) {
      outside[i] = 1;
      stack.push_back(static_cast<int>(i));
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(x, 0);
    seed(x, h - 1);
  }
  for (int y = 0; y < h; ++y) {
    seed(0, y);
    seed(w - 1, y);
  }
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    const int x = i % w;
    const int y = i / w;
    if (x > 0) seed(x - 1, y);
    if (x + 1 < w) seed(x + 1, y);
    if (y > 0) seed(x, y - 1);
    if (y + 1 < h) seed(x, y + 1);
  }
  BinaryMask out(w, h);
  for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = outside[i] ? 0 : 1;
  return out;
}

SegResult segment_frame(const GrayImage& img, const SegConfig& cfg) {
  cfg.validate(img.width, img.height);
  const Roi roi = cfg.resolve_roi(img.width, img.height);
  SegResult result;
  result.mask = BinaryMask(img.width, img.height);

  const GrayImage raw = crop(img, roi);
  const GrayImage filtered = median_filter(raw, cfg.median_kernel);
  const Roi all{0, 0, raw.width, raw.height};
  try {
    result.threshold = otsu_threshold(filtered, all);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kDegenerateHistogram) throw;
    result.degenerate_histogram = true;
    return result;
  }

  double dark_sum = 0.0, bright_sum = 0.0;
  std::size_t dark_n = 0, bright_n = 0;
  BinaryMask m(raw.width, raw.height);
  for (std::size_t i = 0; i < filtered.pixels.size(); ++i) {
    const int v = filtered.pixels[i];
    if (v < result.threshold) {
      m.bits[i] = 1;
      dark_sum += v;
      ++dark_n;
    } else {
      bright_sum += v;
      ++bright_n;
    }
  }
  if (dark_sum / dark_n > cfg.max_class_mean_ratio * (bright_sum / bright_n)) {
    result.low_contrast = true;
    return result;
  }

  m = morph_open(morph_close(fill_holes(m), cfg.close_kernel), cfg.open_kernel);

  double roi_sum = 0.0;
  for (const auto v : raw.pixels) roi_sum += v;
  const double threshold = cfg.dropout_column_mean_threshold.value_or(
      cfg.dropout_column_fraction * roi_sum / static_cast<double>(raw.pixels.size()));
  for (int x = 0; x < raw.width; ++x) {
    double col = 0.0;
    for (int y = 0; y < raw.height; ++y) col += raw.at(x, y);
    if (col / raw.height < threshold) {
      result.dropped_columns.push_back(roi.x + x);
      for (int y = 0; y < raw.height; ++y) m.at(x, y) = 0;
    }
  }

  for (int y = 0; y < roi.height; ++y) {
    for (int x = 0; x < roi.width; ++x) result.mask.at(roi.x + x, roi.y + y) = m.at(x, y);
  }
  return result;
}

double dsc_2d(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw Error(ErrorKind::kInvalidInput, "dsc_2d: mask dimensions differ");
  }
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    a += pred.bits[i];
    b += gt.bits[i];
    both += pred.bits[i] & gt.bits[i];
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

}  // namespace usqa
