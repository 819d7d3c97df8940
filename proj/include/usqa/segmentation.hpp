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

#ifndef USQA_SEGMENTATION_HPP
#define USQA_SEGMENTATION_HPP

#include <optional>
#include <vector>

#include "json.hpp"
#include "usqa/image.hpp"

namespace usqa {

struct SegConfig {
  std::optional<Roi> roi;  // default: full image minus `roi_border` px
  int roi_border = 16;
  int median_kernel = 7;
  int close_kernel = 5;
  int open_kernel = 5;
  /// Absolute column-mean threshold; when unset, `dropout_column_fraction`
  /// times the ROI mean intensity is used.
  std::optional<double> dropout_column_mean_threshold;
  double dropout_column_fraction = 0.25;
  /// The frame is treated as inclusion-free when the Otsu dark-class mean
  /// exceeds this fraction of the bright-class mean.
  double max_class_mean_ratio = 0.5;

  /// Throws kInvalidInput for even or non-positive kernels or a ROI outside
  /// the image.
  void validate(int width, int height) const;
  Roi resolve_roi(int width, int height) const;
};

nlohmann::json to_json(const SegConfig& cfg);
/// Keys absent from `j` keep their defaults.
SegConfig seg_config_from_json(const nlohmann::json& j);

/// k x k median with edge replication (sliding-histogram).
GrayImage median_filter(const GrayImage& img, int k);

/// Threshold t in [1, 255] maximizing between-class variance of the ROI
/// histogram with classes {v < t} and {v >= t}; ties go to the lowest t.
/// Throws kDegenerateHistogram when all ROI pixels are equal.
int otsu_threshold(const GrayImage& img, const Roi& roi);

/// Square structuring elements; pixels outside the image replicate the edge.
BinaryMask dilate(const BinaryMask& m, int k);
BinaryMask erode(const BinaryMask& m, int k);
BinaryMask morph_close(const BinaryMask& m, int k);
BinaryMask morph_open(const BinaryMask& m, int k);
/// Sets background regions not 4-connected to the border.
BinaryMask fill_holes(const BinaryMask& m);

struct SegResult {
  BinaryMask mask;
  int threshold = 0;
  bool degenerate_histogram = false;
  bool low_contrast = false;
  std::vector<int> dropped_columns;  // full-frame column indices

  bool warning() const { return degenerate_histogram || low_contrast; }
};

SegResult segment_frame(const GrayImage& img, const SegConfig& cfg);

/// 2|X n Y| / (|X| + |Y|); 1 when both are empty.
double dsc_2d(const BinaryMask& pred, const BinaryMask& gt);

}  // namespace usqa

#endif /* USQA_SEGMENTATION_HPP */
