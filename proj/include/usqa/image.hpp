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

#ifndef USQA_IMAGE_HPP
#define USQA_IMAGE_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

namespace usqa {

/// 8-bit grayscale image, row-major; x is the column (lateral), y the row
/// (depth).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Binary mask stored one byte (0 or 1) per pixel.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h, bool fill = false);

  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

struct Roi {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool inside(int w, int h) const { return x >= 0 && y >= 0 && width > 0 && height > 0 && x + width <= w && y + height <= h; }
};

GrayImage crop(const GrayImage& img, const Roi& roi);

/// Binary (P5) PGM and raw (P4) PBM.
void write_pgm(const GrayImage& img, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pbm(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask read_pbm(const std::filesystem::path& path);

}  // namespace usqa

#endif /* USQA_IMAGE_HPP */
