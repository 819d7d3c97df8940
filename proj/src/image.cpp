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

#include "usqa/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <string>

#include "usqa/error.hpp"

namespace usqa {
namespace {

void check_dims(int w, int h) {
  if (w <= 0 || h <= 0) throw Error(ErrorKind::kInvalidInput, "image dimensions must be positive");
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = header_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::kIo, "malformed header in " + path.string());
  }
}

}  // namespace

GrayImage::GrayImage(int w, int h, std::uint8_t fill) : width(w), height(h) {
  check_dims(w, h);
  pixels.assign(static_cast<std::size_t>(w) * h, fill);
}

BinaryMask::BinaryMask(int w, int h, bool fill) : width(w), height(h) {
  check_dims(w, h);
  bits.assign(static_cast<std::size_t>(w) * h, fill ? 1 : 0);
}

std::size_t BinaryMask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

GrayImage crop(const GrayImage& img, const Roi& roi) {
  if (!roi.inside(img.width, img.height)) throw Error(ErrorKind::kInvalidInput, "crop: ROI outside image");
  GrayImage out(roi.width, roi.height);
  for (int y = 0; y < roi.height; ++y) {
    const auto* src = &img.pixels[static_cast<std::size_t>(roi.y + y) * img.width + roi.x];
    std::copy(src, src + roi.width, &out.pixels[static_cast<std::size_t>(y) * roi.width]);
  }
  return out;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  if (header_token(in) != "P5") throw Error(ErrorKind::kIo, path.string() + " is not a binary PGM");
  const int w = header_int(in, path);
  const int h = header_int(in, path);
  const int maxval = header_int(in, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorKind::kIo, "unsupported PGM layout in " + path.string());
  GrayImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw Error(ErrorKind::kIo, "truncated PGM " + path.string());
  return img;
}

void write_pbm(const BinaryMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << "P4\n" << mask.width << ' ' << mask.height << '\n';
  const int row_bytes = (mask.width + 7) / 8;
  std::vector<char> row(row_bytes);
  for (int y = 0; y < mask.height; ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y)) row[x / 8] = static_cast<char>(row[x / 8] | (0x80 >> (x % 8)));
    }
    out.write(row.data(), row_bytes);
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

BinaryMask read_pbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  if (header_token(in) != "P4") throw Error(ErrorKind::kIo, path.string() + " is not a raw PBM");
  const int w = header_int(in, path);
  const int h = header_int(in, path);
  if (w <= 0 || h <= 0) throw Error(ErrorKind::kIo, "invalid PBM size in " + path.string());
  BinaryMask mask(w, h);
  const int row_bytes = (w + 7) / 8;
  std::vector<unsigned char> row(row_bytes);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row_bytes);
    if (!in) throw Error(ErrorKind::kIo, "truncated PBM " + path.string());
    for (int x = 0; x < w; ++x) mask.at(x, y) = (row[x / 8] >> (7 - x % 8)) & 1;
  }
  return mask;
}

}  // namespace usqa
