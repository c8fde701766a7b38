// Copyright 2026 The SNIDER Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SNIDER_DATA_SYNTHESIS_HPP_
#define SNIDER_DATA_SYNTHESIS_HPP_

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace snider {

/// Planar CHW image with values in [0,1].
struct Image {
  int channels = 0, height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.f)
      : channels(c), height(h), width(w),
        data(static_cast<size_t>(c) * h * w, fill) {}

  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t size() const { return data.size(); }
};

/// Binary PPM (P6) for 3-channel images, binary PGM (P5) for 1-channel, both
/// maxval 255. Round-tripping a file through read and write reproduces it
/// byte-exactly.
void write_pnm(const std::string& path, const Image& img);
Image read_pnm(const std::string& path);

/// Fixed-width binary glyph bitmap.
struct Glyph {
  int width = 0, height = 0;
  std::vector<uint8_t> mask;  // row-major, 0/1
};

using GlyphSet = std::map<char, Glyph>;

/// Built-in 5x7 bitmap font for the digits 0-9.
const GlyphSet& digit_glyphs();

struct PlateLayout {
  float background = 0.85f;
  float foreground = 0.12f;
  float intensity_jitter = 0.03f;  // seeded per-plate shift of both levels
};

struct PlateSpec {
  std::string digits;  // 4 to 8 characters, all present in the glyph set
  GlyphSet glyphs = digit_glyphs();
  PlateLayout layout;
  bool decoration = false;  // logo block in the top-left corner when it fits
};

struct CharBox {
  char ch;
  int x, y, w, h;
};

struct RenderInfo {
  float background = 0, foreground = 0;
  int scale = 0;  // integer glyph magnification
  std::vector<CharBox> boxes;
};

/// Renders a clean two-intensity plate. Characters are drawn on an integer
/// grid (no anti-aliasing) at the largest scale that fits; their boxes are
/// reported through `info`. Deterministic in (spec, size, seed).
Image render_plate(const PlateSpec& spec, int size, uint64_t seed,
                   RenderInfo* info = nullptr);

/// Rotation about the image center with bilinear sampling; source pixels
/// outside the image take `fill`. Positive angles turn the content clockwise
/// (y axis points down). Output size equals input size.
Image rotate(const Image& img, double angle_deg, float fill);

/// 4x4 block means; preserves total mass up to the 1/16 area factor.
Image area_downsample4x(const Image& img);
Image bilinear_upsample4x(const Image& small);

/// Quality degradation: 4x area-average downsampling, bilinear upsampling
/// back to the original size, then optional additive Gaussian noise clamped
/// to [0,1]. Requires spatial dims divisible by 4.
Image degrade(const Image& img, double noise_sigma, uint64_t seed);

/// Threshold index in [0,255] maximizing between-class variance (first
/// maximum on ties); -1 when every pixel falls into a single bin.
int otsu_threshold(const std::array<int64_t, 256>& histogram);

/// Grayscale Otsu binarization: mask = 1 where gray > threshold. Constant
/// images produce an all-zero mask.
Image otsu_binarize(const Image& img);

constexpr std::array<int, 4> kSampleAngles{-30, -15, 15, 30};

struct TrainingSample {
  Image i_lq;    // degraded rotated plate (network input)
  Image i_hq;    // clean plate at the same rotation
  Image i_hq_0;  // clean unrotated plate
  Image i_seg;   // {0,1} mask from the low-quality image
  int count = 0;
  int angle = 0;  // degrees, one of kSampleAngles
};

TrainingSample generate_sample(const PlateSpec& spec, double angle, int size,
                               uint64_t seed, double noise_sigma = 0.0);

struct DatasetOptions {
  int n_plates = 0;
  int size = 64;
  uint64_t seed = 0;
  double split = 0.8;        // plate fraction assigned to the train split
  double noise_sigma = 0.0;
  int min_digits = 4;
  int max_digits = 6;
  bool decoration = true;
};

struct ManifestRecord {
  std::string id;
  std::string lq, hq, hq0, seg, boxes;  // paths relative to the manifest
  int angle = 0;
  int count = 0;
  std::string digits;
};

struct Manifest {
  int size = 0;
  std::vector<ManifestRecord> records;
};

/// Expands every plate into its four rotation samples, writes images and the
/// two manifests under out_dir, and returns the (train, test) manifest paths.
/// Plates are split between the manifests as whole units and digit strings
/// are unique across the dataset, so no string appears in both splits.
std::pair<std::string, std::string> make_dataset(const DatasetOptions& opts,
                                                 const std::string& out_dir);

Manifest read_manifest(const std::string& path);

/// Loads one record's images from disk (paths resolved against manifest_dir).
TrainingSample load_sample(const std::string& manifest_dir,
                           const ManifestRecord& rec);

std::vector<CharBox> read_boxes(const std::string& path);

}  // namespace snider

#endif  // SNIDER_DATA_SYNTHESIS_HPP_
