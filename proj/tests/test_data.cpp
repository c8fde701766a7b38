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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "snider/data_synthesis.hpp"

using namespace snider;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("snider_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Naive two-pass between-class variance, evaluated for every threshold.
int otsu_oracle(const std::array<int64_t, 256>& hist) {
  int64_t total = 0;
  for (auto h : hist) total += h;
  double best = -1;
  int best_t = -1;
  for (int t = 0; t < 256; ++t) {
    int64_t n0 = 0, n1 = 0;
    double s0 = 0, s1 = 0;
    for (int g = 0; g <= t; ++g) {
      n0 += hist[g];
      s0 += double(g) * hist[g];
    }
    for (int g = t + 1; g < 256; ++g) {
      n1 += hist[g];
      s1 += double(g) * hist[g];
    }
    if (n0 == 0 || n1 == 0) continue;
    double m0 = s0 / n0, m1 = s1 / n1;
    double v = double(n0) * double(n1) * (m0 - m1) * (m0 - m1);
    if (v > best) {
      best = v;
      best_t = t;
    }
  }
  (void)total;
  return best_t;
}

}  // namespace

TEST_CASE("render_plate: repeated digits give pixel-identical glyph boxes") {
  PlateSpec spec;
  spec.digits = "0000";
  spec.decoration = false;
  RenderInfo info;
  auto img = render_plate(spec, 64, 5, &info);
  REQUIRE(info.boxes.size() == 4);
  const auto& b0 = info.boxes[0];
  for (size_t i = 1; i < 4; ++i) {
    const auto& b = info.boxes[i];
    CHECK(b.w == b0.w);
    CHECK(b.h == b0.h);
    for (int y = 0; y < b0.h; ++y)
      for (int x = 0; x < b0.w; ++x)
        REQUIRE(img.at(0, b.y + y, b.x + x) == img.at(0, b0.y + y, b0.x + x));
  }
}

TEST_CASE("render_plate: deterministic in spec and seed") {
  PlateSpec spec;
  spec.digits = "4711";
  spec.decoration = true;
  auto a = render_plate(spec, 64, 42);
  auto b = render_plate(spec, 64, 42);
  REQUIRE(a.data.size() == b.data.size());
  for (size_t i = 0; i < a.data.size(); ++i) REQUIRE(a.data[i] == b.data[i]);
  auto c = render_plate(spec, 64, 43);
  bool diff = false;
  for (size_t i = 0; i < a.data.size(); ++i) diff = diff || a.data[i] != c.data[i];
  CHECK(diff);  // jitter depends on the seed
}

TEST_CASE("render_plate: mean equals the two-level mixture by pixel count") {
  PlateSpec spec;
  spec.digits = "35792";
  spec.decoration = true;
  RenderInfo info;
  auto img = render_plate(spec, 96, 17, &info);
  int64_t ink = 0;
  for (float v : img.data) {
    REQUIRE((v == info.background || v == info.foreground));
    ink += v == info.foreground;
  }
  double frac = double(ink) / double(img.data.size());
  double mean = 0;
  for (float v : img.data) mean += v;
  mean /= double(img.data.size());
  CHECK(std::abs(mean - (info.background * (1 - frac) + info.foreground * frac)) <
        1e-6);
}

TEST_CASE("render_plate: rejects overfull layouts and bad specs") {
  PlateSpec spec;
  spec.digits = "88888888";  // 8 chars cannot fit 32px with margins
  CHECK_THROWS_AS(render_plate(spec, 32, 1), std::invalid_argument);
  spec.digits = "123";
  CHECK_THROWS_AS(render_plate(spec, 64, 1), std::invalid_argument);
  spec.digits = "12a4";
  CHECK_THROWS_AS(render_plate(spec, 64, 1), std::invalid_argument);
  spec.digits = "1234";
  CHECK_THROWS_AS(render_plate(spec, 16, 1), std::invalid_argument);
}

TEST_CASE("rotate: zero angle is the identity") {
  PlateSpec spec;
  spec.digits = "0123";
  auto img = render_plate(spec, 64, 9);
  auto out = rotate(img, 0.0, 0.5f);
  for (size_t i = 0; i < img.data.size(); ++i) REQUIRE(out.data[i] == img.data[i]);
}

TEST_CASE("rotate: 90 degrees permutes a 2x2 pattern exactly") {
  Image in(1, 2, 2);
  in.at(0, 0, 0) = 0.1f;  // a
  in.at(0, 0, 1) = 0.2f;  // b
  in.at(0, 1, 0) = 0.3f;  // c
  in.at(0, 1, 1) = 0.4f;  // d
  auto out = rotate(in, 90.0, 0.f);
  // Clockwise: [[a,b],[c,d]] -> [[c,a],[d,b]]
  CHECK(out.at(0, 0, 0) == 0.3f);
  CHECK(out.at(0, 0, 1) == 0.1f);
  CHECK(out.at(0, 1, 0) == 0.4f);
  CHECK(out.at(0, 1, 1) == 0.2f);
}

TEST_CASE("rotate: +15 then -15 restores the center up to interpolation loss") {
  // Smooth field: the loss measured here is interpolation error alone.
  Image img(1, 64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      img.at(0, y, x) = 0.5f + 0.3f * std::sin(2 * M_PI * x / 32.0) *
                                   std::cos(2 * M_PI * y / 24.0) +
                        0.1f * std::sin(2 * M_PI * (x + y) / 40.0);
  auto back = rotate(rotate(img, 15.0, 0.5f), -15.0, 0.5f);
  double mae = 0;
  int64_t n = 0;
  for (int y = 16; y < 48; ++y)
    for (int x = 16; x < 48; ++x) {
      mae += std::abs(back.at(0, y, x) - img.at(0, y, x));
      ++n;
    }
  CHECK(mae / n < 0.02);
}

TEST_CASE("rotate: an all-fill image maps to itself for any angle") {
  Image img(3, 24, 24, 0.37f);
  for (double a : {-30.0, -15.0, 7.5, 15.0, 33.0, 90.0, 123.4}) {
    auto out = rotate(img, a, 0.37f);
    for (float v : out.data) REQUIRE(v == 0.37f);
  }
}

TEST_CASE("degrade: constant image with zero noise is unchanged") {
  Image img(3, 32, 32, 0.6f);
  auto out = degrade(img, 0.0, 1);
  CHECK(out.height == 32);
  CHECK(out.width == 32);
  for (float v : out.data) REQUIRE(v == 0.6f);
}

TEST_CASE("degrade: downsample stage conserves total mass") {
  Image img(1, 32, 32, 0.f);
  img.at(0, 13, 21) = 1.f;
  auto small = area_downsample4x(img);
  double s_small = 0, s_orig = 0;
  for (float v : small.data) s_small += v;
  for (float v : img.data) s_orig += v;
  CHECK(std::abs(s_small * 16.0 - s_orig) < 1e-6);
}

TEST_CASE("degrade: shape preserved, odd sizes rejected, noise seeded") {
  PlateSpec spec;
  spec.digits = "1379";
  auto img = render_plate(spec, 64, 3);
  auto a = degrade(img, 0.05, 7);
  CHECK(a.height == img.height);
  CHECK(a.width == img.width);
  auto b = degrade(img, 0.05, 7);
  for (size_t i = 0; i < a.data.size(); ++i) REQUIRE(a.data[i] == b.data[i]);
  auto c = degrade(img, 0.05, 8);
  bool diff = false;
  for (size_t i = 0; i < a.data.size(); ++i) diff = diff || a.data[i] != c.data[i];
  CHECK(diff);
  Image odd(1, 30, 32);
  CHECK_THROWS_AS(degrade(odd, 0.0, 1), std::invalid_argument);
}

TEST_CASE("otsu: two-level image separates exactly") {
  Image img(1, 4, 4);
  for (int i = 0; i < 6; ++i) img.data[i] = 1.f;  // 6 pixels at 255, 10 at 0
  auto mask = otsu_binarize(img);
  int64_t ones = 0;
  for (float v : mask.data) {
    REQUIRE((v == 0.f || v == 1.f));
    ones += v == 1.f;
  }
  CHECK(ones == 6);
}

TEST_CASE("otsu: constant image yields the all-zero mask") {
  Image img(3, 8, 8, 0.42f);
  auto mask = otsu_binarize(img);
  for (float v : mask.data) REQUIRE(v == 0.f);
}

TEST_CASE("otsu: threshold equals the exhaustive between-class oracle") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<int64_t, 256> hist{};
    // Random bimodal-ish histogram.
    std::uniform_int_distribution<int> mode(0, 255), cnt(1, 40);
    const int m1 = mode(rng), m2 = mode(rng);
    for (int i = 0; i < 60; ++i) {
      std::normal_distribution<double> d(rng() & 1 ? m1 : m2, 12.0);
      int g = std::clamp(static_cast<int>(std::lround(d(rng))), 0, 255);
      hist[g] += cnt(rng);
    }
    CHECK(otsu_threshold(hist) == otsu_oracle(hist));
  }
}

TEST_CASE("generate_sample: four angles share the unrotated plate bit-exactly") {
  PlateSpec spec;
  spec.digits = "90210";
  std::vector<TrainingSample> samples;
  for (int angle : kSampleAngles)
    samples.push_back(generate_sample(spec, angle, 64, 77));
  for (size_t i = 1; i < samples.size(); ++i) {
    REQUIRE(samples[i].i_hq_0.data.size() == samples[0].i_hq_0.data.size());
    for (size_t j = 0; j < samples[0].i_hq_0.data.size(); ++j)
      REQUIRE(samples[i].i_hq_0.data[j] == samples[0].i_hq_0.data[j]);
  }
  CHECK(samples[0].count == 5);
  CHECK_THROWS_AS(generate_sample(spec, 45.0, 64, 1), std::invalid_argument);
}

TEST_CASE("generate_sample: masks are binary with both classes present") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> len(4, 6), digit(0, 9), angle_pick(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    PlateSpec spec;
    const int n = len(rng);
    for (int i = 0; i < n; ++i)
      spec.digits.push_back(static_cast<char>('0' + digit(rng)));
    spec.decoration = (rng() & 1) != 0;
    auto s = generate_sample(spec, kSampleAngles[angle_pick(rng)], 64, rng());
    int64_t ones = 0, zeros = 0;
    for (float v : s.i_seg.data) {
      REQUIRE((v == 0.f || v == 1.f));
      ones += v == 1.f;
      zeros += v == 0.f;
    }
    CHECK(ones > 0);
    CHECK(zeros > 0);
    CHECK(s.count == n);
  }
}

TEST_CASE("pnm: files round-trip byte-exactly") {
  auto dir = temp_dir("pnm");
  std::mt19937_64 rng(31);
  Image img(3, 12, 9);
  std::uniform_real_distribution<float> d(0.f, 1.f);
  for (auto& v : img.data) v = d(rng);
  auto p1 = (dir / "a.ppm").string(), p2 = (dir / "b.ppm").string();
  write_pnm(p1, img);
  auto back = read_pnm(p1);
  write_pnm(p2, back);
  CHECK(slurp(p1) == slurp(p2));

  Image mask(1, 5, 7);
  for (auto& v : mask.data) v = (rng() & 1) ? 1.f : 0.f;
  auto m1 = (dir / "m.pgm").string(), m2 = (dir / "m2.pgm").string();
  write_pnm(m1, mask);
  auto mback = read_pnm(m1);
  for (size_t i = 0; i < mask.data.size(); ++i) REQUIRE(mback.data[i] == mask.data[i]);
  write_pnm(m2, mback);
  CHECK(slurp(m1) == slurp(m2));

  CHECK_THROWS(read_pnm((dir / "missing.ppm").string()));
}

TEST_CASE("make_dataset: counts, split discipline and determinism") {
  auto dir1 = temp_dir("ds1");
  auto dir2 = temp_dir("ds2");
  DatasetOptions opts;
  opts.n_plates = 10;
  opts.size = 64;
  opts.seed = 7;
  opts.split = 0.8;
  auto [train1, test1] = make_dataset(opts, dir1.string());
  auto [train2, test2] = make_dataset(opts, dir2.string());

  auto train = read_manifest(train1);
  auto test = read_manifest(test1);
  CHECK(train.records.size() == 32);
  CHECK(test.records.size() == 8);
  CHECK(train.size == 64);

  std::set<std::string> train_digits, test_digits;
  for (auto& r : train.records) train_digits.insert(r.digits);
  for (auto& r : test.records) test_digits.insert(r.digits);
  for (const auto& d : test_digits) CHECK(train_digits.count(d) == 0);

  // Byte-identical outputs for identical options.
  CHECK(slurp(train1) == slurp(train2));
  CHECK(slurp(test1) == slurp(test2));
  CHECK(slurp(dir1 / train.records[0].lq) == slurp(dir2 / train.records[0].lq));

  // Loading reproduces type invariants.
  auto s = load_sample(dir1.string(), train.records[0]);
  CHECK(s.i_lq.channels == 3);
  CHECK(s.i_seg.channels == 1);
  for (float v : s.i_seg.data) REQUIRE((v == 0.f || v == 1.f));
  CHECK(s.count == static_cast<int>(train.records[0].digits.size()));

  auto boxes = read_boxes((dir1 / train.records[0].boxes).string());
  CHECK(boxes.size() == train.records[0].digits.size());
}
