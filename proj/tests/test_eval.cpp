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

#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "snider/evaluation.hpp"
#include "snider/training.hpp"

using namespace snider;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("snider_eval_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image shifted(const Image& img, int dx, float fill) {
  Image out(img.channels, img.height, img.width, fill);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const int sx = x - dx;
        if (sx >= 0 && sx < img.width) out.at(c, y, x) = img.at(c, y, sx);
      }
  return out;
}

}  // namespace

TEST_CASE("recognize: reads back a cleanly rendered plate") {
  PlateSpec spec;
  spec.digits = "0123";
  RenderInfo info;
  auto img = render_plate(spec, 64, 3, &info);
  auto res = recognize(img, digit_glyphs());
  CHECK(res.predicted == "0123");
  REQUIRE(res.per_char.size() == 4);
  for (const auto& m : res.per_char) CHECK(m.score >= 0.99);
  for (size_t i = 1; i < res.per_char.size(); ++i)
    CHECK(res.per_char[i - 1].position < res.per_char[i].position);
}

TEST_CASE("recognize: blank images yield the empty prediction") {
  Image blank(3, 64, 64, 0.8f);
  auto res = recognize(blank, digit_glyphs());
  CHECK(res.predicted.empty());
  CHECK(res.per_char.empty());
}

TEST_CASE("recognize: stable under small horizontal translations") {
  PlateSpec spec;
  spec.digits = "7408";
  RenderInfo info;
  auto img = render_plate(spec, 64, 5, &info);
  for (int dx = -3; dx <= 3; ++dx) {
    auto res = recognize(shifted(img, dx, info.background), digit_glyphs());
    CHECK(res.predicted == "7408");
  }
}

TEST_CASE("recognize: independent of glyph insertion order, deterministic") {
  PlateSpec spec;
  spec.digits = "3971";
  auto img = render_plate(spec, 64, 7);
  const auto& base = digit_glyphs();
  GlyphSet reversed;
  for (auto it = base.rbegin(); it != base.rend(); ++it)
    reversed[it->first] = it->second;
  auto a = recognize(img, base);
  auto b = recognize(img, reversed);
  auto c = recognize(img, base);
  CHECK(a.predicted == b.predicted);
  CHECK(a.predicted == c.predicted);
  REQUIRE(a.per_char.size() == c.per_char.size());
  for (size_t i = 0; i < a.per_char.size(); ++i) {
    CHECK(a.per_char[i].position == c.per_char[i].position);
    CHECK(a.per_char[i].score == c.per_char[i].score);
  }
}

TEST_CASE("full_lpr_accuracy: exact-match semantics") {
  CHECK(full_lpr_accuracy({"12", "34"}, {"12", "34"}) == 1.0);
  CHECK(full_lpr_accuracy({"1234", "5678"}, {"1234", "5679"}) == 0.5);
  // A missing character counts as a failed sample.
  CHECK(full_lpr_accuracy({"123"}, {"1234"}) == 0.0);
  CHECK_THROWS_AS(full_lpr_accuracy({"1"}, {"1", "2"}), std::invalid_argument);
}

TEST_CASE("full_lpr_accuracy: equals the string-equality oracle on random pairs") {
  std::mt19937_64 rng(17);
  std::vector<std::string> pred, truth;
  int64_t equal = 0;
  for (int i = 0; i < 1000; ++i) {
    auto gen = [&rng] {
      std::string s;
      const int len = 3 + static_cast<int>(rng() % 3);
      for (int j = 0; j < len; ++j) s.push_back(static_cast<char>('0' + rng() % 3));
      return s;
    };
    pred.push_back(gen());
    truth.push_back(rng() % 4 == 0 ? pred.back() : gen());
    equal += pred.back() == truth.back();
  }
  CHECK(full_lpr_accuracy(pred, truth) == double(equal) / 1000.0);
}

TEST_CASE("psnr: cap, closed form and symmetry") {
  Image a(1, 4, 4, 0.3f), b(1, 4, 4, 0.3f);
  CHECK(psnr(a, b) == 99.0);

  Image c(1, 4, 4, 0.0f), d(1, 4, 4, 0.1f);  // MSE 0.01 -> 20 dB
  CHECK(psnr(c, d) == doctest::Approx(20.0).epsilon(1e-6));

  std::mt19937_64 rng(31);
  Image e(3, 6, 6), f(3, 6, 6);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& v : e.data) v = u(rng);
  for (auto& v : f.data) v = u(rng);
  CHECK(psnr(e, f) == psnr(f, e));

  Image g(1, 3, 3);
  CHECK_THROWS_AS(psnr(a, g), std::invalid_argument);
}

TEST_CASE("evaluate_pipeline: identity recovery equalizes both tracks") {
  auto dir = temp_dir("pipe");
  DatasetOptions opts;
  opts.n_plates = 3;
  opts.size = 64;
  opts.seed = 23;
  opts.split = 0.67;
  auto [train_manifest, test_manifest] = make_dataset(opts, dir.string());

  auto report = evaluate_pipeline_with([](const Image& img) { return img; },
                                       test_manifest, digit_glyphs());
  CHECK(report.n_samples == 4);
  CHECK(report.accuracy_recovered == report.accuracy_lq);
  CHECK(report.mean_psnr_recovered == report.mean_psnr_lq);
  for (const auto& row : report.rows) {
    CHECK(row.pred_lq == row.pred_rec);
    CHECK(row.psnr_lq == row.psnr_rec);
  }
}

TEST_CASE("evaluate_pipeline: untrained model gives a well-formed report") {
  auto dir = temp_dir("fresh");
  DatasetOptions opts;
  opts.n_plates = 2;
  opts.size = 64;
  opts.seed = 29;
  opts.split = 0.5;
  auto [train_manifest, test_manifest] = make_dataset(opts, dir.string());

  auto model = build_snider<float>(NetworkVariant::kSniderTiny, 64, 3);
  const uint64_t before = state_hash(model);
  auto report = evaluate_pipeline(model, test_manifest, digit_glyphs());
  CHECK(state_hash(model) == before);  // eval never mutates the model
  CHECK(report.n_samples == 4);
  CHECK(report.accuracy_lq >= 0.0);
  CHECK(report.accuracy_lq <= 1.0);
  CHECK(report.accuracy_recovered >= 0.0);
  CHECK(report.accuracy_recovered <= 1.0);
  CHECK(report.rows.size() == 4);

  auto out = (dir / "report.csv").string();
  write_eval_report(report, out);
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  CHECK(header == "id,angle,truth,pred_lq,pred_rec,psnr_lq,psnr_rec,ok_lq,ok_rec");
  int rows = 0, comments = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#')
      ++comments;
    else if (!line.empty())
      ++rows;
  }
  CHECK(rows == 4);
  CHECK(comments == 5);
}
