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

#include "snider/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace snider {

namespace fs = std::filesystem;

namespace {

struct Candidate {
  double score;
  int x;       // left edge
  int width;
  char glyph;
};

// Inverted grayscale: ink becomes the bright phase, so a binary glyph mask
// correlates positively regardless of the plate's intensity levels.
std::vector<float> inverted_gray(const Image& img) {
  std::vector<float> g(static_cast<size_t>(img.height) * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float acc = 0;
      for (int c = 0; c < img.channels; ++c) acc += img.at(c, y, x);
      g[static_cast<size_t>(y) * img.width + x] =
          1.f - acc / static_cast<float>(img.channels);
    }
  return g;
}

}  // namespace

RecognitionResult recognize(const Image& image, const GlyphSet& glyphs) {
  if (glyphs.empty())
    throw std::invalid_argument("recognize: glyph set must not be empty");
  const int H = image.height, W = image.width;
  const auto gray = inverted_gray(image);

  // Integer scales the renderer could have used on this canvas: at least four
  // characters with one-glyph-pixel gaps and margins must fit.
  int gw = glyphs.begin()->second.width, gh = glyphs.begin()->second.height;
  const int margin = std::max(2, std::min(H, W) / 16);
  const int avail = std::min(H, W) - 2 * margin;
  const int max_scale = std::max(1, std::min(avail / (4 * (gw + 1) - 1), avail / gh));

  std::vector<Candidate> candidates;
  for (const auto& [ch, glyph] : glyphs) {
    for (int k = 1; k <= max_scale; ++k) {
      const int tw = glyph.width * k, th = glyph.height * k;
      if (tw > W || th > H) continue;
      // Template statistics at this scale.
      double t_sum = 0;
      for (uint8_t v : glyph.mask) t_sum += v;
      const double n = static_cast<double>(tw) * th;
      const double t_mean = t_sum * k * k / n;
      double t_var = 0;
      for (uint8_t v : glyph.mask) {
        const double d = v - t_mean;
        t_var += d * d * k * k;
      }
      if (t_var <= 0) continue;
      const double t_norm = std::sqrt(t_var);

      for (int x = 0; x + tw <= W; ++x) {
        double best = -2.0;
        for (int y = 0; y + th <= H; ++y) {
          double p_sum = 0, p_sq = 0, cross = 0;
          for (int my = 0; my < glyph.height; ++my)
            for (int dy = 0; dy < k; ++dy) {
              const float* row = gray.data() + (y + my * k + dy) * W + x;
              for (int mx = 0; mx < glyph.width; ++mx) {
                const bool ink = glyph.mask[static_cast<size_t>(my) * glyph.width + mx];
                for (int dx = 0; dx < k; ++dx) {
                  const double v = row[mx * k + dx];
                  p_sum += v;
                  p_sq += v * v;
                  if (ink) cross += v;
                }
              }
            }
          const double p_mean = p_sum / n;
          const double p_var = p_sq - p_sum * p_mean;
          if (p_var <= 1e-12) continue;  // flat patch carries no signal
          const double score =
              (cross - t_mean * p_sum) / (std::sqrt(p_var) * t_norm);
          best = std::max(best, score);
        }
        if (best > kRecognizeThreshold)
          candidates.push_back({best, x, tw, ch});
      }
    }
  }

  // Strongest first; ties resolve on position then glyph so the result never
  // depends on the glyph set's iteration order.
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a,
                                                     const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.x != b.x) return a.x < b.x;
    if (a.glyph != b.glyph) return a.glyph < b.glyph;
    return a.width < b.width;
  });
  std::vector<Candidate> kept;
  for (const auto& c : candidates) {
    bool clear = true;
    for (const auto& k : kept) {
      const double cx = c.x + c.width / 2.0, kx = k.x + k.width / 2.0;
      if (std::abs(cx - kx) < kRecognizeSuppression * std::max(c.width, k.width)) {
        clear = false;
        break;
      }
    }
    if (clear) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Candidate& a, const Candidate& b) { return a.x < b.x; });

  RecognitionResult out;
  for (const auto& c : kept) {
    out.predicted.push_back(c.glyph);
    out.per_char.push_back({c.x, c.glyph, c.score});
  }
  return out;
}

double full_lpr_accuracy(const std::vector<std::string>& predictions,
                         const std::vector<std::string>& ground_truths) {
  if (predictions.size() != ground_truths.size())
    throw std::invalid_argument(
        "full_lpr_accuracy: prediction and truth lists differ in length");
  if (predictions.empty()) return 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    hits += predictions[i] == ground_truths[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double psnr(const Image& a, const Image& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw std::invalid_argument("psnr: image shapes differ");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

Image recover_image(SniderModel<float>& model, const Image& img) {
  Tensor<float> x({1, img.channels, img.height, img.width},
                  std::vector<float>(img.data));
  auto y = recover(model, x);
  Image out(static_cast<int>(y.dim(1)), static_cast<int>(y.dim(2)),
            static_cast<int>(y.dim(3)));
  std::copy(y.data().begin(), y.data().end(), out.data.begin());
  return out;
}

EvalReport evaluate_pipeline_with(const RecoverFn& recover_fn,
                                  const std::string& manifest_path,
                                  const GlyphSet& glyphs) {
  Manifest manifest = read_manifest(manifest_path);
  const std::string dir = fs::path(manifest_path).parent_path().string();

  EvalReport report;
  double sum_psnr_lq = 0, sum_psnr_rec = 0;
  int64_t ok_lq = 0, ok_rec = 0;
  for (const auto& rec : manifest.records) {
    TrainingSample s = load_sample(dir, rec);
    EvalRow row;
    row.id = rec.id;
    row.angle = rec.angle;
    row.truth = rec.digits;

    row.pred_lq = recognize(s.i_lq, glyphs).predicted;
    Image recovered = recover_fn(s.i_lq);
    row.pred_rec = recognize(recovered, glyphs).predicted;
    row.psnr_lq = psnr(s.i_lq, s.i_hq_0);
    row.psnr_rec = psnr(recovered, s.i_hq_0);
    row.ok_lq = row.pred_lq == row.truth;
    row.ok_rec = row.pred_rec == row.truth;

    sum_psnr_lq += row.psnr_lq;
    sum_psnr_rec += row.psnr_rec;
    ok_lq += row.ok_lq;
    ok_rec += row.ok_rec;
    report.rows.push_back(std::move(row));
  }
  report.n_samples = static_cast<int64_t>(report.rows.size());
  if (report.n_samples > 0) {
    const double n = static_cast<double>(report.n_samples);
    report.accuracy_lq = static_cast<double>(ok_lq) / n;
    report.accuracy_recovered = static_cast<double>(ok_rec) / n;
    report.mean_psnr_lq = sum_psnr_lq / n;
    report.mean_psnr_recovered = sum_psnr_rec / n;
  }
  return report;
}

EvalReport evaluate_pipeline(SniderModel<float>& model,
                             const std::string& manifest_path,
                             const GlyphSet& glyphs) {
  return evaluate_pipeline_with(
      [&model](const Image& img) { return recover_image(model, img); },
      manifest_path, glyphs);
}

void write_eval_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_eval_report: cannot open '" + path + "'");
  out << "id,angle,truth,pred_lq,pred_rec,psnr_lq,psnr_rec,ok_lq,ok_rec\n";
  char buf[64];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f", r.psnr_lq, r.psnr_rec);
    out << r.id << "," << r.angle << "," << r.truth << "," << r.pred_lq << ","
        << r.pred_rec << "," << buf << "," << (r.ok_lq ? 1 : 0) << ","
        << (r.ok_rec ? 1 : 0) << "\n";
  }
  out << "# n_samples " << report.n_samples << "\n";
  std::snprintf(buf, sizeof buf, "%.6f", report.accuracy_lq);
  out << "# accuracy_lq " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.6f", report.accuracy_recovered);
  out << "# accuracy_recovered " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.4f", report.mean_psnr_lq);
  out << "# mean_psnr_lq " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.4f", report.mean_psnr_recovered);
  out << "# mean_psnr_recovered " << buf << "\n";
}

}  // namespace snider
