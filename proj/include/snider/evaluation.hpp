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

#ifndef SNIDER_EVALUATION_HPP_
#define SNIDER_EVALUATION_HPP_

#include <functional>
#include <string>
#include <vector>

#include "snider/data_synthesis.hpp"
#include "snider/network.hpp"

namespace snider {

struct CharMatch {
  int position = 0;  // left edge of the matched template, pixels
  char glyph = 0;
  double score = 0;  // normalized cross-correlation, in [-1, 1]
};

struct RecognitionResult {
  std::string predicted;           // possibly empty
  std::vector<CharMatch> per_char; // sorted by position, left to right
};

/// Match acceptance threshold and the non-overlap radius as a fraction of the
/// wider template involved.
inline constexpr double kRecognizeThreshold = 0.6;
inline constexpr double kRecognizeSuppression = 0.8;

/// Deterministic template recognizer: each glyph is scanned over the image at
/// every integer scale the canvas could have been rendered with, scoring by
/// normalized cross-correlation on inverted brightness; peaks above the
/// threshold survive non-overlap suppression and are read off left to right.
RecognitionResult recognize(const Image& image, const GlyphSet& glyphs);

/// Fraction of samples whose predicted string equals the ground truth in full
/// (one wrong or missing character fails the sample).
double full_lpr_accuracy(const std::vector<std::string>& predictions,
                         const std::vector<std::string>& ground_truths);

/// 10*log10(1/MSE) for unit dynamic range, capped at 99 dB.
inline constexpr double kPsnrCap = 99.0;
double psnr(const Image& a, const Image& b);

struct EvalRow {
  std::string id;
  int angle = 0;
  std::string truth, pred_lq, pred_rec;
  double psnr_lq = 0, psnr_rec = 0;
  bool ok_lq = false, ok_rec = false;
};

struct EvalReport {
  int64_t n_samples = 0;
  double accuracy_lq = 0, accuracy_recovered = 0;
  double mean_psnr_lq = 0, mean_psnr_recovered = 0;
  std::vector<EvalRow> rows;  // manifest order
};

using RecoverFn = std::function<Image(const Image&)>;

/// Runs the recognizer on each test sample twice, on the raw low-quality
/// image and on its recovery, scoring both against the digit ground truth and
/// both PSNRs against the unrotated clean plate.
EvalReport evaluate_pipeline(SniderModel<float>& model,
                             const std::string& manifest_path,
                             const GlyphSet& glyphs);

/// Same pipeline with an arbitrary recovery function (test hook; the identity
/// makes both accuracies coincide).
EvalReport evaluate_pipeline_with(const RecoverFn& recover_fn,
                                  const std::string& manifest_path,
                                  const GlyphSet& glyphs);

/// CSV report: one row per sample plus '#'-prefixed summary lines.
void write_eval_report(const EvalReport& report, const std::string& path);

/// Recovery of a single image through the model in eval mode.
Image recover_image(SniderModel<float>& model, const Image& img);

}  // namespace snider

#endif  // SNIDER_EVALUATION_HPP_
