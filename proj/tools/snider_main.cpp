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
//
// Command-line entry point: dataset synthesis, training, recovery, evaluation
// and the gradient-check suite. Exit codes: 0 success, 1 usage or
// configuration error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "snider/data_synthesis.hpp"
#include "snider/evaluation.hpp"
#include "snider/gradcheck.hpp"
#include "snider/network.hpp"
#include "snider/threading.hpp"
#include "snider/training.hpp"

namespace fs = std::filesystem;
using namespace snider;

namespace {

struct SynthArgs {
  DatasetOptions opts;
  std::string out;
  bool no_decoration = false;
};

int run_synth(const SynthArgs& a) {
  DatasetOptions opts = a.opts;
  opts.decoration = !a.no_decoration;
  auto [train_manifest, test_manifest] = make_dataset(opts, a.out);
  auto train = read_manifest(train_manifest);
  auto test = read_manifest(test_manifest);
  std::printf("wrote %zu train samples -> %s\n", train.records.size(),
              train_manifest.c_str());
  std::printf("wrote %zu test samples  -> %s\n", test.records.size(),
              test_manifest.c_str());
  return 0;
}

struct TrainArgs {
  TrainConfig cfg;
  std::string data;
  std::string variant = "tiny";
};

int run_train(TrainArgs& a) {
  a.cfg.variant = variant_from_name(a.variant);
  auto result = train(a.cfg, a.data);
  std::printf("trained %lld iterations\n",
              static_cast<long long>(result.iterations));
  std::printf("final: l_gd=%.6g l_gr=%.6g l_ds=%.6g l_dc=%.6g total=%.6g\n",
              result.final_losses.l_gd, result.final_losses.l_gr,
              result.final_losses.l_ds, result.final_losses.l_dc,
              result.final_losses.total);
  std::printf("checkpoint: %s\nmetrics: %s\n", result.checkpoint_path.c_str(),
              result.metrics_path.c_str());
  return 0;
}

struct RecoverArgs {
  std::string ckpt;
  std::vector<std::string> images;
};

int run_recover(const RecoverArgs& a) {
  auto loaded = load_checkpoint(a.ckpt);
  for (const auto& path : a.images) {
    Image in = read_pnm(path);
    if (in.height != loaded.model.input_size || in.width != loaded.model.input_size)
      throw std::runtime_error("recover: image '" + path + "' is " +
                               std::to_string(in.width) + "x" +
                               std::to_string(in.height) +
                               " but the checkpoint expects " +
                               std::to_string(loaded.model.input_size));
    Image out = recover_image(loaded.model, in);
    fs::path p(path);
    fs::path out_path = p.parent_path() / (p.stem().string() + "_rec.ppm");
    write_pnm(out_path.string(), out);
    std::printf("%s -> %s\n", path.c_str(), out_path.string().c_str());
  }
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string model = "ckpt";  // "ckpt" or "identity"
  std::string data;
  std::string out = "report.csv";
};

int run_eval(const EvalArgs& a) {
  EvalReport report;
  if (a.model == "identity") {
    report = evaluate_pipeline_with([](const Image& img) { return img; },
                                    a.data, digit_glyphs());
  } else {
    if (a.ckpt.empty())
      throw CLI::ValidationError("eval", "--ckpt is required unless --model identity");
    auto loaded = load_checkpoint(a.ckpt);
    report = evaluate_pipeline(loaded.model, a.data, digit_glyphs());
  }
  write_eval_report(report, a.out);
  std::printf("samples: %lld\n", static_cast<long long>(report.n_samples));
  std::printf("accuracy_lq:        %.4f\n", report.accuracy_lq);
  std::printf("accuracy_recovered: %.4f\n", report.accuracy_recovered);
  std::printf("mean_psnr_lq:        %.3f dB\n", report.mean_psnr_lq);
  std::printf("mean_psnr_recovered: %.3f dB\n", report.mean_psnr_recovered);
  std::printf("report: %s\n", a.out.c_str());
  return 0;
}

struct GradcheckArgs {
  int size = 8;
  uint64_t seed = 1;
  int entries = 8;
  double h = 1e-5;
  double tolerance = 1e-3;
};

int run_gradcheck(const GradcheckArgs& a) {
  auto rep = gradcheck_tiny(a.size, a.seed, a.entries, a.h, a.tolerance);
  std::printf("checked %lld entries across %lld parameter tensors\n",
              static_cast<long long>(rep.entries_checked),
              static_cast<long long>(rep.params_checked));
  std::printf("max relative error: %.3e (tolerance %.1e)\n", rep.max_rel,
              a.tolerance);
  if (!rep.failures.empty()) {
    for (const auto& f : rep.failures)
      std::printf("FAIL %s[%lld] analytic=%.6e numeric=%.6e rel=%.3e\n",
                  f.param.c_str(), static_cast<long long>(f.index), f.analytic,
                  f.numeric, f.rel);
    return 2;
  }
  std::printf("gradient check passed\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"snider: license-plate recovery pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a key = value file");
  app.allow_config_extras(false);

  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (default 1, reproducible)")
      ->envname("SNIDER_THREADS")
      ->check(CLI::PositiveNumber);

  SynthArgs synth;
  synth.opts.noise_sigma = 0.05;  // shipped default; library default is 0
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic plate dataset");
  synth_cmd->add_option("--plates", synth.opts.n_plates, "Number of plates")
      ->required();
  synth_cmd->add_option("--size", synth.opts.size, "Image size (default 64)");
  synth_cmd->add_option("--seed", synth.opts.seed, "Random seed");
  synth_cmd->add_option("--split", synth.opts.split, "Train fraction (default 0.8)");
  synth_cmd->add_option("--noise-sigma", synth.opts.noise_sigma,
                        "Additive Gaussian noise level (default 0.05)");
  synth_cmd->add_option("--min-digits", synth.opts.min_digits, "Minimum digits");
  synth_cmd->add_option("--max-digits", synth.opts.max_digits, "Maximum digits");
  synth_cmd->add_flag("--no-decoration", synth.no_decoration,
                      "Disable the logo block");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs targs;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
  train_cmd->add_option("--data", targs.data, "Train manifest path")->required();
  train_cmd->add_option("--out", targs.cfg.out_dir, "Output directory")->required();
  train_cmd->add_option("--variant", targs.variant, "snider or tiny (default tiny)");
  train_cmd->add_option("--size", targs.cfg.input_size, "Input size (default 64)");
  train_cmd->add_option("--batch", targs.cfg.batch_size, "Batch size (default 16)");
  train_cmd->add_option("--iters", targs.cfg.max_iterations, "Total iterations")
      ->required();
  train_cmd->add_option("--seed", targs.cfg.seed, "Random seed");
  train_cmd->add_option("--lr", targs.cfg.lr_initial, "Initial learning rate");
  train_cmd->add_option("--lr-final", targs.cfg.lr_final, "Final learning rate");
  train_cmd->add_option("--lr-switch-epoch", targs.cfg.lr_switch_epoch,
                        "Epoch at which the rate drops (default 100)");
  train_cmd->add_option("--lr-switch-iter", targs.cfg.lr_switch_iteration,
                        "Iteration at which the rate drops (overrides epochs)");
  train_cmd->add_option("--clip-norm", targs.cfg.clip_norm,
                        "Gradient clipping norm (default 5)");
  train_cmd->add_option("--lambda-gd", targs.cfg.weights.lambda_gd,
                        "Denoising loss weight (default 0.4)");
  train_cmd->add_option("--lambda-gr", targs.cfg.weights.lambda_gr,
                        "Rectification loss weight (default 0.4)");
  train_cmd->add_option("--lambda-ds", targs.cfg.weights.lambda_ds,
                        "Segmentation loss weight (default 0.15)");
  train_cmd->add_option("--lambda-dc", targs.cfg.weights.lambda_dc,
                        "Counting loss weight (default 0.05)");
  train_cmd->add_option("--stage1-frac", targs.cfg.stage1_frac,
                        "Fraction of iterations in the denoise-only stage");
  train_cmd->add_option("--stage2-frac", targs.cfg.stage2_frac,
                        "Fraction in the two-head stage");
  train_cmd->add_option("--ckpt-every", targs.cfg.checkpoint_every,
                        "Checkpoint cadence in iterations (0: final only)");
  train_cmd->add_option("--resume", targs.cfg.resume,
                        "Continue from this checkpoint");

  RecoverArgs rargs;
  auto* recover_cmd =
      app.add_subcommand("recover", "Recover plate images through a checkpoint");
  recover_cmd->add_option("--ckpt", rargs.ckpt, "Checkpoint path")->required();
  recover_cmd->add_option("images", rargs.images, "PPM images to recover")
      ->required();

  EvalArgs eargs;
  auto* eval_cmd =
      app.add_subcommand("eval", "Recognition accuracy on a test manifest");
  eval_cmd->add_option("--ckpt", eargs.ckpt, "Checkpoint path");
  eval_cmd->add_option("--model", eargs.model,
                       "'ckpt' (default) or 'identity' test hook");
  eval_cmd->add_option("--data", eargs.data, "Test manifest path")->required();
  eval_cmd->add_option("--out", eargs.out, "Report CSV path (default report.csv)");

  GradcheckArgs gargs;
  auto* gradcheck_cmd = app.add_subcommand(
      "gradcheck", "Finite-difference check of all parameter gradients");
  gradcheck_cmd->add_option("--size", gargs.size, "Input size (default 8)");
  gradcheck_cmd->add_option("--seed", gargs.seed, "Model/data seed");
  gradcheck_cmd->add_option("--entries", gargs.entries,
                            "Sampled entries per parameter tensor (default 8)");
  gradcheck_cmd->add_option("--step", gargs.h, "Finite-difference step");
  gradcheck_cmd->add_option("--tolerance", gargs.tolerance,
                            "Maximum relative error (default 1e-3)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit cleanly
  }

  try {
    set_num_threads(threads);
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(targs);
    if (*recover_cmd) return run_recover(rargs);
    if (*eval_cmd) return run_eval(eargs);
    if (*gradcheck_cmd) return run_gradcheck(gargs);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
