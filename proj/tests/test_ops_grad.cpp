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
#include <functional>
#include <random>

#include "doctest.h"
#include "snider/ops.hpp"
#include "snider/optim.hpp"
#include "test_util.hpp"

using namespace snider;
using namespace snider::testing;

namespace {

// Checks d(loss)/d(param[i]) against central differences for every entry of
// every listed parameter. `forward` must rebuild the loss from the current
// parameter values.
void check_grads(const std::vector<Parameter<double>*>& params,
                 const std::function<Tensor<double>()>& forward,
                 double tol = 1e-3, double h = 1e-3) {
  for (auto* p : params) p->zero_grad();
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto loss = forward();
    backward(loss, tape);
  }
  for (auto* p : params) {
    auto vals = p->value().mutable_data();
    for (int64_t i = 0; i < p->numel(); ++i) {
      double fd = central_difference(
          [&] { return forward().item(); }, &vals[i], h);
      double ad = p->grad()[static_cast<size_t>(i)];
      INFO(p->name() << "[" << i << "] ad=" << ad << " fd=" << fd);
      CHECK(rel_err(ad, fd) <= tol);
    }
  }
}

Parameter<double> make_param(const std::string& name,
                             const std::vector<int64_t>& shape,
                             std::mt19937_64& rng, double lo = -1, double hi = 1) {
  return Parameter<double>(name, random_tensor<double>(shape, rng, lo, hi));
}

}  // namespace

TEST_CASE("backward: gradient of the elementwise sum is one") {
  std::mt19937_64 rng(1);
  auto p = make_param("p", {2, 3}, rng);
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto s = sum_all(p.value());
    backward(s, tape);
  }
  for (double g : p.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: scalar regression gradient is analytic") {
  // loss = mse(w*x, y) on scalars => dL/dw = 2x(wx - y)
  double x = 1.7, y = -0.4, w0 = 0.3;
  Parameter<double> w("w", Tensor<double>({1, 1, 1, 1}, {w0}));
  Tensor<double> xin({1, 1, 1, 1}, {x});
  Tensor<double> b({1});
  Tensor<double> target({1, 1, 1, 1}, {y});
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto pred = conv2d(xin, w.value(), b, 1, 0);
    auto loss = mse_loss(pred, target);
    backward(loss, tape);
  }
  CHECK(w.grad()[0] == doctest::Approx(2 * x * (w0 * x - y)).epsilon(1e-12));
}

TEST_CASE("backward: unreachable parameters keep their gradients untouched") {
  std::mt19937_64 rng(2);
  auto used = make_param("used", {4}, rng);
  auto unused = make_param("unused", {4}, rng);
  for (auto& g : unused.grad()) g = 7.0;
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto s = sum_all(used.value());
    backward(s, tape);
  }
  for (double g : unused.grad()) CHECK(g == 7.0);
  for (double g : used.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: rejects non-scalar losses") {
  std::mt19937_64 rng(3);
  auto p = make_param("p", {2, 2}, rng);
  GradientTape<double> tape;
  TapeScope<double> scope(tape);
  auto y = leaky_relu(p.value());
  CHECK_THROWS_AS(backward(y, tape), std::invalid_argument);
}

TEST_CASE("grad: conv2d against finite differences") {
  std::mt19937_64 rng(10);
  auto x = make_param("x", {2, 2, 4, 4}, rng);
  auto k = make_param("k", {3, 2, 3, 3}, rng);
  auto b = make_param("b", {3}, rng);
  auto target = random_tensor<double>({2, 3, 4, 4}, rng);
  check_grads({&x, &k, &b}, [&] {
    return mse_loss(conv2d(x.value(), k.value(), b.value(), 1, 1), target);
  });
}

TEST_CASE("grad: strided asymmetric conv2d against finite differences") {
  std::mt19937_64 rng(11);
  auto x = make_param("x", {1, 2, 6, 6}, rng);
  auto k = make_param("k", {2, 2, 7, 7}, rng);
  auto b = make_param("b", {2}, rng);
  ConvGeom g{2, {2, 3}, {2, 3}};
  auto target = random_tensor<double>({1, 2, 3, 3}, rng);
  check_grads({&x, &k, &b}, [&] {
    return mse_loss(conv2d(x.value(), k.value(), b.value(), g), target);
  });
}

TEST_CASE("grad: conv_transpose2d against finite differences") {
  std::mt19937_64 rng(12);
  auto x = make_param("x", {1, 2, 3, 3}, rng);
  auto k = make_param("k", {2, 3, 7, 7}, rng);
  auto b = make_param("b", {3}, rng);
  auto target = random_tensor<double>({1, 3, 6, 6}, rng);
  check_grads({&x, &k, &b}, [&] {
    return mse_loss(conv_transpose2d(x.value(), k.value(), b.value(), 2), target);
  });
}

TEST_CASE("grad: maxpool routes to the argmax, first on ties") {
  Parameter<double> x("x", Tensor<double>({1, 1, 2, 2}, {1.0, 4.0, 4.0, 2.0}));
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto y = maxpool2x2(x.value());
    backward(sum_all(y), tape);
  }
  // Two tied maxima at flat indices 1 and 2; row-major scan hits index 1 first.
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("grad: upsample_nearest2x sends four copies back") {
  std::mt19937_64 rng(13);
  auto x = make_param("x", {1, 2, 3, 3}, rng, 0.1, 1.0);
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(sum_all(upsample_nearest2x(x.value())), tape);
  }
  for (double g : x.grad()) CHECK(g == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("grad: concat splits the upstream gradient") {
  std::mt19937_64 rng(14);
  auto a = make_param("a", {1, 2, 3, 3}, rng);
  auto b = make_param("b", {1, 1, 3, 3}, rng);
  auto target = random_tensor<double>({1, 3, 3, 3}, rng);
  check_grads({&a, &b}, [&] {
    return mse_loss(concat_channels(a.value(), b.value()), target);
  });
}

TEST_CASE("grad: batchnorm2d against finite differences") {
  std::mt19937_64 rng(15);
  auto x = make_param("x", {3, 2, 3, 3}, rng);
  auto gamma = make_param("gamma", {2}, rng, 0.5, 1.5);
  auto beta = make_param("beta", {2}, rng, -0.5, 0.5);
  auto target = random_tensor<double>({3, 2, 3, 3}, rng);
  BatchNormState<double> st(2);
  check_grads({&x, &gamma, &beta}, [&] {
    return mse_loss(
        batchnorm2d(x.value(), gamma, beta, st, Mode::kTrain), target);
  });
}

TEST_CASE("grad: activations against finite differences") {
  std::mt19937_64 rng(16);
  // Jitter keeps entries away from the leaky_relu kink at zero.
  auto x = make_param("x", {2, 2, 3, 3}, rng);
  for (auto& v : x.value().mutable_data())
    if (std::abs(v) < 0.05) v += 0.1;
  auto target = random_tensor<double>({2, 2, 3, 3}, rng);
  check_grads({&x}, [&] { return mse_loss(leaky_relu(x.value()), target); },
              1e-3, 1e-4);

  auto y = make_param("y", {2, 2, 3, 3}, rng, -4.0, 4.0);
  check_grads({&y}, [&] { return mse_loss(sigmoid(y.value()), target); },
              1e-3, 1e-4);
}

TEST_CASE("grad: losses against finite differences") {
  std::mt19937_64 rng(17);
  auto pred = make_param("pred", {2, 3, 3}, rng);
  auto target = random_tensor<double>({2, 3, 3}, rng);
  check_grads({&pred}, [&] { return mse_loss(pred.value(), target); });

  // Keep |pred - target| away from the l1 kink.
  auto p2 = make_param("p2", {2, 3, 3}, rng, 0.5, 1.0);
  auto t2 = random_tensor<double>({2, 3, 3}, rng, -1.0, 0.0);
  check_grads({&p2}, [&] { return l1_loss(p2.value(), t2); });

  auto logits = make_param("logits", {2, 4}, rng, -2.0, 2.0);
  Tensor<double> bt({2, 4});
  for (int64_t i = 0; i < bt.numel(); ++i)
    bt.mutable_data()[i] = (rng() & 1) ? 1.0 : 0.0;
  check_grads({&logits},
              [&] { return bce_loss(sigmoid(logits.value()), bt); });
}

TEST_CASE("grad: weighted_sum applies each weight") {
  std::mt19937_64 rng(18);
  auto a = make_param("a", {1}, rng);
  auto b = make_param("b", {1}, rng);
  GradientTape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto total = weighted_sum<double>({0.4, 0.15},
                                      {sum_all(a.value()), sum_all(b.value())});
    backward(total, tape);
  }
  CHECK(a.grad()[0] == doctest::Approx(0.4));
  CHECK(b.grad()[0] == doctest::Approx(0.15));
}

TEST_CASE("adam_step: zero gradient leaves values unchanged") {
  std::mt19937_64 rng(20);
  auto p = make_param("p", {5}, rng);
  std::vector<double> before(p.value().data().begin(), p.value().data().end());
  adam_step<double>({&p}, {});
  CHECK(p.step_count() == 1);
  for (int64_t i = 0; i < 5; ++i) CHECK(p.value().data()[i] == before[i]);
}

TEST_CASE("adam_step: closed-form first step") {
  Parameter<double> w("w", Tensor<double>({1}, {0.0}));
  w.grad()[0] = 1.0;
  AdamConfig cfg;
  cfg.lr = 1e-4;
  adam_step<double>({&w}, cfg);
  double want = -1e-4 * (1.0 / (1.0 + 1e-8));
  CHECK(std::abs(w.value().data()[0] - want) < 1e-9);
  CHECK(w.grad()[0] == 1.0);  // grads left intact
}

TEST_CASE("adam_step: three steps match a scalar reference sequence") {
  Parameter<double> w("w", Tensor<double>({1}, {0.25}));
  AdamConfig cfg;
  cfg.lr = 1e-3;
  const double g = 0.7;

  // Independent scalar Adam recurrence.
  double m = 0, v = 0, ref = 0.25;
  for (int t = 1; t <= 3; ++t) {
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    double mhat = m / (1 - std::pow(0.9, t));
    double vhat = v / (1 - std::pow(0.999, t));
    ref -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);

    w.grad()[0] = g;
    adam_step<double>({&w}, cfg);
  }
  CHECK(std::abs(w.value().data()[0] - ref) < 1e-9);
  CHECK(w.step_count() == 3);
}

TEST_CASE("adam_step: inconsistent gradient buffer is rejected") {
  std::mt19937_64 rng(21);
  auto p = make_param("p", {4}, rng);
  p.grad().resize(2);
  CHECK_THROWS_AS(adam_step<double>({&p}, {}), std::invalid_argument);
}

TEST_CASE("clip_gradients: norm under the limit is a no-op") {
  Parameter<double> p("p", Tensor<double>({2}, {0.0, 0.0}));
  p.grad() = {3.0, 0.0};
  double pre = clip_gradients<double>({&p}, 5.0);
  CHECK(pre == doctest::Approx(3.0));
  CHECK(p.grad()[0] == 3.0);
}

TEST_CASE("clip_gradients: scales down to max_norm") {
  Parameter<double> p("p", Tensor<double>({2}, {0.0, 0.0}));
  p.grad() = {6.0, 8.0};  // norm 10
  double pre = clip_gradients<double>({&p}, 5.0);
  CHECK(pre == doctest::Approx(10.0));
  double post = std::hypot(p.grad()[0], p.grad()[1]);
  CHECK(std::abs(post - 5.0) < 1e-6);
}

TEST_CASE("clip_gradients: post-clip norm never exceeds the limit") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = make_param("a", {7}, rng, -10.0, 10.0);
    auto b = make_param("b", {3}, rng, -10.0, 10.0);
    for (auto& g : a.grad()) g = std::uniform_real_distribution<double>(-9, 9)(rng);
    for (auto& g : b.grad()) g = std::uniform_real_distribution<double>(-9, 9)(rng);
    double max_norm = std::uniform_real_distribution<double>(0.1, 8.0)(rng);
    clip_gradients<double>({&a, &b}, max_norm);
    double s = 0;
    for (double g : a.grad()) s += g * g;
    for (double g : b.grad()) s += g * g;
    CHECK(std::sqrt(s) <= max_norm + 1e-6);
  }
}
