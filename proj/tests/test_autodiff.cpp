// Copyright 2026 The t5tts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>

#include "doctest.h"
#include "t5tts/autodiff.hpp"
#include "t5tts/gradcheck.hpp"

using namespace t5tts::ad;

namespace {

TensorD random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(std::move(shape));
  for (double& x : t.values()) x = u(rng);
  return t;
}

// Weighted sum so that every output entry gets a distinct upstream gradient.
VarD weighted_sum(const VarD& v, std::uint64_t seed = 99) {
  return reduce_sum(mul(v, constant(random_tensor(v.shape(), seed))));
}

double check(const LossBuilder<double>& f, const TensorD& x) { return finite_difference_check<double>(f, x, 1e-6); }

constexpr double kTol = 1e-6;

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("sum of exp matches finite differences") {
    const TensorD x({3}, std::vector<double>{0.5, -1.0, 2.0});
    CHECK(check([](const VarD& v) { return reduce_sum(exp(v)); }, x) < 1e-4);
    auto leafx = leaf(x);
    backward(reduce_sum(exp(leafx)));
    for (int i = 0; i < 3; ++i) CHECK(leafx.grad()[i] == doctest::Approx(std::exp(x[i])).epsilon(1e-12));
  }

  TEST_CASE("matmul of 2x3 by 3x2 gives a 2x2 result") {
    const auto a = leaf(random_tensor({2, 3}, 1));
    const auto b = leaf(random_tensor({3, 2}, 2));
    CHECK(matmul(a, b).shape() == Shape{2, 2});
    CHECK_THROWS_AS(matmul(a, a), DimensionError);
  }

  TEST_CASE("elementwise and reduction ops") {
    const TensorD x = random_tensor({2, 3, 4}, 3);
    const TensorD pos = random_tensor({2, 3, 4}, 4, 0.2, 2.0);
    const auto other = constant(random_tensor({2, 3, 4}, 5));
    const auto suffix = constant(random_tensor({4}, 6));
    CHECK(check([&](const VarD& v) { return weighted_sum(add(v, other)); }, x) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(sub(other, v)); }, x) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(mul(v, v)); }, x) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(mul(v, suffix)); }, x) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(scale(v, -2.5)); }, x) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(exp(v)); }, x) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(log(v)); }, pos) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(gelu(v)); }, x) < kTol);
    CHECK(check([&](const VarD& v) { return reduce_mean(mul(v, other)); }, x) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(relu(v)); }, x) < kTol);
  }

  TEST_CASE("broadcast gradient flows into the suffix operand") {
    const TensorD bias = random_tensor({4}, 7);
    const auto x = constant(random_tensor({2, 3, 4}, 8));
    CHECK(check([&](const VarD& b) { return weighted_sum(add(x, b)); }, bias) < kTol);
    CHECK(check([&](const VarD& b) { return weighted_sum(mul(x, b)); }, bias) < kTol);
    CHECK_THROWS_AS(add(x, constant(random_tensor({3}, 9))), DimensionError);
  }

  TEST_CASE("softmax, logsumexp and layer norm") {
    const TensorD x = random_tensor({3, 5}, 10, -3.0, 3.0);
    CHECK(check([](const VarD& v) { return weighted_sum(softmax_lastdim(v)); }, x) < kTol);
    CHECK(check([](const VarD& v) { return weighted_sum(logsumexp_lastdim(v)); }, x) < kTol);
    const auto gain = constant(random_tensor({5}, 11, 0.5, 1.5));
    const auto bias = constant(random_tensor({5}, 12));
    CHECK(check([&](const VarD& v) { return weighted_sum(layer_norm_lastdim(v, gain, bias)); }, x) < 1e-5);
    const auto xs = constant(x);
    CHECK(check([&](const VarD& g) { return weighted_sum(layer_norm_lastdim(xs, g, bias)); }, gain.value()) < kTol);

    const auto probs = softmax_lastdim(constant(x)).value();
    for (int r = 0; r < 3; ++r) {
      double s = 0;
      for (int c = 0; c < 5; ++c) s += probs[r * 5 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("matmul gradients, plain and batched") {
    const TensorD a = random_tensor({2, 3, 4}, 13);
    const auto w = constant(random_tensor({4, 5}, 14));
    const auto batched = constant(random_tensor({2, 4, 3}, 15));
    CHECK(check([&](const VarD& v) { return weighted_sum(matmul(v, w)); }, a) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(matmul(constant(a), v)); }, w.value()) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(matmul(v, batched)); }, a) < kTol);
    CHECK(check([&](const VarD& v) { return weighted_sum(matmul(constant(a), v)); }, batched.value()) < kTol);
  }

  TEST_CASE("shape ops: slice, concat, transpose, reshape, masked_fill, gather") {
    const TensorD x = random_tensor({2, 3, 4}, 16);
    CHECK(check([](const VarD& v) { return weighted_sum(slice(v, 1, 1, 2)); }, x) < kTol);
    CHECK(check([](const VarD& v) { return weighted_sum(slice(v, -1, 0, 3)); }, x) < kTol);
    CHECK(check([](const VarD& v) { return weighted_sum(concat(std::vector<VarD>{v, scale(v, 2.0)}, 2)); }, x) < kTol);
    CHECK(check([](const VarD& v) { return weighted_sum(concat(std::vector<VarD>{v, v}, 0)); }, x) < kTol);
    CHECK(check([](const VarD& v) { return weighted_sum(transpose_last_two(v)); }, x) < kTol);
    CHECK(check([](const VarD& v) { return weighted_sum(reshape(v, {6, 4})); }, x) < kTol);
    std::vector<std::uint8_t> mask(24, 0);
    mask[3] = mask[7] = mask[20] = 1;
    CHECK(check([&](const VarD& v) { return weighted_sum(masked_fill(v, mask, -5.0)); }, x) < kTol);
    const auto filled = masked_fill(constant(x), mask, -5.0).value();
    CHECK(filled[7] == -5.0);
    CHECK(filled[8] == x[8]);

    const TensorD table = random_tensor({5, 3}, 17);
    const std::vector<std::int32_t> ids{4, 0, 4, 2};
    CHECK(check([&](const VarD& t) { return weighted_sum(embedding_gather(t, ids, {2, 2})); }, table) < kTol);
    const auto g = embedding_gather(constant(table), ids, {2, 2});
    CHECK(g.shape() == Shape{2, 2, 3});
    CHECK(g.value()[3 * 3 + 1] == table[2 * 3 + 1]);
    const std::vector<std::int32_t> bad{5};
    CHECK_THROWS(embedding_gather(constant(table), bad, {1}));
    CHECK_THROWS_AS(slice(constant(x), 1, 2, 2), DimensionError);
  }

  TEST_CASE("softmax cross entropy ignores -1 targets") {
    const TensorD logits = random_tensor({4, 6}, 18, -2.0, 2.0);
    const std::vector<std::int32_t> targets{1, -1, 5, 0};
    CHECK(check([&](const VarD& v) { return softmax_cross_entropy(v, targets); }, logits) < kTol);
    // manual mean over the three valid rows
    double expected = 0.0;
    for (int r : {0, 2, 3}) {
      double z = 0.0;
      for (int c = 0; c < 6; ++c) z += std::exp(logits[r * 6 + c]);
      expected += std::log(z) - logits[r * 6 + targets[static_cast<std::size_t>(r)]];
    }
    CHECK(softmax_cross_entropy(constant(logits), targets).item() == doctest::Approx(expected / 3).epsilon(1e-12));
    const std::vector<std::int32_t> none{-1, -1, -1, -1};
    CHECK_THROWS(softmax_cross_entropy(constant(logits), none));
  }

  TEST_CASE("non-scalar loss is rejected") {
    const auto x = leaf(random_tensor({2, 2}, 19));
    CHECK_THROWS_AS(backward(exp(x)), std::logic_error);
  }

  TEST_CASE("leaf gradients accumulate, intermediate gradients reset") {
    const auto x = leaf(TensorD({2}, std::vector<double>{1.0, 2.0}));
    auto loss = reduce_sum(mul(x, x));
    backward(loss);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK(x.grad()[1] == doctest::Approx(8.0));
  }

  TEST_CASE("no-grad guard records no graph") {
    const auto x = leaf(TensorD({2}, std::vector<double>{1.0, 2.0}));
    NoGradGuard guard;
    const auto y = exp(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->inputs.empty());
  }

  TEST_CASE("identical graphs give bitwise identical gradients") {
    auto run = [] {
      const auto w = leaf(random_tensor({8, 8}, 20).cast<float>());
      const auto x = constant(random_tensor({4, 8}, 21).cast<float>());
      std::mt19937_64 rng(5);
      auto h = dropout(gelu(matmul(x, w)), 0.1f, rng);
      backward(reduce_mean(softmax_lastdim(h)));
      return w.grad().storage();
    };
    CHECK(run() == run());
  }

  TEST_CASE("dropout keeps the expectation and is the identity at p = 0") {
    const auto x = constant(Tensor({20000}, 1.0f));
    std::mt19937_64 rng(1);
    CHECK(dropout(x, 0.0f, rng).value().storage() == x.value().storage());
    const auto y = dropout(x, 0.25f, rng).value();
    double mean = 0.0;
    for (float v : y.values()) mean += v;
    CHECK(mean / 20000.0 == doctest::Approx(1.0).epsilon(0.03));
  }
}
