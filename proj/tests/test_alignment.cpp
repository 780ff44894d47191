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
#include "oracles.hpp"
#include "t5tts/alignment.hpp"
#include "t5tts/alignment_loss.hpp"
#include "t5tts/codec_data.hpp"
#include "t5tts/gradcheck.hpp"

using namespace t5tts;
using namespace t5tts::align;
using oracle::MatrixD;

namespace {

MatrixD constant_matrix(Eigen::Index r, Eigen::Index c, double v) { return MatrixD::Constant(r, c, v); }

MatrixD row_softmax(const MatrixD& s) {
  MatrixD out = s;
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    out.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

TEST_SUITE("alignment") {
  TEST_CASE("beta-binomial prior: small cases against the beta-function oracle") {
    CHECK(beta_binomial_prior<double>(1, 1)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    const auto p = beta_binomial_prior<double>(2, 2, 1.0);
    CHECK(std::abs(p(0, 0) - 2.0 / 3.0) < 1e-9);
    CHECK(std::abs(p(0, 1) - 1.0 / 3.0) < 1e-9);
    CHECK(std::abs(p(1, 0) - 1.0 / 3.0) < 1e-9);
    CHECK(std::abs(p(1, 1) - 2.0 / 3.0) < 1e-9);
    for (double omega : {0.5, 1.0, 2.0}) {
      const auto q = beta_binomial_prior<double>(7, 5, omega);
      for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 5; ++j) {
          const double expected = oracle::beta_binomial_pmf(j, 4, omega * (i + 1), omega * (7 - i));
          CHECK(std::abs(q(i, j) - expected) < 1e-12);
        }
      }
    }
    CHECK_THROWS(beta_binomial_prior<double>(0, 3));
    CHECK_THROWS(beta_binomial_prior<double>(3, 3, 0.0));
  }

  TEST_CASE("beta-binomial prior rows are normalized with a non-decreasing argmax") {
    for (auto [t, m] : {std::pair{5, 3}, {40, 12}, {512, 512}, {300, 7}}) {
      const auto p = beta_binomial_prior<double>(t, m);
      Eigen::Index prev = 0;
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-9);
        Eigen::Index arg = 0;
        p.row(i).maxCoeff(&arg);
        CHECK(arg >= prev);
        prev = arg;
      }
    }
  }

  TEST_CASE("anneal schedule endpoints and midpoint") {
    const auto p = beta_binomial_prior<double>(6, 4);
    CHECK(*anneal_prior(p, 10, 500, 1000) == p);
    CHECK(*anneal_prior(p, 500, 500, 1000) == p);
    CHECK(*anneal_prior(p, 1000, 500, 1000) == MatrixD::Ones(6, 4));
    const auto mid = *anneal_prior(p, 750, 500, 1000);
    CHECK((mid - (p + MatrixD::Ones(6, 4)) / 2.0).cwiseAbs().maxCoeff() < 1e-15);
    CHECK_FALSE(anneal_prior(p, 1001, 500, 1000).has_value());
    // elementwise monotone toward one, bounded by the step-S1 prior and 1
    MatrixD prev = p;
    for (int s = 500; s <= 1000; s += 50) {
      const auto cur = *anneal_prior(p, s, 500, 1000);
      CHECK((cur.array() >= prev.array() - 1e-15).all());
      CHECK((cur.array() <= 1.0 + 1e-15).all());
      prev = cur;
    }
    CHECK_THROWS(anneal_prior(p, 0, 10, 10));
  }

  TEST_CASE("apply_prior is a multiplication after the softmax") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    MatrixD scores(6, 4);
    for (auto& x : scores.reshaped()) x = u(rng);
    const auto prior = oracle::random_row_stochastic(6, 4, rng);
    const AlignmentSlice whole{0, 4, 0, 6};
    const auto lhs = row_softmax(apply_prior(scores, prior, whole, 0.0));
    MatrixD rhs = row_softmax(scores).cwiseProduct(prior);
    for (Eigen::Index r = 0; r < 6; ++r) rhs.row(r) /= rhs.row(r).sum();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-5);

    // only the slice region moves
    MatrixD big = MatrixD::Zero(9, 7);
    const AlignmentSlice inner{2, 6, 1, 7};
    const auto shifted = apply_prior(big, prior, inner, 1e-8);
    CHECK(shifted.block(1, 2, 6, 4).isApprox(big.block(1, 2, 6, 4) + (prior.array() + 1e-8).log().matrix()));
    CHECK(shifted.col(0).isZero(0.0));
    CHECK(shifted.row(0).isZero(0.0));

    // all-ones prior changes nothing beyond the eps perturbation
    const auto ones = apply_prior(scores, MatrixD::Ones(6, 4), whole, 1e-8);
    CHECK((ones - scores).cwiseAbs().maxCoeff() < 1e-7);
    // a zero prior cell is suppressed
    MatrixD holes = MatrixD::Ones(6, 4);
    holes(2, 1) = 0.0;
    const auto suppressed = row_softmax(apply_prior(scores, holes, whole, 1e-8));
    CHECK(suppressed(2, 1) < 1e-6);
    CHECK_THROWS(apply_prior(scores, MatrixD::Ones(5, 4), whole, 0.0));
  }

  TEST_CASE("soft alignment slices then normalizes rows") {
    const MatrixD zeros = MatrixD::Zero(5, 6);
    const auto a = soft_alignment(zeros, AlignmentSlice{2, 6, 0, 5});
    CHECK(a.rows() == 5);
    CHECK(a.cols() == 4);
    CHECK((a.array() - 0.25).abs().maxCoeff() < 1e-15);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 2.0);
    MatrixD s(4, 3);
    for (auto& x : s.reshaped()) x = n(rng);
    CHECK((soft_alignment(s, AlignmentSlice{0, 3, 0, 4}) - row_softmax(s)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK_THROWS(soft_alignment(s, AlignmentSlice{1, 1, 0, 4}));
    CHECK_THROWS(soft_alignment(s, AlignmentSlice{0, 4, 0, 4}));
  }

  TEST_CASE("forward-sum loss: hand-enumerated cases") {
    CHECK(forward_sum_loss(constant_matrix(1, 1, 1.0)) == doctest::Approx(0.0));
    CHECK(forward_sum_loss(constant_matrix(2, 2, 0.5)) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(forward_sum_loss(constant_matrix(3, 2, 0.5)) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(forward_sum_loss(constant_matrix(2, 3, 1.0 / 3)), InfeasibleAlignmentError);
  }

  TEST_CASE("forward-sum loss matches path enumeration") {
    std::mt19937_64 rng(5);
    for (int t = 1; t <= 6; ++t) {
      for (int m = 1; m <= std::min(t, 4); ++m) {
        for (int rep = 0; rep < 10; ++rep) {
          const auto a = oracle::random_row_stochastic(t, m, rng);
          CHECK(std::abs(forward_sum_loss(a) + std::log(oracle::brute_force_path_sum(a))) < 1e-9);
        }
      }
    }
  }

  TEST_CASE("forward-sum gradient matches central differences") {
    std::mt19937_64 rng(6);
    for (auto [t, m] : {std::pair{4, 2}, {5, 3}, {7, 4}}) {
      const auto a = oracle::random_row_stochastic(t, m, rng);
      const auto g = forward_sum_loss_grad(a);
      const auto fd = oracle::numeric_gradient([](const MatrixD& x) { return forward_sum_loss(x); }, a, 1e-7);
      CHECK((g - fd).cwiseAbs().maxCoeff() / std::max(1.0, fd.cwiseAbs().maxCoeff()) < 1e-6);
    }
  }

  TEST_CASE("forward-sum gradient w.r.t. pre-softmax scores, through the autodiff op") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    t5tts::ad::TensorD scores({2, 6, 5});
    for (double& x : scores.values()) x = n(rng);
    const AlignmentSlice slice{1, 4, 1, 6};
    const double err = t5tts::ad::finite_difference_check<double>(
        [&](const t5tts::ad::VarD& s) { return forward_sum_loss(soft_alignment(s, 1, slice)); }, scores, 1e-6);
    CHECK(err < 1e-3);
  }

  TEST_CASE("viterbi path: diagonal, tie-break and infeasible input") {
    MatrixD diag = constant_matrix(3, 3, 0.05);
    diag.diagonal().setConstant(0.9);
    CHECK(viterbi_path(diag) == std::vector<Index>{0, 1, 2});
    CHECK(viterbi_path(constant_matrix(3, 2, 0.5)) == std::vector<Index>{0, 1, 1});
    CHECK_THROWS_AS(viterbi_path(constant_matrix(1, 2, 0.5)), InfeasibleAlignmentError);
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 50; ++rep) {
      const auto a = oracle::random_row_stochastic(6, 3, rng);
      const auto path = viterbi_path(a);
      CHECK(path == oracle::brute_force_best_path(a));
      for (std::size_t t = 1; t < path.size(); ++t) CHECK((path[t] - path[t - 1] == 0 || path[t] - path[t - 1] == 1));
    }
  }

  TEST_CASE("viterbi path recovers the synthetic frame-to-symbol map") {
    SyntheticSpec shape;
    const auto spec = SyntheticSpec::generate(shape, 11);
    const std::vector<int> symbols{3, 3, 7, 1, 3};
    const auto truth = spec.ground_truth_alignment(symbols);
    MatrixD a = constant_matrix(static_cast<Index>(truth.size()), static_cast<Index>(symbols.size()), 0.02);
    for (std::size_t t = 0; t < truth.size(); ++t) a(static_cast<Index>(t), truth[t]) = 0.9;
    const auto path = viterbi_path(a);
    for (std::size_t t = 0; t < truth.size(); ++t) CHECK(path[t] == truth[t]);
  }

  TEST_CASE("diagonality formula values") {
    CHECK(diagonality(MatrixD::Identity(4, 4)) == doctest::Approx(1.0));
    MatrixD anti(2, 2);
    anti << 0, 1, 1, 0;
    CHECK(diagonality(anti) == doctest::Approx(0.0));
    for (int t : {2, 3, 9}) CHECK(diagonality(constant_matrix(t, 2, 0.5)) == doctest::Approx(0.5));
    CHECK_THROWS(diagonality(constant_matrix(1, 3, 1.0 / 3)));
  }

  TEST_CASE("diagnose counts stalls and skipped positions") {
    MatrixD a = constant_matrix(6, 3, 0.01);
    // positions 0,0,0,0,2,2: position 1 is skipped by the argmax, position 0 overstays
    for (int t : {0, 1, 2, 3}) a(t, 0) = 0.98;
    a(4, 2) = a(5, 2) = 0.98;
    const auto rec = diagnose(a, {2, 2, 2});
    CHECK(rec.misses == 1);
    CHECK(rec.repeats >= 1);
    CHECK(rec.viterbi_path.front() == 0);
    CHECK(rec.viterbi_path.back() == 2);
  }

  TEST_CASE("total alignment loss sums the selected heads") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    AttentionCapture<double> cap;
    cap.layers = 2;
    cap.heads = 2;
    std::vector<AlignmentSlice> slices{{1, 4, 0, 5}, {1, 3, 0, 4}};
    for (int k = 0; k < 4; ++k) {
      t5tts::ad::TensorD s({2, 5, 4});
      for (double& x : s.values()) x = n(rng);
      cap.scores.push_back(t5tts::ad::leaf(s));
    }
    auto single = [&](int l, int h) {
      double total = 0.0;
      for (int b = 0; b < 2; ++b) {
        total += forward_sum_loss(soft_alignment(cap.at(l, h), b, slices[static_cast<std::size_t>(b)])).item();
      }
      return total / 2.0;
    };
    CHECK(total_align_loss(cap, HeadSet{{1, 0}}, slices).item() == doctest::Approx(single(1, 0)).epsilon(1e-12));
    const double manual = single(0, 0) + single(0, 1) + single(1, 0) + single(1, 1);
    CHECK(total_align_loss(cap, all_heads(2, 2), slices).item() == doctest::Approx(manual).epsilon(1e-12));
    CHECK(total_align_loss(cap, two_heads_per_layer(2, 2), slices).item() == doctest::Approx(manual).epsilon(1e-12));

    AttentionCapture<double> same = cap;
    for (auto& s : same.scores) s = cap.scores[0];
    CHECK(total_align_loss(same, all_heads(2, 2), slices).item() ==
          doctest::Approx(4.0 * total_align_loss(same, HeadSet{{0, 0}}, slices).item()).epsilon(1e-12));
    CHECK_THROWS(total_align_loss(cap, HeadSet{{2, 0}}, slices));
    CHECK_THROWS(total_align_loss(cap, HeadSet{}, slices));
  }

  TEST_CASE("head set parsing") {
    CHECK(parse_head_set("all", 3, 4).size() == 12);
    CHECK(parse_head_set("two_per_layer", 3, 4) == HeadSet{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}, {2, 1}});
    CHECK(parse_head_set("0:1,2:3", 3, 4) == HeadSet{{0, 1}, {2, 3}});
    CHECK_THROWS(parse_head_set("3:0", 3, 4));
    CHECK_THROWS(parse_head_set("bogus", 3, 4));
    CHECK_THROWS(parse_head_set("", 3, 4));
  }
}
