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

// Independent fp64 reference computations used by the unit and acceptance tests.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace oracle {

using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Sum over every monotonic stay/advance path from (0, 0) to (T-1, M-1) of
/// the product of entries, by explicit enumeration.
inline double brute_force_path_sum(const MatrixD& a) {
  const auto frames = a.rows();
  const auto positions = a.cols();
  double total = 0.0;
  std::function<void(Eigen::Index, Eigen::Index, double)> walk = [&](Eigen::Index t, Eigen::Index j, double p) {
    p *= a(t, j);
    if (t == frames - 1) {
      if (j == positions - 1) total += p;
      return;
    }
    walk(t + 1, j, p);
    if (j + 1 < positions) walk(t + 1, j + 1, p);
  };
  walk(0, 0, 1.0);
  return total;
}

/// Highest-probability path by enumeration; among equal products keeps the
/// path that advances earliest (lexicographically largest position sequence).
inline std::vector<Eigen::Index> brute_force_best_path(const MatrixD& a) {
  const auto frames = a.rows();
  const auto positions = a.cols();
  double best = -1.0;
  std::vector<Eigen::Index> best_path, cur;
  std::function<void(Eigen::Index, Eigen::Index, double)> walk = [&](Eigen::Index t, Eigen::Index j, double p) {
    p *= a(t, j);
    cur.push_back(j);
    if (t == frames - 1) {
      if (j == positions - 1 && (p > best || (p == best && cur > best_path))) {
        best = p;
        best_path = cur;
      }
    } else {
      walk(t + 1, j, p);
      if (j + 1 < positions) walk(t + 1, j + 1, p);
    }
    cur.pop_back();
  };
  walk(0, 0, 1.0);
  return best_path;
}

inline MatrixD random_row_stochastic(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  MatrixD m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

/// Central differences of f at x, entry by entry.
inline MatrixD numeric_gradient(const std::function<double(const MatrixD&)>& f, const MatrixD& x, double eps) {
  MatrixD g(x.rows(), x.cols());
  MatrixD probe = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      probe(r, c) = x(r, c) + eps;
      const double up = f(probe);
      probe(r, c) = x(r, c) - eps;
      const double down = f(probe);
      probe(r, c) = x(r, c);
      g(r, c) = (up - down) / (2.0 * eps);
    }
  }
  return g;
}

/// Beta-binomial pmf from the beta function directly (no lgamma shortcuts).
inline double beta_binomial_pmf(int k, int n, double alpha, double beta) {
  auto beta_fn = [](double a, double b) { return std::tgamma(a) * std::tgamma(b) / std::tgamma(a + b); };
  double choose = 1.0;
  for (int i = 1; i <= k; ++i) choose = choose * (n - k + i) / i;
  return choose * beta_fn(k + alpha, n - k + beta) / beta_fn(alpha, beta);
}

/// Plain Levenshtein distance.
inline std::int64_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::int64_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace oracle
