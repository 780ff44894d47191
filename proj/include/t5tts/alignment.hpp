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

// Monotonic text/audio alignment: the beta-binomial attention prior, its
// linear annealing schedule, the stay-or-advance forward-sum loss and hard
// decoding diagnostics. Everything here is templated on the scalar type so
// the same code serves fp32 training and fp64 test oracles.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace t5tts::align {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Eigen::Index;

/// A monotonic covering does not exist (fewer answer frames than text positions).
class InfeasibleAlignmentError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Question/answer bounds inside a full decoder x encoder attention matrix.
/// Half-open: rows [a_s, a_e), columns [q_s, q_e).
struct AlignmentSlice {
  Index q_s = 0;
  Index q_e = 0;
  Index a_s = 0;
  Index a_e = 0;

  Index question_len() const { return q_e - q_s; }
  Index answer_len() const { return a_e - a_s; }

  void validate() const {
    if (q_s < 0 || q_e <= q_s || a_s < 0 || a_e <= a_s) {
      throw std::invalid_argument("AlignmentSlice: empty or negative bounds (q " + std::to_string(q_s) +
                                  ".." + std::to_string(q_e) + ", a " + std::to_string(a_s) + ".." +
                                  std::to_string(a_e) + ")");
    }
  }

  void validate_within(Index rows, Index cols) const {
    validate();
    if (a_e > rows || q_e > cols) {
      throw std::invalid_argument("AlignmentSlice: bounds exceed " + std::to_string(rows) + "x" +
                                  std::to_string(cols) + " score matrix");
    }
  }

  bool operator==(const AlignmentSlice&) const = default;
};

namespace detail {

template <typename S>
S log_add(S a, S b) {
  if (a == -std::numeric_limits<S>::infinity()) return b;
  if (b == -std::numeric_limits<S>::infinity()) return a;
  const S m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline void require_feasible(Index frames, Index positions, const char* what) {
  if (frames < positions) {
    throw InfeasibleAlignmentError(std::string(what) + ": " + std::to_string(frames) +
                                   " answer frames cannot cover " + std::to_string(positions) +
                                   " text positions");
  }
}

}  // namespace detail

/// Row-stochastic near-diagonal prior. Row i is the beta-binomial pmf over
/// text positions j in [0, M) with n = M - 1, alpha = omega (i + 1),
/// beta = omega (T - i).
template <typename Scalar = double>
Matrix<Scalar> beta_binomial_prior(Index answer_len, Index question_len, double omega = 1.0) {
  if (answer_len < 1 || question_len < 1 || !(omega > 0.0)) {
    throw std::invalid_argument("beta_binomial_prior: need T' >= 1, M' >= 1 and omega > 0");
  }
  const double n = static_cast<double>(question_len - 1);
  auto log_beta = [](double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); };
  Matrix<Scalar> prior(answer_len, question_len);
  for (Index i = 0; i < answer_len; ++i) {
    const double alpha = omega * static_cast<double>(i + 1);
    const double beta = omega * static_cast<double>(answer_len - i);
    const double norm = log_beta(alpha, beta);
    for (Index j = 0; j < question_len; ++j) {
      const double k = static_cast<double>(j);
      const double log_choose = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
      prior(i, j) = static_cast<Scalar>(std::exp(log_choose + log_beta(k + alpha, n - k + beta) - norm));
    }
  }
  return prior;
}

/// Linear anneal from the prior at step_begin to all-ones at step_end.
/// Returns nullopt once step > step_end: no prior is applied at all.
template <typename Derived>
std::optional<Matrix<typename Derived::Scalar>> anneal_prior(const Eigen::MatrixBase<Derived>& prior,
                                                             std::int64_t step, std::int64_t step_begin,
                                                             std::int64_t step_end) {
  using S = typename Derived::Scalar;
  if (step_begin >= step_end) throw std::invalid_argument("anneal_prior: need S_1 < S_2");
  if (step > step_end) return std::nullopt;
  if (step <= step_begin) return Matrix<S>(prior);
  const S span = static_cast<S>(step_end - step_begin);
  const S w_prior = static_cast<S>(step_end - step);
  const S w_ones = static_cast<S>(step - step_begin);
  return Matrix<S>(((w_prior * prior.array() + w_ones) / span).matrix());
}

/// Adds log(prior + eps) to the slice region of pre-softmax scores. After a
/// row softmax the slice is proportional to softmax(scores) * prior.
template <typename DerivedS, typename DerivedP>
Matrix<typename DerivedS::Scalar> apply_prior(const Eigen::MatrixBase<DerivedS>& scores,
                                              const Eigen::MatrixBase<DerivedP>& prior,
                                              const AlignmentSlice& slice,
                                              typename DerivedS::Scalar eps = 1e-8) {
  slice.validate_within(scores.rows(), scores.cols());
  if (prior.rows() != slice.answer_len() || prior.cols() != slice.question_len()) {
    throw std::invalid_argument("apply_prior: prior is " + std::to_string(prior.rows()) + "x" +
                                std::to_string(prior.cols()) + ", slice needs " +
                                std::to_string(slice.answer_len()) + "x" +
                                std::to_string(slice.question_len()));
  }
  Matrix<typename DerivedS::Scalar> out = scores;
  out.block(slice.a_s, slice.q_s, slice.answer_len(), slice.question_len()).array() +=
      (prior.array().template cast<typename DerivedS::Scalar>() + eps).log();
  return out;
}

/// Row softmax of the question x answer block.
template <typename Derived>
Matrix<typename Derived::Scalar> soft_alignment(const Eigen::MatrixBase<Derived>& scores,
                                                const AlignmentSlice& slice) {
  slice.validate_within(scores.rows(), scores.cols());
  Matrix<typename Derived::Scalar> a =
      scores.block(slice.a_s, slice.q_s, slice.answer_len(), slice.question_len());
  for (Index r = 0; r < a.rows(); ++r) {
    a.row(r).array() = (a.row(r).array() - a.row(r).maxCoeff()).exp();
    a.row(r) /= a.row(r).sum();
  }
  return a;
}

/// Log-space forward and backward tables of the stay-or-advance lattice.
/// log_alpha(t, j) covers frames 0..t and includes a(t, j); log_beta(t, j)
/// covers frames t+1..T-1.
template <typename Scalar>
struct ForwardSumLattice {
  Matrix<Scalar> log_alpha;
  Matrix<Scalar> log_beta;
  Scalar log_likelihood = 0;
};

template <typename Derived>
ForwardSumLattice<typename Derived::Scalar> forward_sum_lattice(const Eigen::MatrixBase<Derived>& probs) {
  using S = typename Derived::Scalar;
  const Index frames = probs.rows();
  const Index positions = probs.cols();
  if (frames < 1 || positions < 1) throw std::invalid_argument("forward_sum: empty alignment");
  detail::require_feasible(frames, positions, "forward_sum");
  constexpr S neg_inf = -std::numeric_limits<S>::infinity();
  const Matrix<S> log_a = probs.array().log().matrix();

  ForwardSumLattice<S> lat;
  lat.log_alpha = Matrix<S>::Constant(frames, positions, neg_inf);
  lat.log_alpha(0, 0) = log_a(0, 0);
  for (Index t = 1; t < frames; ++t) {
    // column j is reachable only for j <= t and must still reach the end
    const Index lo = std::max<Index>(0, positions - (frames - t));
    const Index hi = std::min(t, positions - 1);
    for (Index j = lo; j <= hi; ++j) {
      const S stay = lat.log_alpha(t - 1, j);
      const S advance = j > 0 ? lat.log_alpha(t - 1, j - 1) : neg_inf;
      lat.log_alpha(t, j) = detail::log_add(stay, advance) + log_a(t, j);
    }
  }
  lat.log_beta = Matrix<S>::Constant(frames, positions, neg_inf);
  lat.log_beta(frames - 1, positions - 1) = S(0);
  for (Index t = frames - 2; t >= 0; --t) {
    for (Index j = 0; j < positions; ++j) {
      const S stay = lat.log_beta(t + 1, j) + log_a(t + 1, j);
      const S advance = j + 1 < positions ? lat.log_beta(t + 1, j + 1) + log_a(t + 1, j + 1) : neg_inf;
      lat.log_beta(t, j) = detail::log_add(stay, advance);
    }
  }
  lat.log_likelihood = lat.log_alpha(frames - 1, positions - 1);
  return lat;
}

/// Negative log of the summed probability of every monotonic path that starts
/// at position 0, ends at the last position and advances by 0 or 1 per frame.
template <typename Derived>
typename Derived::Scalar forward_sum_loss(const Eigen::MatrixBase<Derived>& probs) {
  return -forward_sum_lattice(probs).log_likelihood;
}

/// d forward_sum_loss / d probs.
template <typename Derived>
Matrix<typename Derived::Scalar> forward_sum_loss_grad(const Eigen::MatrixBase<Derived>& probs) {
  using S = typename Derived::Scalar;
  const auto lat = forward_sum_lattice(probs);
  const Index frames = probs.rows();
  const Index positions = probs.cols();
  constexpr S neg_inf = -std::numeric_limits<S>::infinity();
  Matrix<S> grad = Matrix<S>::Zero(frames, positions);
  if (lat.log_likelihood == neg_inf) return grad;
  for (Index t = 0; t < frames; ++t) {
    for (Index j = 0; j < positions; ++j) {
      // prefix mass reaching (t, j), excluding the emission at (t, j)
      S prefix;
      if (t == 0) {
        prefix = j == 0 ? S(0) : neg_inf;
      } else {
        prefix = detail::log_add(lat.log_alpha(t - 1, j), j > 0 ? lat.log_alpha(t - 1, j - 1) : neg_inf);
      }
      const S occupancy = prefix + lat.log_beta(t, j) - lat.log_likelihood;
      if (occupancy != neg_inf) grad(t, j) = -std::exp(occupancy);
    }
  }
  return grad;
}

/// Max-probability monotonic path. Ties between staying and advancing are
/// resolved by advancing at the earliest frame.
template <typename Derived>
std::vector<Index> viterbi_path(const Eigen::MatrixBase<Derived>& probs) {
  using S = typename Derived::Scalar;
  const Index frames = probs.rows();
  const Index positions = probs.cols();
  if (frames < 1 || positions < 1) throw std::invalid_argument("viterbi_path: empty alignment");
  detail::require_feasible(frames, positions, "viterbi_path");
  constexpr S neg_inf = -std::numeric_limits<S>::infinity();
  const Matrix<S> log_a = probs.array().log().matrix();
  Matrix<S> best = Matrix<S>::Constant(frames, positions, neg_inf);
  best(0, 0) = log_a(0, 0);
  for (Index t = 1; t < frames; ++t) {
    for (Index j = 0; j <= std::min(t, positions - 1); ++j) {
      const S stay = best(t - 1, j);
      const S advance = j > 0 ? best(t - 1, j - 1) : neg_inf;
      best(t, j) = std::max(stay, advance) + log_a(t, j);
    }
  }
  std::vector<Index> path(static_cast<std::size_t>(frames));
  Index j = positions - 1;
  for (Index t = frames - 1; t > 0; --t) {
    path[static_cast<std::size_t>(t)] = j;
    // staying here on a tie moves the advance to an earlier frame
    if (j > 0 && (j > t - 1 || best(t - 1, j - 1) > best(t - 1, j))) --j;
  }
  path[0] = j;
  return path;
}

/// 1 - mean_i sum_j a(i, j) |j / (M - 1) - i / (T - 1)|; 1 is perfectly diagonal.
template <typename Derived>
typename Derived::Scalar diagonality(const Eigen::MatrixBase<Derived>& probs) {
  using S = typename Derived::Scalar;
  const Index frames = probs.rows();
  const Index positions = probs.cols();
  if (frames < 2 || positions < 2) {
    throw std::invalid_argument("diagonality: need at least 2x2, got " + std::to_string(frames) + "x" +
                                std::to_string(positions));
  }
  S total = 0;
  for (Index i = 0; i < frames; ++i) {
    const S ideal = static_cast<S>(i) / static_cast<S>(frames - 1);
    for (Index j = 0; j < positions; ++j) {
      total += probs(i, j) * std::abs(static_cast<S>(j) / static_cast<S>(positions - 1) - ideal);
    }
  }
  return S(1) - total / static_cast<S>(frames);
}

/// Hard-alignment health of one soft alignment.
struct DiagnosticsRecord {
  double diagonality = 0.0;
  std::vector<Index> viterbi_path;
  /// Frames the Viterbi path dwells on a position beyond its reference duration.
  int repeats = 0;
  /// Positions that are never the row-wise argmax of any frame.
  int misses = 0;
};

/// reference_durations, when non-empty, gives the expected frame count for
/// every text position (size M').
template <typename Derived>
DiagnosticsRecord diagnose(const Eigen::MatrixBase<Derived>& probs,
                           const std::vector<int>& reference_durations = {}) {
  DiagnosticsRecord rec;
  rec.diagonality = static_cast<double>(diagonality(probs));
  rec.viterbi_path = viterbi_path(probs);
  const Index positions = probs.cols();
  if (!reference_durations.empty()) {
    if (static_cast<Index>(reference_durations.size()) != positions) {
      throw std::invalid_argument("diagnose: reference durations do not match alignment width");
    }
    std::vector<int> dwell(static_cast<std::size_t>(positions), 0);
    for (Index j : rec.viterbi_path) ++dwell[static_cast<std::size_t>(j)];
    for (std::size_t j = 0; j < dwell.size(); ++j) {
      rec.repeats += std::max(0, dwell[j] - reference_durations[j]);
    }
  }
  std::vector<bool> hit(static_cast<std::size_t>(positions), false);
  for (Index i = 0; i < probs.rows(); ++i) {
    Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    hit[static_cast<std::size_t>(arg)] = true;
  }
  rec.misses = static_cast<int>(std::count(hit.begin(), hit.end(), false));
  return rec;
}

}  // namespace t5tts::align
