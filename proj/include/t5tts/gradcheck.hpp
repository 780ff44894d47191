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

#pragma once

#include <functional>
#include <stdexcept>

#include "t5tts/autodiff.hpp"

namespace t5tts::ad {

/// The loss builder changed its output between two evaluations at the same point.
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename S>
using LossBuilder = std::function<BasicVar<S>(const BasicVar<S>&)>;

/// Compares the reverse-mode gradient of loss_builder at leaf_values against
/// central differences. Returns the max over entries of
/// |analytic - central| / max(|analytic|, |central|, floor). Entries whose true
/// gradient is zero (or below the difference quotient's round-off) need a
/// floor above that round-off to be judged on absolute error.
template <typename S>
double finite_difference_check(const LossBuilder<S>& loss_builder,
                               const BasicTensor<S>& leaf_values, S eps, double floor = 1e-8);

}  // namespace t5tts::ad
