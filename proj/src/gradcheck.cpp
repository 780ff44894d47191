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

#include "t5tts/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace t5tts::ad {

template <typename S>
double finite_difference_check(const LossBuilder<S>& loss_builder,
                               const BasicTensor<S>& leaf_values, S eps, double floor) {
  if (!(eps > S(0))) throw std::invalid_argument("finite_difference_check: eps must be positive");
  auto x = leaf(leaf_values, true);
  auto loss = loss_builder(x);
  backward(loss);
  const BasicTensor<S> analytic =
      x.grad().empty() ? BasicTensor<S>(leaf_values.shape(), S(0)) : x.grad();

  auto eval = [&](const BasicTensor<S>& v) {
    NoGradGuard guard;
    return static_cast<double>(loss_builder(constant(v)).item());
  };
  const double base = static_cast<double>(loss.item());
  if (eval(leaf_values) != base) {
    throw OracleError("finite_difference_check: loss builder is not deterministic");
  }

  double worst = 0.0;
  BasicTensor<S> probe = leaf_values;
  for (std::int64_t i = 0; i < probe.numel(); ++i) {
    const S orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double central = (up - down) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(central), floor});
    worst = std::max(worst, std::abs(a - central) / denom);
  }
  return worst;
}

template double finite_difference_check(const LossBuilder<float>&, const BasicTensor<float>&, float, double);
template double finite_difference_check(const LossBuilder<double>&, const BasicTensor<double>&,
                                        double, double);

}  // namespace t5tts::ad
