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

#include "t5tts/alignment_loss.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace t5tts::align {

template <typename S>
const ad::BasicVar<S>& AttentionCapture<S>::at(int layer, int head) const {
  if (layer < 0 || layer >= layers || head < 0 || head >= heads) {
    throw std::out_of_range("AttentionCapture: no head (" + std::to_string(layer) + ", " +
                            std::to_string(head) + ") in " + std::to_string(layers) + "x" +
                            std::to_string(heads) + " capture");
  }
  return scores[static_cast<std::size_t>(layer * heads + head)];
}

HeadSet all_heads(int layers, int heads) {
  HeadSet set;
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < heads; ++h) set.emplace_back(l, h);
  }
  return set;
}

HeadSet two_heads_per_layer(int layers, int heads) {
  HeadSet set;
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < std::min(heads, 2); ++h) set.emplace_back(l, h);
  }
  return set;
}

HeadSet parse_head_set(const std::string& spec, int layers, int heads) {
  if (spec == "all") return all_heads(layers, heads);
  if (spec == "two_per_layer") return two_heads_per_layer(layers, heads);
  HeadSet set;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("head set: expected l:h, got '" + item + "'");
    int l = 0;
    int h = 0;
    try {
      l = std::stoi(item.substr(0, colon));
      h = std::stoi(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument("head set: expected l:h, got '" + item + "'");
    }
    if (l < 0 || l >= layers || h < 0 || h >= heads) {
      throw std::out_of_range("head set: (" + item + ") outside " + std::to_string(layers) + " layers x " +
                              std::to_string(heads) + " heads");
    }
    set.emplace_back(l, h);
  }
  if (set.empty()) throw std::invalid_argument("head set: empty");
  return set;
}

std::string head_set_str(const HeadSet& set, int layers, int heads) {
  if (set == all_heads(layers, heads)) return "all";
  if (set == two_heads_per_layer(layers, heads)) return "two_per_layer";
  std::string out;
  for (const auto& [l, h] : set) {
    if (!out.empty()) out += ',';
    out += std::to_string(l) + ":" + std::to_string(h);
  }
  return out;
}

template <typename S>
ad::BasicVar<S> soft_alignment(const ad::BasicVar<S>& scores, std::int64_t batch_index,
                               const AlignmentSlice& slice) {
  const auto& shape = scores.shape();
  ad::BasicVar<S> m = scores;
  if (shape.size() == 3) {
    m = ad::reshape(ad::slice(scores, 0, batch_index, 1), {shape[1], shape[2]});
  } else if (shape.size() != 2 || batch_index != 0) {
    throw ad::DimensionError("soft_alignment: expected [B,T,M] or [T,M], got " + ad::shape_str(shape));
  }
  slice.validate_within(m.shape()[0], m.shape()[1]);
  m = ad::slice(m, 0, slice.a_s, slice.answer_len());
  m = ad::slice(m, 1, slice.q_s, slice.question_len());
  return ad::softmax_lastdim(m);
}

template <typename S>
ad::BasicVar<S> forward_sum_loss(const ad::BasicVar<S>& probs) {
  if (probs.shape().size() != 2) {
    throw ad::DimensionError("forward_sum_loss: expected [T', M'], got " + ad::shape_str(probs.shape()));
  }
  const S loss = align::forward_sum_loss(probs.value().matrix());
  return ad::make_op<S>("forward_sum", ad::BasicTensor<S>::scalar(loss), {probs}, [](ad::Node<S>& self) {
    auto& in = *self.inputs[0];
    in.grad_buffer().matrix() += self.grad[0] * forward_sum_loss_grad(std::as_const(in.value).matrix());
  });
}

template <typename S>
ad::BasicVar<S> total_align_loss(const AttentionCapture<S>& capture, const HeadSet& head_set,
                                 std::span<const AlignmentSlice> slices) {
  if (head_set.empty()) throw std::invalid_argument("total_align_loss: empty head set");
  std::vector<ad::BasicVar<S>> terms;
  for (const auto& [l, h] : head_set) {
    const auto& scores = capture.at(l, h);
    const auto batch = scores.shape().size() == 3 ? scores.shape()[0] : 1;
    if (static_cast<std::int64_t>(slices.size()) != batch) {
      throw std::invalid_argument("total_align_loss: " + std::to_string(slices.size()) +
                                  " slices for batch of " + std::to_string(batch));
    }
    for (std::int64_t b = 0; b < batch; ++b) {
      terms.push_back(forward_sum_loss(soft_alignment(scores, b, slices[static_cast<std::size_t>(b)])));
    }
  }
  auto total = ad::reduce_sum(ad::concat(terms, 0));
  return ad::scale(total, S(1) / static_cast<S>(slices.size()));
}

template struct AttentionCapture<float>;
template struct AttentionCapture<double>;
template ad::BasicVar<float> soft_alignment(const ad::BasicVar<float>&, std::int64_t, const AlignmentSlice&);
template ad::BasicVar<double> soft_alignment(const ad::BasicVar<double>&, std::int64_t, const AlignmentSlice&);
template ad::BasicVar<float> forward_sum_loss(const ad::BasicVar<float>&);
template ad::BasicVar<double> forward_sum_loss(const ad::BasicVar<double>&);
template ad::BasicVar<float> total_align_loss(const AttentionCapture<float>&, const HeadSet&,
                                              std::span<const AlignmentSlice>);
template ad::BasicVar<double> total_align_loss(const AttentionCapture<double>&, const HeadSet&,
                                               std::span<const AlignmentSlice>);

}  // namespace t5tts::align
