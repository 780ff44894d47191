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

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t5tts/alignment.hpp"
#include "t5tts/autodiff.hpp"

namespace t5tts::align {

/// Pre-softmax decoder cross-attention scores, one [B, T, M] tensor per
/// (layer, head), recorded after any prior has been added.
template <typename S>
struct AttentionCapture {
  int layers = 0;
  int heads = 0;
  std::vector<ad::BasicVar<S>> scores;

  const ad::BasicVar<S>& at(int layer, int head) const;
};

using HeadIndex = std::pair<int, int>;
using HeadSet = std::vector<HeadIndex>;

HeadSet all_heads(int layers, int heads);
/// Heads 0 and 1 of every layer.
HeadSet two_heads_per_layer(int layers, int heads);
/// Parses "all", "two_per_layer" or an explicit list "l:h,l:h,...".
HeadSet parse_head_set(const std::string& spec, int layers, int heads);
std::string head_set_str(const HeadSet& set, int layers, int heads);

/// Row softmax of scores[batch_index, a_s:a_e, q_s:q_e]; scores is [B, T, M]
/// or [T, M] (batch_index must be 0).
template <typename S>
ad::BasicVar<S> soft_alignment(const ad::BasicVar<S>& scores, std::int64_t batch_index,
                               const AlignmentSlice& slice);

/// Differentiable forward-sum loss of a [T', M'] soft alignment.
template <typename S>
ad::BasicVar<S> forward_sum_loss(const ad::BasicVar<S>& probs);

/// Sum over the head set of forward-sum losses, averaged over the batch.
/// slices holds one slice per batch element.
template <typename S>
ad::BasicVar<S> total_align_loss(const AttentionCapture<S>& capture, const HeadSet& head_set,
                                 std::span<const AlignmentSlice> slices);

}  // namespace t5tts::align
