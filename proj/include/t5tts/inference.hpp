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

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "t5tts/alignment_loss.hpp"
#include "t5tts/codec_data.hpp"
#include "t5tts/model.hpp"

namespace t5tts {

struct SamplerConfig {
  int k = 10;
  double temperature = 0.85;
  /// Answer frames generated before giving up (EOS frame not counted).
  int max_frames = 100;

  void validate() const;
  bool operator==(const SamplerConfig&) const = default;
};

/// Keeps the k largest logits (ties broken toward the lower id), divides by
/// the temperature and draws from the resulting softmax. k above the row
/// size is clamped with a warning on stderr.
std::int32_t sample_topk(std::span<const float> logits, const SamplerConfig& sampler, std::mt19937_64& rng);

struct InferenceResult {
  CodeMatrix codes;  // EOS frame excluded
  bool truncated = false;
};

/// Autoregressive generation from a BOS frame until codebook 0 emits EOS.
/// In RVQ mode the delayed stream is generated and un-delayed before return.
InferenceResult infer(const ModelParams<float>& params, const ModelConfig& cfg, const TextSequence& question,
                      const CodeMatrix& context, const SamplerConfig& sampler, std::mt19937_64& rng);

/// Levenshtein alignment between a hypothesis and a reference sequence.
struct EditStats {
  std::int64_t distance = 0;
  std::int64_t substitutions = 0;
  std::int64_t insertions = 0;
  std::int64_t deletions = 0;
  /// Maximal runs of consecutive inserted hypothesis symbols.
  std::int64_t insertion_runs = 0;
};

/// On equal cost the backtrace prefers match/substitution, then deletion,
/// then insertion.
EditStats edit_stats(std::span<const int> hypothesis, std::span<const int> reference);

struct EvalMetrics {
  std::int64_t samples = 0;
  std::int64_t reference_symbols = 0;
  std::int64_t edits = 0;
  double symbol_error_rate = 0.0;
  std::int64_t repeats = 0;  // insertion runs
  std::int64_t misses = 0;   // deletions
  std::int64_t truncated = 0;
  /// Teacher-forced, prior-free diagonality averaged over samples and heads.
  double diagonality = 0.0;

  std::int64_t stress_samples = 0;
  double stress_symbol_error_rate = 0.0;
  std::int64_t stress_repeats = 0;
  std::int64_t stress_misses = 0;
};

/// Mean diagonality over samples and the head set of a teacher-forced,
/// prior-free forward pass.
double teacher_forced_diagonality(const ModelParams<float>& params, const ModelConfig& cfg,
                                  std::span<const Sample> samples, const align::HeadSet& heads,
                                  int batch_size = 16);

/// Sample k is generated with its own substream of `seed`, so the result does
/// not depend on evaluation order.
EvalMetrics evaluate(const ModelParams<float>& params, const ModelConfig& cfg, std::span<const Sample> samples,
                     const SyntheticSpec& spec, const Vocabulary& vocab, const SamplerConfig& sampler,
                     const align::HeadSet& heads, std::uint64_t seed);

}  // namespace t5tts
