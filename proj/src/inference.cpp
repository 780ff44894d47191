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

#include "t5tts/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "t5tts/random.hpp"

namespace t5tts {

void SamplerConfig::validate() const {
  if (k < 1) throw std::invalid_argument("sampler: k must be >= 1, got " + std::to_string(k));
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("sampler: temperature must be positive and finite");
  }
  if (max_frames < 1) throw std::invalid_argument("sampler: max_frames must be >= 1");
}

std::int32_t sample_topk(std::span<const float> logits, const SamplerConfig& sampler, std::mt19937_64& rng) {
  sampler.validate();
  if (logits.empty()) throw std::invalid_argument("sample_topk: empty logit row");
  for (float v : logits) {
    if (!std::isfinite(v)) throw std::invalid_argument("sample_topk: non-finite logit");
  }
  std::size_t k = static_cast<std::size_t>(sampler.k);
  if (k > logits.size()) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      std::cerr << "warning: top-k " << k << " exceeds vocabulary " << logits.size() << "; clamping\n";
    }
    k = logits.size();
  }
  std::vector<std::int32_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::int32_t a, std::int32_t b) {
                      return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
                    });
  if (k == 1) return order[0];

  std::vector<double> weights(k);
  const double top = logits[static_cast<std::size_t>(order[0])];
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = std::exp((logits[static_cast<std::size_t>(order[i])] - top) / sampler.temperature);
    total += weights[i];
  }
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += weights[i];
    if (u < acc) return order[i];
  }
  return order[k - 1];
}

// ---------------------------------------------------------------------------

InferenceResult infer(const ModelParams<float>& params, const ModelConfig& cfg, const TextSequence& question,
                      const CodeMatrix& context, const SamplerConfig& sampler, std::mt19937_64& rng) {
  sampler.validate();
  ad::NoGradGuard no_grad;
  const int n = cfg.codebooks;
  const int vocab = cfg.code_vocab();
  const auto pad = pad_code(cfg.bits);
  const auto eos = eos_code(cfg.bits);
  const bool rvq = cfg.rvq_mode;
  const std::int64_t ctx_on_decoder = cfg.placement == ContextPlacement::kDecoder ? context.frames() : 0;
  // decoder input rows (BOS + generated) must fit the position table
  const std::int64_t row_cap = cfg.max_positions - ctx_on_decoder - 1;

  CodeArray stream(0, n);
  CodeMatrix answer_in(CodeArray::Constant(1, n, bos_code(cfg.bits)), cfg.bits);
  const Batch first = make_inference_batch(question, context, answer_in, cfg);
  const auto encoded = encode(params, cfg, first);

  InferenceResult result;
  std::int64_t eos_row = -1;
  for (std::int64_t t = 0;; ++t) {
    if (eos_row >= 0 && (!rvq || t > eos_row + n - 1)) break;
    if (eos_row < 0 && (t >= sampler.max_frames || t >= row_cap)) {
      result.truncated = true;
      break;
    }
    Eigen::Matrix<std::int32_t, 1, Eigen::Dynamic> row(n);
    bool needs_model = false;
    for (int i = 0; i < n; ++i) {
      const std::int64_t frame = rvq ? t - i : t;
      if (frame < 0 || (eos_row >= 0 && frame > eos_row)) {
        row(i) = pad;
      } else if (eos_row >= 0 && frame == eos_row) {
        row(i) = eos;
      } else {
        row(i) = -1;
        needs_model = true;
      }
    }
    if (needs_model) {
      const Batch batch = make_inference_batch(question, context, answer_in, cfg);
      const auto out = decode(params, cfg, batch, encoded, {});
      const float* last = out.logits.value().data() + (batch.decoder_len - 1) * n * vocab;
      for (int i = 0; i < n; ++i) {
        if (row(i) != -1) continue;
        row(i) = sample_topk(std::span<const float>(last + i * vocab, static_cast<std::size_t>(vocab)), sampler, rng);
      }
    }
    if (row(0) == eos && eos_row < 0) eos_row = t;
    if (!rvq && eos_row >= 0) break;
    stream.conservativeResize(stream.rows() + 1, Eigen::NoChange);
    stream.row(stream.rows() - 1) = row;
    answer_in.codes.conservativeResize(answer_in.codes.rows() + 1, Eigen::NoChange);
    answer_in.codes.row(answer_in.codes.rows() - 1) = row;
  }

  if (!rvq) {
    result.codes = CodeMatrix(stream, cfg.bits);
  } else if (!result.truncated) {
    CodeMatrix frames = delay_decode(CodeMatrix(stream, cfg.bits));
    result.codes = CodeMatrix(frames.codes.topRows(frames.frames() - 1), cfg.bits);
  } else {
    // keep only frames whose every codebook has been generated
    const Eigen::Index complete = std::max<Eigen::Index>(0, stream.rows() - (n - 1));
    CodeArray frames(complete, n);
    for (Eigen::Index f = 0; f < complete; ++f) {
      for (int i = 0; i < n; ++i) frames(f, i) = stream(f + i, i);
    }
    result.codes = CodeMatrix(frames, cfg.bits);
  }
  return result;
}

// ---------------------------------------------------------------------------

EditStats edit_stats(std::span<const int> hyp, std::span<const int> ref) {
  const std::size_t h = hyp.size();
  const std::size_t r = ref.size();
  std::vector<std::int64_t> d((h + 1) * (r + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::int64_t& { return d[i * (r + 1) + j]; };
  for (std::size_t i = 0; i <= h; ++i) at(i, 0) = static_cast<std::int64_t>(i);
  for (std::size_t j = 0; j <= r; ++j) at(0, j) = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= h; ++i) {
    for (std::size_t j = 1; j <= r; ++j) {
      const std::int64_t diag = at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditStats s;
  s.distance = at(h, r);
  std::size_t i = h;
  std::size_t j = r;
  bool in_insertion = false;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1)) {
      if (hyp[i - 1] != ref[j - 1]) ++s.substitutions;
      --i;
      --j;
      in_insertion = false;
    } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++s.deletions;
      --j;
      in_insertion = false;
    } else {
      ++s.insertions;
      if (!in_insertion) ++s.insertion_runs;
      in_insertion = true;
      --i;
    }
  }
  return s;
}

double teacher_forced_diagonality(const ModelParams<float>& params, const ModelConfig& cfg,
                                  std::span<const Sample> samples, const align::HeadSet& heads, int batch_size) {
  if (samples.empty() || heads.empty()) return 0.0;
  ad::NoGradGuard no_grad;
  double total = 0.0;
  std::int64_t count = 0;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Sample*> ptrs;
    for (std::size_t k = start; k < end; ++k) ptrs.push_back(&samples[k]);
    const Batch batch = make_batch(ptrs, cfg);
    const auto out = forward(params, cfg, batch, {});
    for (const auto& [l, h] : heads) {
      const auto& scores = out.capture.at(l, h).value();
      for (std::int64_t b = 0; b < batch.size; ++b) {
        const auto& slice = batch.slices[static_cast<std::size_t>(b)];
        if (slice.answer_len() < 2 || slice.question_len() < 2) continue;
        Eigen::Map<const align::Matrix<float>> full(scores.data() + b * batch.decoder_len * batch.encoder_len,
                                                    batch.decoder_len, batch.encoder_len);
        const align::Matrix<double> probs = align::soft_alignment(full, slice).cast<double>();
        total += align::diagonality(probs);
        ++count;
      }
    }
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

EvalMetrics evaluate(const ModelParams<float>& params, const ModelConfig& cfg, std::span<const Sample> samples,
                     const SyntheticSpec& spec, const Vocabulary& vocab, const SamplerConfig& sampler,
                     const align::HeadSet& heads, std::uint64_t seed) {
  EvalMetrics m;
  std::int64_t stress_refs = 0;
  std::int64_t stress_edits = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Sample& s = samples[k];
    std::mt19937_64 rng(substream(seed, Stream::kSampling, k));
    const InferenceResult res = infer(params, cfg, s.question, s.context, sampler, rng);
    const std::vector<int> hyp = spec.decode(res.codes);
    const std::vector<int> ref = vocab.symbols(s.question);
    const EditStats e = edit_stats(hyp, ref);
    ++m.samples;
    m.reference_symbols += static_cast<std::int64_t>(ref.size());
    m.edits += e.distance;
    m.repeats += e.insertion_runs;
    m.misses += e.deletions;
    m.truncated += res.truncated ? 1 : 0;
    if (is_stress_sentence(ref)) {
      ++m.stress_samples;
      stress_refs += static_cast<std::int64_t>(ref.size());
      stress_edits += e.distance;
      m.stress_repeats += e.insertion_runs;
      m.stress_misses += e.deletions;
    }
  }
  if (m.reference_symbols > 0) m.symbol_error_rate = static_cast<double>(m.edits) / m.reference_symbols;
  if (stress_refs > 0) m.stress_symbol_error_rate = static_cast<double>(stress_edits) / stress_refs;
  m.diagonality = teacher_forced_diagonality(params, cfg, samples, heads);
  return m;
}

}  // namespace t5tts
