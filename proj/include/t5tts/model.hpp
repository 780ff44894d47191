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
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t5tts/alignment.hpp"
#include "t5tts/alignment_loss.hpp"
#include "t5tts/autodiff.hpp"
#include "t5tts/codec_data.hpp"

namespace t5tts {

enum class ContextPlacement { kEncoder, kDecoder };

std::string to_string(ContextPlacement p);
ContextPlacement parse_context_placement(const std::string& s);

struct ModelConfig {
  int layers = 3;
  int heads = 4;
  int hidden = 64;
  int ff_dim = 256;
  int codebooks = 2;
  int bits = 6;
  int text_vocab_size = 68;
  int max_positions = 256;
  ContextPlacement placement = ContextPlacement::kEncoder;
  bool rvq_mode = false;
  float dropout = 0.1f;
  /// Whether the alignment slice (prior and alignment loss) starts at the task
  /// prompt. Off: it covers the text tokens only.
  bool align_prompt = false;

  int code_vocab() const { return code_vocab_size(bits); }
  void validate() const;

  /// Number of scalars in ModelParams:
  ///   text_vocab*h + 2*max_positions*h + N*V*h            (embeddings)
  /// + layers * (4h^2 + 4h  +  2h*ff + ff + h  +  4h)       (encoder layers)
  /// + layers * (8h^2 + 8h  +  2h*ff + ff + h  +  6h)       (decoder layers)
  /// + 4h                                                   (final norms)
  /// + N * (h*V + V)                                        (output heads)
  /// with V = 2^bits + 3.
  std::int64_t parameter_count() const;

  /// Flat "key = value" lines.
  std::string serialize() const;
  static ModelConfig deserialize(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

template <typename S>
struct Linear {
  ad::BasicVar<S> weight;  // [in, out]
  ad::BasicVar<S> bias;    // [out]
};

template <typename S>
struct LayerNorm {
  ad::BasicVar<S> gain;
  ad::BasicVar<S> bias;
};

template <typename S>
struct Attention {
  Linear<S> query, key, value, out;
};

template <typename S>
struct EncoderLayer {
  LayerNorm<S> norm_attn;
  Attention<S> self_attn;
  LayerNorm<S> norm_ff;
  Linear<S> ff_in, ff_out;
};

template <typename S>
struct DecoderLayer {
  LayerNorm<S> norm_self;
  Attention<S> self_attn;
  LayerNorm<S> norm_cross;
  Attention<S> cross_attn;
  LayerNorm<S> norm_ff;
  Linear<S> ff_in, ff_out;
};

/// All learnable tensors. Code embedding tables are shared between context
/// and answer frames; head i predicts codebook i.
template <typename S>
struct ModelParams {
  ad::BasicVar<S> text_embed;               // [text_vocab, h]
  ad::BasicVar<S> encoder_positions;        // [max_positions, h]
  ad::BasicVar<S> decoder_positions;        // [max_positions, h]
  std::vector<ad::BasicVar<S>> code_embed;  // N x [2^m + 3, h]
  std::vector<EncoderLayer<S>> encoder;
  LayerNorm<S> encoder_norm;
  std::vector<DecoderLayer<S>> decoder;
  LayerNorm<S> decoder_norm;
  std::vector<Linear<S>> heads;             // N x ([h, 2^m + 3], [2^m + 3])

  /// Scaled-normal weights, unit norm gains, zero biases.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  /// Stable, documented order used by checkpoints and the optimizer.
  std::vector<std::pair<std::string, ad::BasicVar<S>*>> named();
  std::vector<std::pair<std::string, const ad::BasicVar<S>*>> named() const;
  std::int64_t count() const;

  /// Deep copy with a different scalar type (leaves require grad).
  template <typename T>
  ModelParams<T> cast() const;
};

/// Padded inputs for a batch of samples, built once per step.
struct Batch {
  std::int64_t size = 0;
  std::int64_t encoder_len = 0;  // padded
  std::int64_t decoder_len = 0;  // padded
  /// [B, encoder_len] text ids (kPad at code or padding positions).
  std::vector<std::int32_t> encoder_text_ids;
  /// [B, encoder_len, N] code ids for encoder-side context frames.
  std::vector<std::int32_t> encoder_code_ids;
  std::vector<float> encoder_text_mask;  // [B, encoder_len]
  std::vector<float> encoder_code_mask;  // [B, encoder_len]
  /// [B, decoder_len, N] teacher-forcing inputs (context frames first when
  /// the context is placed on the decoder).
  std::vector<std::int32_t> decoder_code_ids;
  /// [B, decoder_len, N] targets; -1 where no loss is taken.
  std::vector<std::int32_t> targets;
  std::vector<std::int64_t> encoder_lengths;
  std::vector<std::int64_t> decoder_lengths;
  std::vector<std::int64_t> context_lengths;
  std::vector<align::AlignmentSlice> slices;
};

/// (q_s, q_e, a_s, a_e) for full encoder length M and decoder length T.
align::AlignmentSlice slice_bounds(ContextPlacement placement, std::int64_t context_len, std::int64_t encoder_len,
                                   std::int64_t decoder_len);

/// Answer stream as modelled: delay-encoded in RVQ mode, unchanged otherwise.
CodeMatrix model_answer_stream(const CodeMatrix& answer, const ModelConfig& cfg);

/// Pads and masks samples. Answers must end with the EOS frame; decoder
/// inputs are BOS followed by all but the last answer frame.
Batch make_batch(std::span<const Sample* const> samples, const ModelConfig& cfg);
/// Inference variant: decoder inputs are exactly `answer_in` (BOS-prefixed),
/// targets are all ignored.
Batch make_inference_batch(const TextSequence& question, const CodeMatrix& context, const CodeMatrix& answer_in,
                           const ModelConfig& cfg);

/// e_t = sum_i EmbedA_i(c[t, i]); ids is [.., N] flattened, index_shape omits N.
template <typename S>
ad::BasicVar<S> embed_codes(const ModelParams<S>& params, std::span<const std::int32_t> ids, ad::Shape index_shape,
                            int codebooks);

template <typename S>
struct ForwardOptions {
  /// One T'xM' prior per batch element, or nullptr for no prior.
  const std::vector<align::Matrix<S>>* priors = nullptr;
  S prior_eps = S(1e-8);
  /// Enables dropout; requires rng.
  bool train = false;
  std::mt19937_64* rng = nullptr;
};

template <typename S>
struct ForwardOutput {
  ad::BasicVar<S> logits;  // [B, decoder_len, N, 2^m + 3]
  align::AttentionCapture<S> capture;
};

template <typename S>
ad::BasicVar<S> encode(const ModelParams<S>& params, const ModelConfig& cfg, const Batch& batch,
                       const ForwardOptions<S>& opts = {});
template <typename S>
ForwardOutput<S> decode(const ModelParams<S>& params, const ModelConfig& cfg, const Batch& batch,
                        const ad::BasicVar<S>& encoded, const ForwardOptions<S>& opts = {});
template <typename S>
ForwardOutput<S> forward(const ModelParams<S>& params, const ModelConfig& cfg, const Batch& batch,
                         const ForwardOptions<S>& opts = {});

/// Mean cross entropy over cells whose target is not -1.
template <typename S>
ad::BasicVar<S> ce_loss(const ad::BasicVar<S>& logits, std::span<const std::int32_t> targets);

}  // namespace t5tts
