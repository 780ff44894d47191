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

#include "t5tts/model.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "t5tts/random.hpp"

namespace t5tts {

namespace {

constexpr float kMaskValue = -1e9f;

template <typename S>
using Var = ad::BasicVar<S>;

template <typename S>
Var<S> linear(const Var<S>& x, const Linear<S>& l) {
  return ad::add(ad::matmul(x, l.weight), l.bias);
}

template <typename S>
Var<S> norm(const Var<S>& x, const LayerNorm<S>& n) {
  return ad::layer_norm_lastdim(x, n.gain, n.bias);
}

template <typename S>
Var<S> maybe_dropout(const Var<S>& x, const ModelConfig& cfg, const ForwardOptions<S>& opts) {
  if (!opts.train || cfg.dropout <= 0.0f) return x;
  if (opts.rng == nullptr) throw std::invalid_argument("forward: training mode needs an rng");
  return ad::dropout(x, cfg.dropout, *opts.rng);
}

/// Multi-head attention. bias is [B, Tq, Tk] and is added to the scaled
/// scores of every head before the softmax.
template <typename S>
Var<S> attention(const Attention<S>& p, const Var<S>& xq, const Var<S>& xkv, const Var<S>& bias,
                 const ModelConfig& cfg, const ForwardOptions<S>& opts,
                 std::type_identity_t<std::vector<Var<S>>>* capture) {
  const auto q = linear(xq, p.query);
  const auto kt = ad::transpose_last_two(linear(xkv, p.key));
  const auto v = linear(xkv, p.value);
  const int dk = cfg.hidden / cfg.heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dk));
  std::vector<Var<S>> outs;
  outs.reserve(static_cast<std::size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    const auto qh = ad::slice(q, 2, h * dk, dk);
    const auto kh = ad::slice(kt, 1, h * dk, dk);
    const auto vh = ad::slice(v, 2, h * dk, dk);
    auto scores = ad::add(ad::scale(ad::matmul(qh, kh), inv_sqrt), bias);
    if (capture != nullptr) capture->push_back(scores);
    auto probs = maybe_dropout(ad::softmax_lastdim(scores), cfg, opts);
    outs.push_back(ad::matmul(probs, vh));
  }
  return linear(ad::concat(outs, 2), p.out);
}

template <typename S>
Var<S> feed_forward(const Linear<S>& in, const Linear<S>& out, const Var<S>& x) {
  return linear(ad::gelu(linear(x, in)), out);
}

template <typename S>
Var<S> positions(const Var<S>& table, std::int64_t len, const char* which, const ModelConfig& cfg) {
  if (len > cfg.max_positions) {
    throw std::length_error(std::string(which) + " sequence of " + std::to_string(len) +
                            " exceeds max_positions=" + std::to_string(cfg.max_positions));
  }
  std::vector<std::int32_t> ids(static_cast<std::size_t>(len));
  for (std::int64_t i = 0; i < len; ++i) ids[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
  return ad::embedding_gather(table, ids, {len});
}

template <typename S>
ad::BasicTensor<S> expand_mask(const std::vector<float>& mask, std::int64_t batch, std::int64_t len, int hidden) {
  ad::BasicTensor<S> out({batch, len, hidden});
  for (std::int64_t r = 0; r < batch * len; ++r) {
    const S m = static_cast<S>(mask[static_cast<std::size_t>(r)]);
    for (int c = 0; c < hidden; ++c) out[r * hidden + c] = m;
  }
  return out;
}

void check_init(const ModelConfig& cfg) { cfg.validate(); }

}  // namespace

std::string to_string(ContextPlacement p) { return p == ContextPlacement::kEncoder ? "encoder" : "decoder"; }

ContextPlacement parse_context_placement(const std::string& s) {
  if (s == "encoder") return ContextPlacement::kEncoder;
  if (s == "decoder") return ContextPlacement::kDecoder;
  throw std::invalid_argument("unknown context placement '" + s + "' (expected encoder or decoder)");
}

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (layers < 1 || heads < 1 || hidden < 1 || ff_dim < 1 || codebooks < 1 || text_vocab_size < 1 ||
      max_positions < 1) {
    throw std::invalid_argument("ModelConfig: sizes must be positive");
  }
  if (hidden % heads != 0) {
    throw std::invalid_argument("ModelConfig: hidden=" + std::to_string(hidden) + " not divisible by heads=" +
                                std::to_string(heads));
  }
  if (bits < 1 || bits > 16) throw std::invalid_argument("ModelConfig: bits outside [1, 16]");
  if (dropout < 0.0f || dropout >= 1.0f) throw std::invalid_argument("ModelConfig: dropout outside [0, 1)");
}

std::int64_t ModelConfig::parameter_count() const {
  const std::int64_t h = hidden;
  const std::int64_t ff = ff_dim;
  const std::int64_t v = code_vocab();
  const std::int64_t n = codebooks;
  const std::int64_t embeddings = text_vocab_size * h + 2 * max_positions * h + n * v * h;
  const std::int64_t ffn = 2 * h * ff + ff + h;
  const std::int64_t enc = layers * (4 * h * h + 4 * h + ffn + 4 * h);
  const std::int64_t dec = layers * (8 * h * h + 8 * h + ffn + 6 * h);
  return embeddings + enc + dec + 4 * h + n * (h * v + v);
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "layers = " << layers << "\nheads = " << heads << "\nhidden = " << hidden << "\nff_dim = " << ff_dim
     << "\ncodebooks = " << codebooks << "\nbits = " << bits << "\ntext_vocab_size = " << text_vocab_size
     << "\nmax_positions = " << max_positions << "\ncontext_placement = " << to_string(placement)
     << "\nrvq_mode = " << (rvq_mode ? "true" : "false") << "\ndropout = " << dropout
     << "\nalign_prompt = " << (align_prompt ? "true" : "false") << "\n";
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(std::string("model config: missing key '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.layers = std::stoi(get("layers"));
  c.heads = std::stoi(get("heads"));
  c.hidden = std::stoi(get("hidden"));
  c.ff_dim = std::stoi(get("ff_dim"));
  c.codebooks = std::stoi(get("codebooks"));
  c.bits = std::stoi(get("bits"));
  c.text_vocab_size = std::stoi(get("text_vocab_size"));
  c.max_positions = std::stoi(get("max_positions"));
  c.placement = parse_context_placement(get("context_placement"));
  c.rvq_mode = get("rvq_mode") == "true";
  c.dropout = std::stof(get("dropout"));
  c.align_prompt = get("align_prompt") == "true";
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

template <typename S>
ModelParams<S> ModelParams<S>::init(const ModelConfig& cfg, std::uint64_t seed) {
  check_init(cfg);
  const std::int64_t h = cfg.hidden;
  const std::int64_t v = cfg.code_vocab();
  ModelParams p;
  auto zeros = [](ad::Shape s) { return ad::leaf(ad::BasicTensor<S>(std::move(s), S(0))); };
  auto ones = [](ad::Shape s) { return ad::leaf(ad::BasicTensor<S>(std::move(s), S(1))); };
  auto lin = [&](std::int64_t in, std::int64_t out) { return Linear<S>{zeros({in, out}), zeros({out})}; };
  auto ln = [&]() { return LayerNorm<S>{ones({h}), zeros({h})}; };
  auto attn = [&]() { return Attention<S>{lin(h, h), lin(h, h), lin(h, h), lin(h, h)}; };

  p.text_embed = zeros({cfg.text_vocab_size, h});
  p.encoder_positions = zeros({cfg.max_positions, h});
  p.decoder_positions = zeros({cfg.max_positions, h});
  for (int i = 0; i < cfg.codebooks; ++i) p.code_embed.push_back(zeros({v, h}));
  for (int l = 0; l < cfg.layers; ++l) {
    p.encoder.push_back({ln(), attn(), ln(), lin(h, cfg.ff_dim), lin(cfg.ff_dim, h)});
  }
  p.encoder_norm = ln();
  for (int l = 0; l < cfg.layers; ++l) {
    p.decoder.push_back({ln(), attn(), ln(), attn(), ln(), lin(h, cfg.ff_dim), lin(cfg.ff_dim, h)});
  }
  p.decoder_norm = ln();
  for (int i = 0; i < cfg.codebooks; ++i) p.heads.push_back(lin(h, v));

  std::mt19937_64 rng(substream(seed, Stream::kInit));
  const double base_std = 0.02;
  const double residual_std = base_std / std::sqrt(2.0 * cfg.layers);
  for (auto& [name, var] : p.named()) {
    const bool is_bias = name.ends_with(".bias");
    const bool is_gain = name.ends_with(".gain");
    if (is_bias || is_gain) continue;
    const bool residual = name.ends_with("out.weight") || name.ends_with("ff_out.weight");
    std::normal_distribution<double> dist(0.0, residual ? residual_std : base_std);
    for (S& x : var->mutable_value().values()) x = static_cast<S>(dist(rng));
  }
  return p;
}

template <typename S>
std::vector<std::pair<std::string, ad::BasicVar<S>*>> ModelParams<S>::named() {
  std::vector<std::pair<std::string, ad::BasicVar<S>*>> out;
  auto add_lin = [&](const std::string& n, Linear<S>& l) {
    out.emplace_back(n + ".weight", &l.weight);
    out.emplace_back(n + ".bias", &l.bias);
  };
  auto add_ln = [&](const std::string& n, LayerNorm<S>& l) {
    out.emplace_back(n + ".gain", &l.gain);
    out.emplace_back(n + ".bias", &l.bias);
  };
  auto add_attn = [&](const std::string& n, Attention<S>& a) {
    add_lin(n + ".query", a.query);
    add_lin(n + ".key", a.key);
    add_lin(n + ".value", a.value);
    add_lin(n + ".out", a.out);
  };
  out.emplace_back("text_embed", &text_embed);
  out.emplace_back("encoder_positions", &encoder_positions);
  out.emplace_back("decoder_positions", &decoder_positions);
  for (std::size_t i = 0; i < code_embed.size(); ++i) out.emplace_back("code_embed." + std::to_string(i), &code_embed[i]);
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string n = "encoder." + std::to_string(l);
    add_ln(n + ".norm_attn", encoder[l].norm_attn);
    add_attn(n + ".self_attn", encoder[l].self_attn);
    add_ln(n + ".norm_ff", encoder[l].norm_ff);
    add_lin(n + ".ff_in", encoder[l].ff_in);
    add_lin(n + ".ff_out", encoder[l].ff_out);
  }
  add_ln("encoder_norm", encoder_norm);
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string n = "decoder." + std::to_string(l);
    add_ln(n + ".norm_self", decoder[l].norm_self);
    add_attn(n + ".self_attn", decoder[l].self_attn);
    add_ln(n + ".norm_cross", decoder[l].norm_cross);
    add_attn(n + ".cross_attn", decoder[l].cross_attn);
    add_ln(n + ".norm_ff", decoder[l].norm_ff);
    add_lin(n + ".ff_in", decoder[l].ff_in);
    add_lin(n + ".ff_out", decoder[l].ff_out);
  }
  add_ln("decoder_norm", decoder_norm);
  for (std::size_t i = 0; i < heads.size(); ++i) add_lin("heads." + std::to_string(i), heads[i]);
  return out;
}

template <typename S>
std::vector<std::pair<std::string, const ad::BasicVar<S>*>> ModelParams<S>::named() const {
  auto mut = const_cast<ModelParams*>(this)->named();
  std::vector<std::pair<std::string, const ad::BasicVar<S>*>> out;
  out.reserve(mut.size());
  for (auto& [n, v] : mut) out.emplace_back(std::move(n), v);
  return out;
}

template <typename S>
std::int64_t ModelParams<S>::count() const {
  std::int64_t total = 0;
  for (const auto& [n, v] : named()) total += v->value().numel();
  return total;
}

template <typename S>
template <typename T>
ModelParams<T> ModelParams<S>::cast() const {
  ModelParams<T> out;
  auto conv = [](const ad::BasicVar<S>& v) { return ad::leaf(v.value().template cast<T>()); };
  auto lin = [&](const Linear<S>& l) { return Linear<T>{conv(l.weight), conv(l.bias)}; };
  auto ln = [&](const LayerNorm<S>& l) { return LayerNorm<T>{conv(l.gain), conv(l.bias)}; };
  auto attn = [&](const Attention<S>& a) {
    return Attention<T>{lin(a.query), lin(a.key), lin(a.value), lin(a.out)};
  };
  out.text_embed = conv(text_embed);
  out.encoder_positions = conv(encoder_positions);
  out.decoder_positions = conv(decoder_positions);
  for (const auto& t : code_embed) out.code_embed.push_back(conv(t));
  for (const auto& l : encoder) {
    out.encoder.push_back({ln(l.norm_attn), attn(l.self_attn), ln(l.norm_ff), lin(l.ff_in), lin(l.ff_out)});
  }
  out.encoder_norm = ln(encoder_norm);
  for (const auto& l : decoder) {
    out.decoder.push_back({ln(l.norm_self), attn(l.self_attn), ln(l.norm_cross), attn(l.cross_attn), ln(l.norm_ff),
                           lin(l.ff_in), lin(l.ff_out)});
  }
  out.decoder_norm = ln(decoder_norm);
  for (const auto& h : heads) out.heads.push_back(lin(h));
  return out;
}

// ---------------------------------------------------------------------------
// Batching

align::AlignmentSlice slice_bounds(ContextPlacement placement, std::int64_t context_len, std::int64_t encoder_len,
                                   std::int64_t decoder_len) {
  if (context_len < 0) throw std::invalid_argument("slice_bounds: negative context length");
  align::AlignmentSlice s;
  if (placement == ContextPlacement::kEncoder) {
    if (context_len >= encoder_len) {
      throw std::invalid_argument("slice_bounds: context of " + std::to_string(context_len) +
                                  " leaves no question in encoder length " + std::to_string(encoder_len));
    }
    s = {context_len, encoder_len, 0, decoder_len};
  } else {
    if (context_len >= decoder_len) {
      throw std::invalid_argument("slice_bounds: context of " + std::to_string(context_len) +
                                  " leaves no answer in decoder length " + std::to_string(decoder_len));
    }
    s = {0, encoder_len, context_len, decoder_len};
  }
  s.validate();
  return s;
}

CodeMatrix model_answer_stream(const CodeMatrix& answer, const ModelConfig& cfg) {
  return cfg.rvq_mode ? delay_encode(answer) : answer;
}

namespace {

struct SampleView {
  const TextSequence* question;
  const CodeMatrix* context;
  CodeArray decoder_in;  // without context
  CodeArray targets;     // -1 = ignored; same rows as decoder_in
};

void check_codes(const CodeMatrix& c, const ModelConfig& cfg, const char* what) {
  if (c.frames() == 0) return;
  if (c.codebooks() != cfg.codebooks || c.m != cfg.bits) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(cfg.codebooks) +
                                " codebooks of " + std::to_string(cfg.bits) + " bits, got " +
                                std::to_string(c.codebooks()) + " of " + std::to_string(c.m));
  }
}

Batch assemble(const std::vector<SampleView>& views, const ModelConfig& cfg) {
  Batch b;
  b.size = static_cast<std::int64_t>(views.size());
  const int n = cfg.codebooks;
  const bool enc_ctx = cfg.placement == ContextPlacement::kEncoder;
  for (const auto& v : views) {
    const auto ctx = v.context->frames();
    const auto q = static_cast<std::int64_t>(v.question->ids.size());
    const auto enc_len = q + (enc_ctx ? ctx : 0);
    const auto dec_len = v.decoder_in.rows() + (enc_ctx ? 0 : ctx);
    b.encoder_lengths.push_back(enc_len);
    b.decoder_lengths.push_back(dec_len);
    b.context_lengths.push_back(ctx);
    auto slice = slice_bounds(cfg.placement, ctx, enc_len, dec_len);
    if (!cfg.align_prompt && q > Vocabulary::kPromptLength) slice.q_s += Vocabulary::kPromptLength;
    b.slices.push_back(slice);
    b.encoder_len = std::max(b.encoder_len, enc_len);
    b.decoder_len = std::max(b.decoder_len, dec_len);
  }
  if (b.encoder_len > cfg.max_positions) {
    throw std::length_error("encoder sequence of " + std::to_string(b.encoder_len) + " exceeds max_positions=" +
                            std::to_string(cfg.max_positions));
  }
  if (b.decoder_len > cfg.max_positions) {
    throw std::length_error("decoder sequence of " + std::to_string(b.decoder_len) + " exceeds max_positions=" +
                            std::to_string(cfg.max_positions));
  }
  const auto E = b.encoder_len;
  const auto D = b.decoder_len;
  const auto pad = pad_code(cfg.bits);
  b.encoder_text_ids.assign(static_cast<std::size_t>(b.size * E), Vocabulary::kPad);
  b.encoder_text_mask.assign(static_cast<std::size_t>(b.size * E), 0.0f);
  b.encoder_code_mask.assign(static_cast<std::size_t>(b.size * E), 0.0f);
  b.encoder_code_ids.assign(static_cast<std::size_t>(b.size * E * n), pad);
  b.decoder_code_ids.assign(static_cast<std::size_t>(b.size * D * n), pad);
  b.targets.assign(static_cast<std::size_t>(b.size * D * n), -1);

  for (std::int64_t s = 0; s < b.size; ++s) {
    const auto& v = views[static_cast<std::size_t>(s)];
    const auto ctx = v.context->frames();
    std::int64_t pos = 0;
    if (enc_ctx) {
      for (; pos < ctx; ++pos) {
        b.encoder_code_mask[static_cast<std::size_t>(s * E + pos)] = 1.0f;
        for (int i = 0; i < n; ++i) {
          b.encoder_code_ids[static_cast<std::size_t>((s * E + pos) * n + i)] = v.context->codes(pos, i);
        }
      }
    }
    for (auto id : v.question->ids) {
      if (id < 0 || id >= cfg.text_vocab_size) {
        throw std::out_of_range("question id " + std::to_string(id) + " outside text vocabulary of " +
                                std::to_string(cfg.text_vocab_size));
      }
      b.encoder_text_ids[static_cast<std::size_t>(s * E + pos)] = id;
      b.encoder_text_mask[static_cast<std::size_t>(s * E + pos)] = 1.0f;
      ++pos;
    }
    std::int64_t t = 0;
    if (!enc_ctx) {
      for (; t < ctx; ++t) {
        for (int i = 0; i < n; ++i) {
          b.decoder_code_ids[static_cast<std::size_t>((s * D + t) * n + i)] = v.context->codes(t, i);
        }
      }
    }
    for (Eigen::Index r = 0; r < v.decoder_in.rows(); ++r, ++t) {
      for (int i = 0; i < n; ++i) {
        b.decoder_code_ids[static_cast<std::size_t>((s * D + t) * n + i)] = v.decoder_in(r, i);
        b.targets[static_cast<std::size_t>((s * D + t) * n + i)] = v.targets(r, i);
      }
    }
  }
  return b;
}

}  // namespace

Batch make_batch(std::span<const Sample* const> samples, const ModelConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<SampleView> views;
  views.reserve(samples.size());
  const auto pad = pad_code(cfg.bits);
  for (const Sample* s : samples) {
    check_codes(s->answer, cfg, "answer");
    check_codes(s->context, cfg, "context");
    const CodeMatrix stream = model_answer_stream(s->answer, cfg);
    const auto rows = stream.frames();
    SampleView v{&s->question, &s->context, CodeArray(rows, cfg.codebooks), CodeArray(rows, cfg.codebooks)};
    v.decoder_in.row(0).setConstant(bos_code(cfg.bits));
    if (rows > 1) v.decoder_in.bottomRows(rows - 1) = stream.codes.topRows(rows - 1);
    v.targets = stream.codes;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int i = 0; i < cfg.codebooks; ++i) {
        if (v.targets(r, i) == pad) v.targets(r, i) = -1;
      }
    }
    views.push_back(std::move(v));
  }
  return assemble(views, cfg);
}

Batch make_inference_batch(const TextSequence& question, const CodeMatrix& context, const CodeMatrix& answer_in,
                           const ModelConfig& cfg) {
  check_codes(context, cfg, "context");
  check_codes(answer_in, cfg, "answer_in");
  SampleView v{&question, &context, answer_in.codes, CodeArray::Constant(answer_in.frames(), cfg.codebooks, -1)};
  std::vector<SampleView> views;
  views.push_back(std::move(v));
  return assemble(views, cfg);
}

// ---------------------------------------------------------------------------
// Forward

template <typename S>
ad::BasicVar<S> embed_codes(const ModelParams<S>& params, std::span<const std::int32_t> ids, ad::Shape index_shape,
                            int codebooks) {
  if (static_cast<int>(params.code_embed.size()) != codebooks) {
    throw std::invalid_argument("embed_codes: model has " + std::to_string(params.code_embed.size()) +
                                " code tables, input has " + std::to_string(codebooks) + " codebooks");
  }
  const auto cells = ad::shape_numel(index_shape);
  if (static_cast<std::int64_t>(ids.size()) != cells * codebooks) {
    throw ad::DimensionError("embed_codes: " + std::to_string(ids.size()) + " ids for index shape " +
                             ad::shape_str(index_shape) + " x " + std::to_string(codebooks));
  }
  Var<S> sum;
  std::vector<std::int32_t> column(static_cast<std::size_t>(cells));
  for (int i = 0; i < codebooks; ++i) {
    for (std::int64_t c = 0; c < cells; ++c) {
      column[static_cast<std::size_t>(c)] = ids[static_cast<std::size_t>(c * codebooks + i)];
    }
    auto e = ad::embedding_gather(params.code_embed[static_cast<std::size_t>(i)], column, index_shape);
    sum = i == 0 ? e : ad::add(sum, e);
  }
  return sum;
}

template <typename S>
ad::BasicVar<S> encode(const ModelParams<S>& params, const ModelConfig& cfg, const Batch& batch,
                       const ForwardOptions<S>& opts) {
  const auto B = batch.size;
  const auto E = batch.encoder_len;
  const int h = cfg.hidden;
  auto x = ad::embedding_gather(params.text_embed, batch.encoder_text_ids, {B, E});
  if (cfg.placement == ContextPlacement::kEncoder &&
      std::any_of(batch.context_lengths.begin(), batch.context_lengths.end(), [](auto c) { return c > 0; })) {
    x = ad::mul(x, ad::constant(expand_mask<S>(batch.encoder_text_mask, B, E, h)));
    auto codes = embed_codes(params, batch.encoder_code_ids, {B, E}, cfg.codebooks);
    x = ad::add(x, ad::mul(codes, ad::constant(expand_mask<S>(batch.encoder_code_mask, B, E, h))));
  }
  x = ad::add(x, positions(params.encoder_positions, E, "encoder", cfg));
  x = maybe_dropout(x, cfg, opts);

  ad::BasicTensor<S> bias({B, E, E}, S(0));
  for (std::int64_t b = 0; b < B; ++b) {
    const auto len = batch.encoder_lengths[static_cast<std::size_t>(b)];
    for (std::int64_t i = 0; i < E; ++i) {
      for (std::int64_t j = len; j < E; ++j) bias[(b * E + i) * E + j] = S(kMaskValue);
    }
  }
  const auto self_bias = ad::constant(std::move(bias));
  for (const auto& layer : params.encoder) {
    auto y = norm(x, layer.norm_attn);
    x = ad::add(x, maybe_dropout(attention(layer.self_attn, y, y, self_bias, cfg, opts, nullptr), cfg, opts));
    y = norm(x, layer.norm_ff);
    x = ad::add(x, maybe_dropout(feed_forward(layer.ff_in, layer.ff_out, y), cfg, opts));
  }
  return norm(x, params.encoder_norm);
}

template <typename S>
ForwardOutput<S> decode(const ModelParams<S>& params, const ModelConfig& cfg, const Batch& batch,
                        const ad::BasicVar<S>& encoded, const ForwardOptions<S>& opts) {
  const auto B = batch.size;
  const auto D = batch.decoder_len;
  const auto E = batch.encoder_len;
  auto x = embed_codes(params, batch.decoder_code_ids, {B, D}, cfg.codebooks);
  x = ad::add(x, positions(params.decoder_positions, D, "decoder", cfg));
  x = maybe_dropout(x, cfg, opts);

  ad::BasicTensor<S> self_bias({B, D, D}, S(0));
  ad::BasicTensor<S> cross_bias({B, D, E}, S(0));
  if (opts.priors != nullptr && static_cast<std::int64_t>(opts.priors->size()) != B) {
    throw std::invalid_argument("forward: " + std::to_string(opts.priors->size()) + " priors for batch of " +
                                std::to_string(B));
  }
  for (std::int64_t b = 0; b < B; ++b) {
    const auto dec_len = batch.decoder_lengths[static_cast<std::size_t>(b)];
    const auto enc_len = batch.encoder_lengths[static_cast<std::size_t>(b)];
    for (std::int64_t i = 0; i < D; ++i) {
      for (std::int64_t j = 0; j < D; ++j) {
        if (j > i || j >= dec_len) self_bias[(b * D + i) * D + j] = S(kMaskValue);
      }
      for (std::int64_t j = enc_len; j < E; ++j) cross_bias[(b * D + i) * E + j] = S(kMaskValue);
    }
    if (opts.priors != nullptr) {
      Eigen::Map<align::Matrix<S>> block(cross_bias.data() + b * D * E, D, E);
      block = align::apply_prior(block, (*opts.priors)[static_cast<std::size_t>(b)],
                                 batch.slices[static_cast<std::size_t>(b)], opts.prior_eps);
    }
  }
  const auto self_mask = ad::constant(std::move(self_bias));
  const auto cross_mask = ad::constant(std::move(cross_bias));

  ForwardOutput<S> out;
  out.capture.layers = cfg.layers;
  out.capture.heads = cfg.heads;
  for (const auto& layer : params.decoder) {
    auto y = norm(x, layer.norm_self);
    x = ad::add(x, maybe_dropout(attention(layer.self_attn, y, y, self_mask, cfg, opts, nullptr), cfg, opts));
    y = norm(x, layer.norm_cross);
    x = ad::add(x, maybe_dropout(attention(layer.cross_attn, y, encoded, cross_mask, cfg, opts,
                                           &out.capture.scores),
                                 cfg, opts));
    y = norm(x, layer.norm_ff);
    x = ad::add(x, maybe_dropout(feed_forward(layer.ff_in, layer.ff_out, y), cfg, opts));
  }
  x = norm(x, params.decoder_norm);

  std::vector<Var<S>> weights;
  std::vector<Var<S>> biases;
  for (const auto& head : params.heads) {
    weights.push_back(head.weight);
    biases.push_back(head.bias);
  }
  const Linear<S> joint{ad::concat(weights, 1), ad::concat(biases, 0)};
  out.logits = ad::reshape(linear(x, joint), {B, D, cfg.codebooks, cfg.code_vocab()});
  return out;
}

template <typename S>
ForwardOutput<S> forward(const ModelParams<S>& params, const ModelConfig& cfg, const Batch& batch,
                         const ForwardOptions<S>& opts) {
  return decode(params, cfg, batch, encode(params, cfg, batch, opts), opts);
}

template <typename S>
ad::BasicVar<S> ce_loss(const ad::BasicVar<S>& logits, std::span<const std::int32_t> targets) {
  if (std::all_of(targets.begin(), targets.end(), [](auto t) { return t < 0; })) {
    throw std::invalid_argument("ce_loss: every target cell is PAD");
  }
  return ad::softmax_cross_entropy(logits, targets);
}

#define T5TTS_INSTANTIATE(S)                                                                                   \
  template struct ModelParams<S>;                                                                              \
  template ad::BasicVar<S> embed_codes(const ModelParams<S>&, std::span<const std::int32_t>, ad::Shape, int); \
  template ad::BasicVar<S> encode(const ModelParams<S>&, const ModelConfig&, const Batch&,                    \
                                  const ForwardOptions<S>&);                                                   \
  template ForwardOutput<S> decode(const ModelParams<S>&, const ModelConfig&, const Batch&,                   \
                                   const ad::BasicVar<S>&, const ForwardOptions<S>&);                          \
  template ForwardOutput<S> forward(const ModelParams<S>&, const ModelConfig&, const Batch&,                  \
                                    const ForwardOptions<S>&);                                                 \
  template ad::BasicVar<S> ce_loss(const ad::BasicVar<S>&, std::span<const std::int32_t>);

T5TTS_INSTANTIATE(float)
T5TTS_INSTANTIATE(double)
#undef T5TTS_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;

}  // namespace t5tts
