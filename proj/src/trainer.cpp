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

#include "t5tts/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "t5tts/checkpoint.hpp"
#include "t5tts/random.hpp"

namespace t5tts {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (steps < 0) fail("steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (prior_start < 0 || prior_start >= prior_end) fail("need 0 <= prior_start < prior_end");
  if (!(prior_omega > 0.0)) fail("prior_omega must be positive");
  if (lambda_align < 0.0) fail("lambda_align must be >= 0");
  if (eval_interval < 0) fail("eval_interval must be >= 0");
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string metrics_header() {
  return "step,L_total,L_CE,L_align,diagonality,symbol_error_rate,repeats,misses,wall_clock";
}

std::string metrics_line(const MetricsRow& r) {
  std::string s = std::to_string(r.step) + "," + fmt(r.total_loss) + "," + fmt(r.ce_loss) + "," +
                  fmt(r.align_loss) + "," + fmt(r.diagonality) + ",";
  if (r.symbol_error_rate) s += fmt(*r.symbol_error_rate);
  s += ",";
  if (r.repeats) s += std::to_string(*r.repeats);
  s += ",";
  if (r.misses) s += std::to_string(*r.misses);
  s += "," + fmt(r.wall_clock);
  return s;
}

std::string eval_header() {
  return "step,samples,symbol_error_rate,repeats,misses,truncated,diagonality,stress_samples,"
         "stress_symbol_error_rate,stress_repeats,stress_misses";
}

std::string eval_line(const EvalRecord& rec) {
  const auto& m = rec.metrics;
  return std::to_string(rec.step) + "," + std::to_string(m.samples) + "," + fmt(m.symbol_error_rate) + "," +
         std::to_string(m.repeats) + "," + std::to_string(m.misses) + "," + std::to_string(m.truncated) + "," +
         fmt(m.diagonality) + "," + std::to_string(m.stress_samples) + "," + fmt(m.stress_symbol_error_rate) +
         "," + std::to_string(m.stress_repeats) + "," + std::to_string(m.stress_misses);
}

// ---------------------------------------------------------------------------
// AdamW

AdamW::AdamW(const TrainConfig& cfg, ModelParams<float>& params) : cfg_(cfg), params_(params.named()) {
  for (const auto& [name, var] : params_) {
    m_.emplace_back(var->shape(), 0.0f);
    v_.emplace_back(var->shape(), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(cfg_.beta1);
  const float b2 = static_cast<float>(cfg_.beta2);
  const float step_size = static_cast<float>(cfg_.lr / c1);
  const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  const float eps = static_cast<float>(cfg_.adam_eps);
  const float decay = static_cast<float>(cfg_.lr * cfg_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::BasicVar<float>& p = *params_[k].second;
    auto value_map = p.mutable_value().matrix();
    auto value = value_map.array();
    if (p.value().rank() >= 2 && decay > 0.0f) value -= decay * value;
    if (p.grad().empty()) continue;
    const auto g_map = p.grad().matrix();
    auto m_map = m_[k].matrix();
    auto v_map = v_[k].matrix();
    const auto g = g_map.array();
    auto m = m_map.array();
    auto v = v_map.array();
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    value -= step_size * m / (v.sqrt() * inv_sqrt_c2 + eps);
    p.zero_grad();
  }
}

std::map<std::string, ad::Tensor> AdamW::state() const {
  std::map<std::string, ad::Tensor> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.emplace("adam.m." + params_[k].first, m_[k]);
    out.emplace("adam.v." + params_[k].first, v_[k]);
  }
  out.emplace("adam.step", ad::Tensor::scalar(static_cast<float>(t_)));
  return out;
}

void AdamW::load_state(const std::map<std::string, ad::Tensor>& state) {
  auto get = [&](const std::string& name, const ad::Shape& shape) -> const ad::Tensor& {
    auto it = state.find(name);
    if (it == state.end()) throw std::runtime_error("optimizer state: missing '" + name + "'");
    if (it->second.shape() != shape) throw std::runtime_error("optimizer state: shape mismatch for '" + name + "'");
    return it->second;
  };
  for (std::size_t k = 0; k < params_.size(); ++k) {
    m_[k] = get("adam.m." + params_[k].first, params_[k].second->shape());
    v_[k] = get("adam.v." + params_[k].first, params_[k].second->shape());
  }
  t_ = static_cast<std::int64_t>(get("adam.step", {1})[0]);
}

// ---------------------------------------------------------------------------
// Steps

std::optional<std::vector<align::Matrix<float>>> batch_priors(const Batch& batch, int step, const TrainConfig& cfg) {
  if (!cfg.use_prior) return std::nullopt;
  std::vector<align::Matrix<float>> out;
  out.reserve(batch.slices.size());
  for (const auto& slice : batch.slices) {
    const auto prior = align::beta_binomial_prior<double>(slice.answer_len(), slice.question_len(), cfg.prior_omega);
    auto annealed = align::anneal_prior(prior, step, cfg.prior_start, cfg.prior_end);
    if (!annealed) return std::nullopt;
    out.push_back(annealed->cast<float>());
  }
  return out;
}

namespace {

std::string batch_dump(const Batch& b, int step, double ce, double align) {
  json j;
  j["step"] = step;
  j["ce_loss"] = std::isfinite(ce) ? json(ce) : json(std::to_string(ce));
  j["align_loss"] = std::isfinite(align) ? json(align) : json(std::to_string(align));
  j["encoder_lengths"] = b.encoder_lengths;
  j["decoder_lengths"] = b.decoder_lengths;
  j["context_lengths"] = b.context_lengths;
  j["encoder_text_ids"] = b.encoder_text_ids;
  j["decoder_code_ids"] = b.decoder_code_ids;
  return j.dump();
}

double batch_diagonality(const align::AttentionCapture<float>& capture, const align::HeadSet& heads,
                         const Batch& batch) {
  double total = 0.0;
  std::int64_t count = 0;
  for (const auto& [l, h] : heads) {
    const auto& scores = capture.at(l, h).value();
    for (std::int64_t b = 0; b < batch.size; ++b) {
      const auto& slice = batch.slices[static_cast<std::size_t>(b)];
      if (slice.answer_len() < 2 || slice.question_len() < 2) continue;
      Eigen::Map<const align::Matrix<float>> full(scores.data() + b * batch.decoder_len * batch.encoder_len,
                                                  batch.decoder_len, batch.encoder_len);
      total += align::diagonality(align::soft_alignment(full, slice).cast<double>());
      ++count;
    }
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

MetricsRow train_step(ModelParams<float>& params, AdamW& optimizer, const Batch& batch, int step,
                      const TrainConfig& tcfg, const ModelConfig& mcfg) {
  const auto heads = align::parse_head_set(tcfg.head_set, mcfg.layers, mcfg.heads);
  const auto priors = batch_priors(batch, step, tcfg);
  std::mt19937_64 rng(substream(tcfg.seed, Stream::kDropout, static_cast<std::uint64_t>(step)));
  ForwardOptions<float> opts;
  opts.priors = priors ? &*priors : nullptr;
  opts.train = true;
  opts.rng = &rng;

  const auto out = forward(params, mcfg, batch, opts);
  const auto ce = ce_loss(out.logits, batch.targets);
  auto total = ce;
  MetricsRow row;
  row.step = step;
  row.ce_loss = ce.item();
  const bool align_on = tcfg.lambda_align > 0.0 && (step <= tcfg.prior_end || tcfg.align_active_after_prior);
  if (align_on) {
    const auto al = align::total_align_loss(out.capture, heads, batch.slices);
    row.align_loss = al.item();
    total = ad::add(ce, ad::scale(al, static_cast<float>(tcfg.lambda_align)));
  }
  row.total_loss = total.item();
  if (!std::isfinite(row.total_loss)) {
    throw NonFiniteLossError("non-finite loss at step " + std::to_string(step) + " (L_CE=" + fmt(row.ce_loss) +
                                 ", L_align=" + fmt(row.align_loss) + ")",
                             batch_dump(batch, step, row.ce_loss, row.align_loss));
  }
  row.diagonality = batch_diagonality(out.capture, heads, batch);
  ad::backward(total);
  optimizer.step();
  return row;
}

std::vector<std::size_t> batch_for_step(const std::vector<Sample>& data, int batch_size, std::uint64_t seed,
                                        int step) {
  if (data.empty()) throw std::invalid_argument("batch_for_step: empty dataset");
  if (step < 1) throw std::invalid_argument("batch_for_step: steps are 1-based");
  const std::size_t n = data.size();
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  const std::size_t per_epoch = (n + bs - 1) / bs;
  const std::size_t global = static_cast<std::size_t>(step - 1);
  const std::uint64_t epoch = global / per_epoch;

  std::mt19937_64 rng(substream(seed, Stream::kDataOrder, epoch));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t window = 8 * bs;
  auto length = [&](std::size_t i) { return data[i].answer.frames() + data[i].context.frames(); };
  for (std::size_t w = 0; w < n; w += window) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(w);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(n, w + window));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return length(a) < length(b); });
  }
  std::vector<std::size_t> batch_order(per_epoch);
  std::iota(batch_order.begin(), batch_order.end(), std::size_t{0});
  std::shuffle(batch_order.begin(), batch_order.end(), rng);
  const std::size_t b = batch_order[global % per_epoch];
  return {order.begin() + static_cast<std::ptrdiff_t>(b * bs),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * bs))};
}

// ---------------------------------------------------------------------------
// Loop

namespace {

std::ofstream open_log(const fs::path& path, const std::string& header, bool append) {
  const bool exists = fs::exists(path);
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (!append || !exists) os << header << "\n";
  return os;
}

std::map<std::string, ad::Tensor> checkpoint_extras(const AdamW& opt, int step) {
  auto extras = opt.state();
  extras.emplace("train.step", ad::Tensor::scalar(static_cast<float>(step)));
  return extras;
}

}  // namespace

TrainResult train(const std::vector<Sample>& data, const TrainConfig& tcfg, const ModelConfig& mcfg,
                  const fs::path& out_dir, const std::optional<EvalSetup>& eval,
                  const std::optional<fs::path>& resume) {
  tcfg.validate();
  mcfg.validate();
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  const auto heads = align::parse_head_set(tcfg.head_set, mcfg.layers, mcfg.heads);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const auto started = std::chrono::steady_clock::now();
  TrainResult result;
  int start_step = 0;
  std::optional<Checkpoint> restored;
  if (resume) {
    restored = load_checkpoint(*resume, mcfg);
    result.params = std::move(restored->params);
    auto it = restored->extras.find("train.step");
    if (it == restored->extras.end()) throw CheckpointError(resume->string() + " has no training state");
    start_step = static_cast<int>(it->second[0]);
  } else {
    result.params = ModelParams<float>::init(mcfg, tcfg.seed);
  }
  AdamW optimizer(tcfg, result.params);
  if (restored) optimizer.load_state(restored->extras);

  auto metrics = open_log(out_dir / "metrics.csv", metrics_header(), resume.has_value());
  auto eval_log = open_log(out_dir / "eval.csv", eval_header(), resume.has_value());

  for (int step = start_step + 1; step <= tcfg.steps; ++step) {
    const auto indices = batch_for_step(data, tcfg.batch_size, tcfg.seed, step);
    std::vector<const Sample*> ptrs;
    for (auto i : indices) ptrs.push_back(&data[i]);
    const Batch batch = make_batch(ptrs, mcfg);
    MetricsRow row;
    try {
      row = train_step(result.params, optimizer, batch, step, tcfg, mcfg);
    } catch (const NonFiniteLossError& e) {
      const auto dump_path = out_dir / ("nonfinite_step" + std::to_string(step) + ".json");
      std::ofstream(dump_path) << e.dump() << "\n";
      throw std::runtime_error(std::string(e.what()) + "; batch dumped to " + dump_path.string());
    }
    const bool at_interval = tcfg.eval_interval > 0 && step % tcfg.eval_interval == 0;
    if (eval && eval->samples != nullptr && (at_interval || (tcfg.eval_interval > 0 && step == tcfg.steps))) {
      EvalRecord rec{step, evaluate(result.params, mcfg, *eval->samples, *eval->spec, *eval->vocab, eval->sampler,
                                    heads, tcfg.seed)};
      row.symbol_error_rate = rec.metrics.symbol_error_rate;
      row.repeats = rec.metrics.repeats;
      row.misses = rec.metrics.misses;
      eval_log << eval_line(rec) << "\n" << std::flush;
      result.evals.push_back(rec);
    }
    row.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    metrics << metrics_line(row) << "\n" << std::flush;
    if (!metrics) throw std::runtime_error("write failed for " + (out_dir / "metrics.csv").string());
    result.rows.push_back(row);
    if (at_interval) {
      save_checkpoint(out_dir / ("checkpoint_step" + std::to_string(step) + ".bin"), mcfg, result.params,
                      checkpoint_extras(optimizer, step));
    }
  }
  save_checkpoint(out_dir / "checkpoint.bin", mcfg, result.params,
                  checkpoint_extras(optimizer, std::max(start_step, tcfg.steps)));
  return result;
}

}  // namespace t5tts
