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
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "t5tts/alignment_loss.hpp"
#include "t5tts/autodiff.hpp"
#include "t5tts/codec_data.hpp"
#include "t5tts/inference.hpp"
#include "t5tts/model.hpp"

namespace t5tts {

struct TrainConfig {
  int steps = 3000;
  int batch_size = 16;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  /// Prior is used unchanged until prior_start, annealed toward all-ones until
  /// prior_end and dropped afterwards.
  int prior_start = 500;
  int prior_end = 1000;
  bool use_prior = true;
  double prior_omega = 1.0;
  double lambda_align = 1.0;
  std::string head_set = "all";
  bool align_active_after_prior = true;
  std::uint64_t seed = 0;
  /// Steps between evaluations and intermediate checkpoints; 0 disables both.
  int eval_interval = 500;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct MetricsRow {
  std::int64_t step = 0;
  double total_loss = 0.0;
  double ce_loss = 0.0;
  double align_loss = 0.0;
  /// Mean diagonality of the training batch's captured cross-attention over
  /// the head set (includes the prior while one is injected).
  double diagonality = 0.0;
  std::optional<double> symbol_error_rate;
  std::optional<std::int64_t> repeats;
  std::optional<std::int64_t> misses;
  double wall_clock = 0.0;
};

/// CSV header matching MetricsRow.
std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::string dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  /// JSON description of the offending batch.
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

/// Decoupled-weight-decay Adam. Decay applies to tensors of rank >= 2
/// (projections and embedding tables), not to biases or norm gains.
class AdamW {
 public:
  AdamW(const TrainConfig& cfg, ModelParams<float>& params);

  void step();
  std::int64_t steps_taken() const { return t_; }

  /// Moments and step counter as named tensors ("adam.m.<param>", ...).
  std::map<std::string, ad::Tensor> state() const;
  void load_state(const std::map<std::string, ad::Tensor>& state);

 private:
  TrainConfig cfg_;
  std::vector<std::pair<std::string, ad::BasicVar<float>*>> params_;
  std::vector<ad::Tensor> m_;
  std::vector<ad::Tensor> v_;
  std::int64_t t_ = 0;
};

/// Prior for every batch element at `step`, or nullopt once annealed away
/// (or when the prior is disabled).
std::optional<std::vector<align::Matrix<float>>> batch_priors(const Batch& batch, int step, const TrainConfig& cfg);

/// One optimizer step (1-based `step`). Dropout draws from a substream keyed
/// by (seed, step).
MetricsRow train_step(ModelParams<float>& params, AdamW& optimizer, const Batch& batch, int step,
                      const TrainConfig& tcfg, const ModelConfig& mcfg);

/// Sample indices of the batch consumed at 1-based `step`. Each epoch is a
/// seeded shuffle; within windows of 8 batches samples are sorted by length
/// before being cut into batches, and the batch order is shuffled again.
std::vector<std::size_t> batch_for_step(const std::vector<Sample>& data, int batch_size, std::uint64_t seed, int step);

struct EvalSetup {
  const std::vector<Sample>* samples = nullptr;
  const SyntheticSpec* spec = nullptr;
  const Vocabulary* vocab = nullptr;
  SamplerConfig sampler;
};

struct EvalRecord {
  std::int64_t step = 0;
  EvalMetrics metrics;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::vector<EvalRecord> evals;
  ModelParams<float> params;
};

std::string eval_header();
std::string eval_line(const EvalRecord& rec);

/// Writes <out>/metrics.csv, <out>/eval.csv, <out>/checkpoint.bin and
/// <out>/checkpoint_step<S>.bin at eval intervals. With `resume`, continues
/// from that checkpoint's step and appends to the existing logs.
TrainResult train(const std::vector<Sample>& data, const TrainConfig& tcfg, const ModelConfig& mcfg,
                  const std::filesystem::path& out_dir, const std::optional<EvalSetup>& eval = std::nullopt,
                  const std::optional<std::filesystem::path>& resume = std::nullopt);

}  // namespace t5tts
