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

#include "t5tts/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace t5tts {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same value.
template <typename T>
std::string shortest(T v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& name, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ConfigError(name + ": cannot parse '" + text + "' as a number");
  }
  return v;
}

bool parse_bool(const std::string& name, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(name + ": expected true or false, got '" + text + "'");
}

// Field builders over a member-of-member accessor.
template <typename Get>
ConfigField int_field(std::string section, std::string key, std::string doc, Get ref) {
  const std::string name = section + "." + key;
  return {std::move(section), std::move(key), std::move(doc),
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) {
            ref(c) = parse_number<std::remove_reference_t<decltype(ref(c))>>(name, v);
          }};
}

template <typename Get>
ConfigField real_field(std::string section, std::string key, std::string doc, Get ref) {
  const std::string name = section + "." + key;
  return {std::move(section), std::move(key), std::move(doc),
          [ref](const RunConfig& c) { return shortest(ref(const_cast<RunConfig&>(c))); },
          [ref, name](RunConfig& c, const std::string& v) {
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(parse_number<double>(name, v));
          }};
}

template <typename Get>
ConfigField bool_field(std::string section, std::string key, std::string doc, Get ref) {
  const std::string name = section + "." + key;
  return {std::move(section), std::move(key), std::move(doc),
          [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); }};
}

std::vector<ConfigField> build_fields() {
  std::vector<ConfigField> f;
  f.push_back(int_field("run", "seed", "root seed for corpus, init, data order, dropout and sampling",
                        [](RunConfig& c) -> std::uint64_t& { return c.seed; }));

  f.push_back(int_field("model", "layers", "layers per stack", [](RunConfig& c) -> int& { return c.model.layers; }));
  f.push_back(int_field("model", "heads", "attention heads per layer",
                        [](RunConfig& c) -> int& { return c.model.heads; }));
  f.push_back(int_field("model", "hidden", "model width", [](RunConfig& c) -> int& { return c.model.hidden; }));
  f.push_back(int_field("model", "ff_dim", "feed-forward width", [](RunConfig& c) -> int& { return c.model.ff_dim; }));
  f.push_back(int_field("model", "codebooks", "parallel codebooks per frame",
                        [](RunConfig& c) -> int& { return c.model.codebooks; }));
  f.push_back(int_field("model", "bits", "bits per code (2^bits acoustic codes + 3 specials)",
                        [](RunConfig& c) -> int& { return c.model.bits; }));
  f.push_back(int_field("model", "text_vocab_size", "text vocabulary size (must match the corpus vocabulary)",
                        [](RunConfig& c) -> int& { return c.model.text_vocab_size; }));
  f.push_back(int_field("model", "max_positions", "position table length",
                        [](RunConfig& c) -> int& { return c.model.max_positions; }));
  f.push_back({"model", "context_placement", "encoder or decoder",
               [](const RunConfig& c) { return to_string(c.model.placement); },
               [](RunConfig& c, const std::string& v) {
                 try {
                   c.model.placement = parse_context_placement(v);
                 } catch (const std::invalid_argument& e) {
                   throw ConfigError(std::string("model.context_placement: ") + e.what());
                 }
               }});
  f.push_back(bool_field("model", "rvq_mode", "delay-pattern generation for dependent codebooks",
                         [](RunConfig& c) -> bool& { return c.model.rvq_mode; }));
  f.push_back(real_field("model", "dropout", "dropout probability",
                         [](RunConfig& c) -> float& { return c.model.dropout; }));
  f.push_back(bool_field("model", "align_prompt", "start the alignment slice at the task prompt instead of the text",
                         [](RunConfig& c) -> bool& { return c.model.align_prompt; }));

  f.push_back(int_field("train", "steps", "optimizer steps", [](RunConfig& c) -> int& { return c.train.steps; }));
  f.push_back(int_field("train", "batch_size", "samples per step",
                        [](RunConfig& c) -> int& { return c.train.batch_size; }));
  f.push_back(real_field("train", "lr", "fixed AdamW learning rate", [](RunConfig& c) -> double& { return c.train.lr; }));
  f.push_back(real_field("train", "beta1", "AdamW beta1", [](RunConfig& c) -> double& { return c.train.beta1; }));
  f.push_back(real_field("train", "beta2", "AdamW beta2", [](RunConfig& c) -> double& { return c.train.beta2; }));
  f.push_back(real_field("train", "adam_eps", "AdamW epsilon",
                         [](RunConfig& c) -> double& { return c.train.adam_eps; }));
  f.push_back(real_field("train", "weight_decay", "decoupled weight decay",
                         [](RunConfig& c) -> double& { return c.train.weight_decay; }));
  f.push_back(int_field("train", "prior_start", "step where the prior starts annealing toward all-ones",
                        [](RunConfig& c) -> int& { return c.train.prior_start; }));
  f.push_back(int_field("train", "prior_end", "step after which the prior is removed",
                        [](RunConfig& c) -> int& { return c.train.prior_end; }));
  f.push_back(bool_field("train", "use_prior", "inject the beta-binomial prior",
                         [](RunConfig& c) -> bool& { return c.train.use_prior; }));
  f.push_back(real_field("train", "prior_omega", "beta-binomial scaling",
                         [](RunConfig& c) -> double& { return c.train.prior_omega; }));
  f.push_back(real_field("train", "lambda_align", "alignment loss weight (0 disables it)",
                         [](RunConfig& c) -> double& { return c.train.lambda_align; }));
  f.push_back({"train", "head_set", "alignment heads: all, two_per_layer or l:h,l:h,...",
               [](const RunConfig& c) { return c.train.head_set; },
               [](RunConfig& c, const std::string& v) { c.train.head_set = v; }});
  f.push_back(bool_field("train", "align_active_after_prior", "keep the alignment loss once the prior is gone",
                         [](RunConfig& c) -> bool& { return c.train.align_active_after_prior; }));
  f.push_back(int_field("train", "eval_interval", "steps between evaluations and checkpoints (0 = end only)",
                        [](RunConfig& c) -> int& { return c.train.eval_interval; }));

  f.push_back(int_field("sampler", "k", "top-k", [](RunConfig& c) -> int& { return c.sampler.k; }));
  f.push_back(real_field("sampler", "temperature", "softmax temperature",
                         [](RunConfig& c) -> double& { return c.sampler.temperature; }));
  f.push_back(int_field("sampler", "max_frames", "generation budget in frames",
                        [](RunConfig& c) -> int& { return c.sampler.max_frames; }));

  f.push_back(int_field("corpus", "symbols", "synthetic alphabet size",
                        [](RunConfig& c) -> int& { return c.corpus.symbol_count; }));
  f.push_back(int_field("corpus", "context_frames", "speaker context length in frames",
                        [](RunConfig& c) -> int& { return c.corpus.context_frames; }));
  f.push_back(int_field("corpus", "speakers", "number of speaker context blocks",
                        [](RunConfig& c) -> int& { return c.corpus.speakers; }));
  f.push_back(int_field("corpus", "min_symbols", "shortest sentence",
                        [](RunConfig& c) -> int& { return c.corpus.min_symbols; }));
  f.push_back(int_field("corpus", "max_symbols", "longest sentence",
                        [](RunConfig& c) -> int& { return c.corpus.max_symbols; }));
  f.push_back(real_field("corpus", "stress_fraction", "share of sentences with repeated symbols",
                         [](RunConfig& c) -> double& { return c.corpus.stress_fraction; }));
  f.push_back(real_field("corpus", "phoneme_fraction", "share of sentences under the phoneme prompt",
                         [](RunConfig& c) -> double& { return c.corpus.phoneme_fraction; }));
  f.push_back(int_field("corpus", "train_count", "training sentences",
                        [](RunConfig& c) -> int& { return c.train_count; }));
  f.push_back(int_field("corpus", "eval_count", "evaluation sentences",
                        [](RunConfig& c) -> int& { return c.eval_count; }));
  return f;
}

}  // namespace

void RunConfig::resolve() {
  train.seed = seed;
  corpus.m = model.bits;
  corpus.codebooks = model.codebooks;
  try {
    model.validate();
    train.validate();
    sampler.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train_count < 1 || eval_count < 0) throw ConfigError("corpus: train_count must be >= 1, eval_count >= 0");
}

const std::vector<ConfigField>& run_config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

void set_config_value(RunConfig& cfg, const std::string& name, const std::string& value) {
  for (const auto& f : run_config_fields()) {
    if (f.name() == name) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + name + "'");
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside of a [section]");
    try {
      set_config_value(base, section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_run_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : run_config_fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void write_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << format_run_config(cfg);
}

}  // namespace t5tts
