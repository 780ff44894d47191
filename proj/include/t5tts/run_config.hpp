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
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "t5tts/codec_data.hpp"
#include "t5tts/inference.hpp"
#include "t5tts/model.hpp"
#include "t5tts/trainer.hpp"

namespace t5tts {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a CLI run can be configured with. `seed` is the single root
/// seed; the training seed is taken from it.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  SyntheticSpec corpus;
  int train_count = 512;
  int eval_count = 64;

  /// Copies the root seed into the sub-configs and checks every invariant.
  void resolve();
};

struct ConfigField {
  std::string section;
  std::string key;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;

  std::string name() const { return section + "." + key; }
};

/// Every configurable field in file order.
const std::vector<ConfigField>& run_config_fields();

/// Sets "section.key"; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& name, const std::string& value);

/// Parses "[section]" headers and "key = value" lines ('#' starts a comment)
/// on top of `base`.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Full config in the same format, every field listed.
std::string format_run_config(const RunConfig& cfg);
void write_run_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace t5tts
