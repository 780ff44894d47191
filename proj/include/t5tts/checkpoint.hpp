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

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "t5tts/autodiff.hpp"
#include "t5tts/model.hpp"

namespace t5tts {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary layout (little endian):
///   magic "T5TTSCKP", u32 version, u64 config length, config text,
///   u64 tensor count, then per tensor: u64 name length, name, u32 rank,
///   rank x i64 dims, numel x f32.
/// Parameters come first in ModelParams::named() order; extras (optimizer
/// state, counters) follow under their own names.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  ModelParams<float> params;
  std::map<std::string, ad::Tensor> extras;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams<float>& params,
                     const std::map<std::string, ad::Tensor>& extras = {});

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and checks that the stored config equals `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace t5tts
