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
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace t5tts {

using CodeArray = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Special codes live above the 2^m acoustic codes of every codebook.
constexpr std::int32_t pad_code(int m) { return (1 << m); }
constexpr std::int32_t bos_code(int m) { return (1 << m) + 1; }
constexpr std::int32_t eos_code(int m) { return (1 << m) + 2; }
/// Per-codebook vocabulary size including PAD/BOS/EOS.
constexpr std::int32_t code_vocab_size(int m) { return (1 << m) + 3; }

/// T x N matrix of m-bit codes (rows are frames, columns codebooks).
struct CodeMatrix {
  CodeArray codes;
  int m = 10;

  CodeMatrix() = default;
  CodeMatrix(CodeArray c, int bits) : codes(std::move(c)), m(bits) {}

  Eigen::Index frames() const { return codes.rows(); }
  Eigen::Index codebooks() const { return codes.cols(); }
  /// Throws std::invalid_argument when a type invariant is broken.
  void validate() const;

  bool operator==(const CodeMatrix& o) const {
    return m == o.m && codes.rows() == o.codes.rows() && codes.cols() == o.codes.cols() &&
           codes == o.codes;
  }
};

/// PAD found where the delay pattern puts a real code.
class MalformedStreamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Codebook i is shifted down by i frames; output has T + N - 1 rows and PAD
/// in the margins.
CodeMatrix delay_encode(const CodeMatrix& c);
/// Exact inverse of delay_encode.
CodeMatrix delay_decode(const CodeMatrix& c);

enum class TextScheme { kChar, kSymbol };
enum class TaskPrompt { kTextToSpeech, kPhonemeTts };

std::string to_string(TextScheme s);
std::string to_string(TaskPrompt t);
TextScheme parse_text_scheme(const std::string& s);
TaskPrompt parse_task_prompt(const std::string& s);

struct TextSequence {
  std::vector<std::int32_t> ids;
  TextScheme scheme = TextScheme::kChar;
  TaskPrompt task = TaskPrompt::kTextToSpeech;

  bool operator==(const TextSequence&) const = default;
};

class UnknownTokenError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fixed text vocabulary: pad, two task prompts of two tokens each, one
/// character per synthetic symbol and one disjoint phoneme-like token
/// ("P00", "P01", ...) per symbol.
class Vocabulary {
 public:
  static constexpr int kFormatVersion = 1;
  static constexpr std::int32_t kPad = 0;
  static constexpr int kPromptLength = 2;
  static constexpr int kMaxSymbols = 62;

  explicit Vocabulary(int symbol_count = 32);

  int symbol_count() const { return symbol_count_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(std::int32_t id) const;
  std::int32_t id(const std::string& token) const;

  std::vector<std::int32_t> prompt_ids(TaskPrompt task) const;
  std::int32_t char_id(int symbol) const { return first_char_ + symbol; }
  std::int32_t phoneme_id(int symbol) const { return first_phoneme_ + symbol; }
  char symbol_char(int symbol) const;
  std::string symbol_phoneme(int symbol) const;

  /// prompt ids followed by one id per character (kChar) or per
  /// whitespace-separated token (kSymbol).
  TextSequence tokenize(const std::string& text, TextScheme scheme, TaskPrompt task) const;
  std::string detokenize(const TextSequence& seq) const;
  /// Synthetic symbol indices of the non-prompt tokens.
  std::vector<int> symbols(const TextSequence& seq) const;
  std::string render(const std::vector<int>& symbols, TextScheme scheme) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  int symbol_count_;
  std::int32_t first_char_;
  std::int32_t first_phoneme_;
  std::vector<std::string> tokens_;
  std::map<std::string, std::int32_t> index_;
};

struct Sample {
  std::string text;
  TextSequence question;
  CodeMatrix context;
  CodeMatrix answer;
  std::string speaker_id;

  bool operator==(const Sample&) const = default;
};

/// Deterministic text-to-code task: symbol s expands to durations[s] frames
/// whose codebook i value is code_map(s, i).
struct SyntheticSpec {
  int symbol_count = 32;
  int m = 6;
  int codebooks = 2;
  int context_frames = 8;
  int speakers = 4;
  int min_symbols = 3;
  int max_symbols = 8;
  double stress_fraction = 0.2;
  /// Share of sentences rendered as phoneme-like tokens under the Phoneme TTS prompt.
  double phoneme_fraction = 0.5;

  std::vector<int> durations;
  CodeArray code_map;
  /// speakers blocks of context_frames x codebooks codes, stacked vertically.
  CodeArray speaker_context;

  /// Draws durations in {2,3,4}, code maps (distinct on codebook 0) and
  /// speaker context blocks.
  static SyntheticSpec generate(const SyntheticSpec& shape, std::uint64_t seed);
  void validate() const;

  CodeMatrix expand(const std::vector<int>& symbols) const;
  CodeMatrix context_for(int speaker) const;
  /// Frame index -> symbol position for expand(symbols), EOS frame included.
  std::vector<int> ground_truth_alignment(const std::vector<int>& symbols) const;
  /// Inverse of expand on EOS-free frames: per-frame codebook vote, then each
  /// run of one symbol counts round(run / duration) occurrences. -1 marks an
  /// undecodable run.
  std::vector<int> decode(const CodeMatrix& frames) const;

  void save(const std::filesystem::path& path) const;
  static SyntheticSpec load(const std::filesystem::path& path);

  bool operator==(const SyntheticSpec& o) const;
};

/// A symbol repeated at least three times consecutively (s s s) or
/// alternately (s x s x s).
bool is_stress_sentence(const std::vector<int>& symbols);

std::vector<Sample> generate_synthetic_corpus(const SyntheticSpec& spec, const Vocabulary& vocab,
                                              int count, std::uint64_t seed);

class DatasetParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSON record per line.
void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::filesystem::path& path);

}  // namespace t5tts
