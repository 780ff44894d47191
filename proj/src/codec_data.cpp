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

#include "t5tts/codec_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "t5tts/random.hpp"

namespace t5tts {

using nlohmann::json;

namespace {

constexpr const char* kCharAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ";

json codes_to_json(const CodeArray& c) {
  json rows = json::array();
  for (Eigen::Index t = 0; t < c.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index i = 0; i < c.cols(); ++i) row.push_back(c(t, i));
    rows.push_back(std::move(row));
  }
  return rows;
}

CodeArray codes_from_json(const json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty() || !rows[0].is_array() || rows[0].empty()) {
    throw std::invalid_argument(what + " must be a non-empty array of non-empty rows");
  }
  CodeArray c(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (!rows[t].is_array() || rows[t].size() != rows[0].size()) {
      throw std::invalid_argument(what + " has ragged rows");
    }
    for (std::size_t i = 0; i < rows[t].size(); ++i) {
      c(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = rows[t][i].get<std::int32_t>();
    }
  }
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// CodeMatrix and the delay pattern

void CodeMatrix::validate() const {
  if (m < 1 || m > 16) throw std::invalid_argument("CodeMatrix: bit width " + std::to_string(m) + " outside [1, 16]");
  if (codes.rows() < 1 || codes.cols() < 1) throw std::invalid_argument("CodeMatrix: empty matrix");
  const auto hi = eos_code(m);
  if (codes.minCoeff() < 0 || codes.maxCoeff() > hi) {
    throw std::invalid_argument("CodeMatrix: code outside [0, " + std::to_string(hi) + "]");
  }
}

CodeMatrix delay_encode(const CodeMatrix& c) {
  c.validate();
  const auto frames = c.frames();
  const auto books = c.codebooks();
  CodeArray out = CodeArray::Constant(frames + books - 1, books, pad_code(c.m));
  for (Eigen::Index i = 0; i < books; ++i) out.block(i, i, frames, 1) = c.codes.col(i);
  return {std::move(out), c.m};
}

CodeMatrix delay_decode(const CodeMatrix& c) {
  c.validate();
  const auto books = c.codebooks();
  const auto frames = c.frames() - books + 1;
  if (frames < 1) {
    throw MalformedStreamError("delay_decode: " + std::to_string(c.frames()) + " rows cannot hold " +
                               std::to_string(books) + " delayed codebooks");
  }
  CodeArray out(frames, books);
  for (Eigen::Index i = 0; i < books; ++i) {
    for (Eigen::Index t = 0; t < frames; ++t) {
      const auto v = c.codes(t + i, i);
      if (v == pad_code(c.m)) {
        throw MalformedStreamError("delay_decode: PAD at row " + std::to_string(t + i) + ", codebook " +
                                   std::to_string(i));
      }
      out(t, i) = v;
    }
  }
  return {std::move(out), c.m};
}

// ---------------------------------------------------------------------------
// Text

std::string to_string(TextScheme s) { return s == TextScheme::kChar ? "char_tts" : "synthetic_symbol"; }
std::string to_string(TaskPrompt t) {
  return t == TaskPrompt::kTextToSpeech ? "Text to Speech" : "Phoneme TTS";
}

TextScheme parse_text_scheme(const std::string& s) {
  if (s == "char_tts") return TextScheme::kChar;
  if (s == "synthetic_symbol") return TextScheme::kSymbol;
  throw std::invalid_argument("unknown text scheme '" + s + "' (expected char_tts or synthetic_symbol)");
}

TaskPrompt parse_task_prompt(const std::string& s) {
  if (s == "Text to Speech") return TaskPrompt::kTextToSpeech;
  if (s == "Phoneme TTS") return TaskPrompt::kPhonemeTts;
  throw std::invalid_argument("unknown task prompt '" + s + "' (expected \"Text to Speech\" or \"Phoneme TTS\")");
}

Vocabulary::Vocabulary(int symbol_count) : symbol_count_(symbol_count) {
  if (symbol_count < 1 || symbol_count > kMaxSymbols) {
    throw std::invalid_argument("Vocabulary: symbol count must be in [1, " + std::to_string(kMaxSymbols) + "]");
  }
  tokens_ = {"<pad>", "<text>", "<phoneme>", "<speech>"};
  first_char_ = static_cast<std::int32_t>(tokens_.size());
  for (int s = 0; s < symbol_count; ++s) tokens_.emplace_back(1, kCharAlphabet[s]);
  first_phoneme_ = static_cast<std::int32_t>(tokens_.size());
  for (int s = 0; s < symbol_count; ++s) tokens_.push_back(symbol_phoneme(s));
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<std::int32_t>(i);
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::int32_t Vocabulary::id(const std::string& tok) const {
  auto it = index_.find(tok);
  if (it == index_.end()) throw UnknownTokenError("unknown token '" + tok + "'");
  return it->second;
}

std::vector<std::int32_t> Vocabulary::prompt_ids(TaskPrompt task) const {
  return {task == TaskPrompt::kTextToSpeech ? 1 : 2, 3};
}

char Vocabulary::symbol_char(int symbol) const { return kCharAlphabet[symbol]; }

std::string Vocabulary::symbol_phoneme(int symbol) const {
  char buf[8];
  std::snprintf(buf, sizeof buf, "P%02d", symbol);
  return buf;
}

TextSequence Vocabulary::tokenize(const std::string& text, TextScheme scheme, TaskPrompt task) const {
  TextSequence seq;
  seq.scheme = scheme;
  seq.task = task;
  seq.ids = prompt_ids(task);
  if (scheme == TextScheme::kChar) {
    std::string unknown;
    for (char ch : text) {
      auto it = index_.find(std::string(1, ch));
      if (it == index_.end() || it->second < first_char_ || it->second >= first_phoneme_) {
        if (unknown.find(ch) == std::string::npos) unknown += ch;
        continue;
      }
      seq.ids.push_back(it->second);
    }
    if (!unknown.empty()) throw UnknownTokenError("unknown character(s) in text: '" + unknown + "'");
  } else {
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
      auto it = index_.find(tok);
      if (it == index_.end() || it->second < first_phoneme_) throw UnknownTokenError("unknown symbol '" + tok + "'");
      seq.ids.push_back(it->second);
    }
  }
  if (seq.ids.size() == static_cast<std::size_t>(kPromptLength)) {
    throw std::invalid_argument("tokenize: empty text");
  }
  return seq;
}

std::vector<int> Vocabulary::symbols(const TextSequence& seq) const {
  std::vector<int> out;
  for (std::size_t i = kPromptLength; i < seq.ids.size(); ++i) {
    const auto id = seq.ids[i];
    if (id >= first_char_ && id < first_phoneme_) {
      out.push_back(id - first_char_);
    } else if (id >= first_phoneme_ && id < size()) {
      out.push_back(id - first_phoneme_);
    } else {
      throw std::invalid_argument("symbols: id " + std::to_string(id) + " is not a text token");
    }
  }
  return out;
}

std::string Vocabulary::render(const std::vector<int>& syms, TextScheme scheme) const {
  std::string out;
  for (int s : syms) {
    if (scheme == TextScheme::kChar) {
      out += symbol_char(s);
    } else {
      if (!out.empty()) out += ' ';
      out += symbol_phoneme(s);
    }
  }
  return out;
}

std::string Vocabulary::detokenize(const TextSequence& seq) const {
  return render(symbols(seq), seq.scheme);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write vocabulary " + path.string());
  os << "t5tts-vocab " << kFormatVersion << " symbols=" << symbol_count_ << "\n";
  for (std::size_t i = 0; i < tokens_.size(); ++i) os << i << '\t' << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read vocabulary " + path.string());
  std::string magic;
  int version = 0;
  std::string symbols;
  is >> magic >> version >> symbols;
  if (magic != "t5tts-vocab" || version != kFormatVersion || symbols.rfind("symbols=", 0) != 0) {
    throw std::runtime_error(path.string() + ": not a version " + std::to_string(kFormatVersion) +
                             " vocabulary file");
  }
  Vocabulary v(std::stoi(symbols.substr(8)));
  std::string line;
  std::getline(is, line);
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || std::stoul(line.substr(0, tab)) != n || n >= v.tokens_.size() ||
        line.substr(tab + 1) != v.tokens_[n]) {
      throw std::runtime_error(path.string() + ": vocabulary table does not match header");
    }
    ++n;
  }
  if (n != v.tokens_.size()) throw std::runtime_error(path.string() + ": truncated vocabulary table");
  return v;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

SyntheticSpec SyntheticSpec::generate(const SyntheticSpec& shape, std::uint64_t seed) {
  SyntheticSpec spec = shape;
  if (spec.symbol_count > (1 << spec.m)) {
    throw std::invalid_argument("SyntheticSpec: more symbols than codes in a codebook");
  }
  std::mt19937_64 rng(substream(seed, Stream::kCorpusTables));
  std::uniform_int_distribution<int> dur(2, 4);
  std::uniform_int_distribution<std::int32_t> code(0, (1 << spec.m) - 1);
  spec.durations.resize(static_cast<std::size_t>(spec.symbol_count));
  for (auto& d : spec.durations) d = dur(rng);

  std::vector<std::int32_t> perm(static_cast<std::size_t>(1 << spec.m));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  spec.code_map.resize(spec.symbol_count, spec.codebooks);
  for (int s = 0; s < spec.symbol_count; ++s) {
    spec.code_map(s, 0) = perm[static_cast<std::size_t>(s)];
    for (int i = 1; i < spec.codebooks; ++i) spec.code_map(s, i) = code(rng);
  }
  spec.speaker_context.resize(spec.speakers * spec.context_frames, spec.codebooks);
  for (Eigen::Index r = 0; r < spec.speaker_context.rows(); ++r) {
    for (Eigen::Index i = 0; i < spec.codebooks; ++i) spec.speaker_context(r, i) = code(rng);
  }
  spec.validate();
  return spec;
}

void SyntheticSpec::validate() const {
  if (symbol_count < 1 || m < 1 || codebooks < 1 || context_frames < 0 || speakers < 1 || min_symbols < 1 ||
      max_symbols < min_symbols || stress_fraction < 0.0 || stress_fraction > 1.0 || phoneme_fraction < 0.0 ||
      phoneme_fraction > 1.0) {
    throw std::invalid_argument("SyntheticSpec: inconsistent configuration");
  }
  if (static_cast<int>(durations.size()) != symbol_count ||
      std::any_of(durations.begin(), durations.end(), [](int d) { return d < 1; })) {
    throw std::invalid_argument("SyntheticSpec: need one duration >= 1 per symbol");
  }
  if (code_map.rows() != symbol_count || code_map.cols() != codebooks || code_map.minCoeff() < 0 ||
      code_map.maxCoeff() >= (1 << m)) {
    throw std::invalid_argument("SyntheticSpec: code map must be symbols x codebooks with codes in [0, 2^m)");
  }
}

CodeMatrix SyntheticSpec::expand(const std::vector<int>& symbols) const {
  std::int64_t frames = 1;
  for (int s : symbols) frames += durations.at(static_cast<std::size_t>(s));
  CodeArray c(frames, codebooks);
  Eigen::Index t = 0;
  for (int s : symbols) {
    for (int k = 0; k < durations[static_cast<std::size_t>(s)]; ++k) c.row(t++) = code_map.row(s);
  }
  c.row(t).setConstant(eos_code(m));
  return {std::move(c), m};
}

CodeMatrix SyntheticSpec::context_for(int speaker) const {
  return {speaker_context.block(speaker * context_frames, 0, context_frames, codebooks), m};
}

std::vector<int> SyntheticSpec::ground_truth_alignment(const std::vector<int>& symbols) const {
  std::vector<int> map;
  for (std::size_t p = 0; p < symbols.size(); ++p) {
    map.insert(map.end(), static_cast<std::size_t>(durations.at(static_cast<std::size_t>(symbols[p]))),
               static_cast<int>(p));
  }
  map.push_back(static_cast<int>(symbols.size()) - 1);
  return map;
}

std::vector<int> SyntheticSpec::decode(const CodeMatrix& frames) const {
  std::vector<int> per_frame;
  for (Eigen::Index t = 0; t < frames.frames(); ++t) {
    int best = -1;
    int best_votes = 0;
    for (int s = 0; s < symbol_count; ++s) {
      int votes = 0;
      for (Eigen::Index i = 0; i < std::min<Eigen::Index>(frames.codebooks(), codebooks); ++i) {
        votes += frames.codes(t, i) == code_map(s, i) ? 1 : 0;
      }
      if (votes > best_votes) {
        best = s;
        best_votes = votes;
      }
    }
    per_frame.push_back(best);
  }
  std::vector<int> out;
  for (std::size_t t = 0; t < per_frame.size();) {
    std::size_t end = t;
    while (end < per_frame.size() && per_frame[end] == per_frame[t]) ++end;
    const int s = per_frame[t];
    const int run = static_cast<int>(end - t);
    const int reps = s < 0 ? 1
                           : std::max(1, static_cast<int>(std::lround(static_cast<double>(run) /
                                                                      durations[static_cast<std::size_t>(s)])));
    out.insert(out.end(), static_cast<std::size_t>(reps), s);
    t = end;
  }
  return out;
}

void SyntheticSpec::save(const std::filesystem::path& path) const {
  json j = {{"format", "t5tts-synthetic-spec"},
            {"version", 1},
            {"symbol_count", symbol_count},
            {"m", m},
            {"codebooks", codebooks},
            {"context_frames", context_frames},
            {"speakers", speakers},
            {"min_symbols", min_symbols},
            {"max_symbols", max_symbols},
            {"stress_fraction", stress_fraction},
            {"phoneme_fraction", phoneme_fraction},
            {"durations", durations},
            {"code_map", codes_to_json(code_map)},
            {"speaker_context", codes_to_json(speaker_context)}};
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write synthetic spec " + path.string());
  os << j.dump(1) << '\n';
}

SyntheticSpec SyntheticSpec::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read synthetic spec " + path.string());
  try {
    json j = json::parse(is);
    SyntheticSpec s;
    s.symbol_count = j.at("symbol_count").get<int>();
    s.m = j.at("m").get<int>();
    s.codebooks = j.at("codebooks").get<int>();
    s.context_frames = j.at("context_frames").get<int>();
    s.speakers = j.at("speakers").get<int>();
    s.min_symbols = j.at("min_symbols").get<int>();
    s.max_symbols = j.at("max_symbols").get<int>();
    s.stress_fraction = j.at("stress_fraction").get<double>();
    s.phoneme_fraction = j.at("phoneme_fraction").get<double>();
    s.durations = j.at("durations").get<std::vector<int>>();
    s.code_map = codes_from_json(j.at("code_map"), "code_map");
    if (s.context_frames > 0) s.speaker_context = codes_from_json(j.at("speaker_context"), "speaker_context");
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

bool SyntheticSpec::operator==(const SyntheticSpec& o) const {
  auto same = [](const CodeArray& a, const CodeArray& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  return symbol_count == o.symbol_count && m == o.m && codebooks == o.codebooks &&
         context_frames == o.context_frames && speakers == o.speakers && min_symbols == o.min_symbols &&
         max_symbols == o.max_symbols && stress_fraction == o.stress_fraction &&
         phoneme_fraction == o.phoneme_fraction && durations == o.durations && same(code_map, o.code_map) &&
         same(speaker_context, o.speaker_context);
}

bool is_stress_sentence(const std::vector<int>& symbols) {
  const std::size_t n = symbols.size();
  for (std::size_t i = 0; i + 2 < n; ++i) {
    if (symbols[i] == symbols[i + 1] && symbols[i] == symbols[i + 2]) return true;
  }
  for (std::size_t i = 0; i + 4 < n; ++i) {
    if (symbols[i] == symbols[i + 2] && symbols[i] == symbols[i + 4]) return true;
  }
  return false;
}

std::vector<Sample> generate_synthetic_corpus(const SyntheticSpec& spec, const Vocabulary& vocab, int count,
                                              std::uint64_t seed) {
  spec.validate();
  if (count < 1) throw std::invalid_argument("generate_synthetic_corpus: count must be >= 1");
  if (vocab.symbol_count() != spec.symbol_count) {
    throw std::invalid_argument("generate_synthetic_corpus: vocabulary and spec disagree on symbol count");
  }
  std::mt19937_64 rng(substream(seed, Stream::kCorpusSentences));
  std::uniform_int_distribution<int> sym(0, spec.symbol_count - 1);
  std::uniform_int_distribution<int> speaker(0, spec.speakers - 1);
  std::bernoulli_distribution phoneme(spec.phoneme_fraction);

  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto stress_count = static_cast<int>(std::lround(spec.stress_fraction * count));
  std::vector<bool> stress(static_cast<std::size_t>(count), false);
  for (int k = 0; k < stress_count; ++k) stress[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = true;

  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    std::vector<int> symbols;
    if (stress[static_cast<std::size_t>(k)]) {
      const int lo = std::max(spec.min_symbols, 5);
      const int len = std::uniform_int_distribution<int>(lo, std::max(lo, spec.max_symbols))(rng);
      symbols.resize(static_cast<std::size_t>(len));
      for (auto& s : symbols) s = sym(rng);
      const int s = sym(rng);
      if (std::bernoulli_distribution(0.5)(rng)) {
        const int reps = std::uniform_int_distribution<int>(3, std::min(4, len))(rng);
        const int at = std::uniform_int_distribution<int>(0, len - reps)(rng);
        for (int r = 0; r < reps; ++r) symbols[static_cast<std::size_t>(at + r)] = s;
      } else {
        int other = sym(rng);
        while (other == s && spec.symbol_count > 1) other = sym(rng);
        const int at = std::uniform_int_distribution<int>(0, len - 5)(rng);
        for (int r = 0; r < 5; ++r) symbols[static_cast<std::size_t>(at + r)] = r % 2 == 0 ? s : other;
      }
    } else {
      const int len = std::uniform_int_distribution<int>(spec.min_symbols, spec.max_symbols)(rng);
      symbols.resize(static_cast<std::size_t>(len));
      for (auto& s : symbols) s = sym(rng);
    }
    const bool as_phoneme = phoneme(rng);
    const int spk = speaker(rng);
    const auto scheme = as_phoneme ? TextScheme::kSymbol : TextScheme::kChar;
    const auto task = as_phoneme ? TaskPrompt::kPhonemeTts : TaskPrompt::kTextToSpeech;

    Sample sample;
    sample.text = vocab.render(symbols, scheme);
    sample.question = vocab.tokenize(sample.text, scheme, task);
    sample.answer = spec.expand(symbols);
    sample.context = spec.context_frames > 0 ? spec.context_for(spk) : CodeMatrix(CodeArray(0, spec.codebooks), spec.m);
    sample.speaker_id = "spk" + std::to_string(spk);
    out.push_back(std::move(sample));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& s : samples) {
    s.answer.validate();
    json j = {{"text", s.text},
              {"scheme", to_string(s.question.scheme)},
              {"task", to_string(s.question.task)},
              {"question_ids", s.question.ids},
              {"context_codes", codes_to_json(s.context.codes)},
              {"answer_codes", codes_to_json(s.answer.codes)},
              {"speaker_id", s.speaker_id},
              {"m", s.answer.m},
              {"N", s.answer.codebooks()}};
    os << j.dump() << '\n';
  }
  if (!os) throw std::runtime_error("failed writing dataset " + path.string());
}

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read dataset " + path.string());
  std::vector<Sample> out;
  std::string line;
  int line_no = 0;
  int first_m = -1;
  Eigen::Index first_n = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DatasetParseError(where + ": malformed record: " + e.what());
    }
    for (const char* field : {"text", "question_ids", "context_codes", "answer_codes", "speaker_id", "m", "N"}) {
      if (!j.contains(field)) throw DatasetParseError(where + ": missing field '" + field + "'");
    }
    Sample s;
    try {
      s.text = j["text"].get<std::string>();
      s.question.ids = j["question_ids"].get<std::vector<std::int32_t>>();
      s.question.scheme = parse_text_scheme(j.value("scheme", std::string("char_tts")));
      s.question.task = parse_task_prompt(j.value("task", std::string("Text to Speech")));
      s.speaker_id = j["speaker_id"].get<std::string>();
      const int m = j["m"].get<int>();
      const auto n = j["N"].get<Eigen::Index>();
      s.answer = CodeMatrix(codes_from_json(j["answer_codes"], "answer_codes"), m);
      const auto& ctx = j["context_codes"];
      s.context = ctx.empty() ? CodeMatrix(CodeArray(0, n), m) : CodeMatrix(codes_from_json(ctx, "context_codes"), m);
      s.answer.validate();
      if (s.context.frames() > 0) s.context.validate();
      if (s.answer.codebooks() != n || s.context.codebooks() != n) {
        throw std::invalid_argument("codebook count disagrees with N=" + std::to_string(n));
      }
      if (s.question.ids.size() <= static_cast<std::size_t>(Vocabulary::kPromptLength)) {
        throw std::invalid_argument("question_ids holds no text after the prompt");
      }
      if (first_m < 0) {
        first_m = m;
        first_n = n;
      } else if (m != first_m || n != first_n) {
        throw std::invalid_argument("m/N (" + std::to_string(m) + "/" + std::to_string(n) +
                                    ") differ from first record (" + std::to_string(first_m) + "/" +
                                    std::to_string(first_n) + ")");
      }
    } catch (const DatasetParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw DatasetParseError(where + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace t5tts
