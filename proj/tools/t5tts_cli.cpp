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

// Command-line entry point: corpus generation, training, inference,
// evaluation, prior export and attention inspection.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "t5tts/alignment.hpp"
#include "t5tts/checkpoint.hpp"
#include "t5tts/codec_data.hpp"
#include "t5tts/inference.hpp"
#include "t5tts/model.hpp"
#include "t5tts/random.hpp"
#include "t5tts/run_config.hpp"
#include "t5tts/trainer.hpp"

namespace fs = std::filesystem;
using namespace t5tts;
using json = nlohmann::json;

namespace {

// T5TTS_LOG_LEVEL: 0 = errors only, 1 = progress (default), 2 = per-step detail.
int log_level() {
  static const int level = [] {
    const char* env = std::getenv("T5TTS_LOG_LEVEL");
    if (env == nullptr) return 1;
    const std::string v = env;
    if (v == "quiet" || v == "error") return 0;
    if (v == "debug") return 2;
    if (v == "info") return 1;
    try {
      return std::stoi(v);
    } catch (...) {
      return 1;
    }
  }();
  return level;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << "\n";
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

/// Collects "--section.key" overrides for the given config sections.
struct Overrides {
  std::optional<std::string> config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app, std::initializer_list<const char*> sections) {
    app.add_option("--config", config_path, "config file with [section] key = value lines");
    const RunConfig defaults;
    app.add_option_function<std::uint64_t>(
        "--seed", [this](const std::uint64_t& v) { values["run.seed"] = std::to_string(v); },
        "root seed (same as --run.seed) [default: " + std::to_string(defaults.seed) + "]");
    for (const auto& f : run_config_fields()) {
      bool wanted = false;
      for (const char* s : sections) wanted = wanted || f.section == s;
      if (!wanted) continue;
      const std::string name = f.name();
      app.add_option_function<std::string>(
          "--" + name, [this, name](const std::string& v) { values[name] = v; },
          f.doc + " [default: " + f.get(defaults) + "]");
    }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (config_path) cfg = load_run_config(*config_path, cfg);
    for (const auto& [k, v] : values) set_config_value(cfg, k, v);
    cfg.resolve();
    return cfg;
  }
};

struct CorpusFiles {
  Vocabulary vocab;
  SyntheticSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> eval;
};

CorpusFiles read_corpus(const fs::path& dir, bool need_train = true) {
  CorpusFiles c{Vocabulary::load(dir / "vocab.txt"), SyntheticSpec::load(dir / "spec.json"), {}, {}};
  if (need_train) c.train = read_dataset(dir / "train.jsonl");
  if (fs::exists(dir / "eval.jsonl")) c.eval = read_dataset(dir / "eval.jsonl");
  return c;
}

void check_compatible(const RunConfig& cfg, const CorpusFiles& corpus) {
  if (cfg.model.text_vocab_size != corpus.vocab.size()) {
    throw std::runtime_error("model.text_vocab_size = " + std::to_string(cfg.model.text_vocab_size) +
                             " but the corpus vocabulary has " + std::to_string(corpus.vocab.size()) + " tokens");
  }
  if (cfg.model.bits != corpus.spec.m || cfg.model.codebooks != corpus.spec.codebooks) {
    throw std::runtime_error("model expects " + std::to_string(cfg.model.codebooks) + " codebooks of " +
                             std::to_string(cfg.model.bits) + " bits; corpus has " +
                             std::to_string(corpus.spec.codebooks) + " of " + std::to_string(corpus.spec.m));
  }
}

void write_matrix_csv(const fs::path& path, const align::Matrix<double>& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) os << ",";
      os << fmt(static_cast<float>(m(r, c)), "%.8f");
    }
    os << "\n";
  }
}

/// Binary 8-bit graymap, values scaled so the matrix maximum is white.
void write_pgm(const fs::path& path, const align::Matrix<double>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const double top = m.maxCoeff() > 0.0 ? m.maxCoeff() : 1.0;
  os << "P5\n" << m.cols() << " " << m.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = std::clamp(m(r, c) / top, 0.0, 1.0);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
}

json codes_json(const CodeMatrix& c) {
  json rows = json::array();
  for (Eigen::Index t = 0; t < c.frames(); ++t) {
    json row = json::array();
    for (Eigen::Index i = 0; i < c.codebooks(); ++i) row.push_back(c.codes(t, i));
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------

int cmd_gen_corpus(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  const Vocabulary vocab(cfg.corpus.symbol_count);
  const SyntheticSpec spec = SyntheticSpec::generate(cfg.corpus, cfg.seed);
  auto samples = generate_synthetic_corpus(spec, vocab, cfg.train_count + cfg.eval_count, cfg.seed);
  const std::vector<Sample> train(samples.begin(), samples.begin() + cfg.train_count);
  const std::vector<Sample> eval(samples.begin() + cfg.train_count, samples.end());
  vocab.save(out / "vocab.txt");
  spec.save(out / "spec.json");
  write_dataset(out / "train.jsonl", train);
  write_dataset(out / "eval.jsonl", eval);
  write_run_config(out / "resolved_config.ini", cfg);
  info("wrote " + std::to_string(train.size()) + " train and " + std::to_string(eval.size()) +
       " eval samples to " + out.string());
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& data, const fs::path& out,
              const std::optional<fs::path>& resume) {
  const CorpusFiles corpus = read_corpus(data);
  check_compatible(cfg, corpus);
  fs::create_directories(out);
  write_run_config(out / "resolved_config.ini", cfg);
  std::optional<EvalSetup> eval;
  if (!corpus.eval.empty()) eval = EvalSetup{&corpus.eval, &corpus.spec, &corpus.vocab, cfg.sampler};
  info("training " + std::to_string(cfg.model.parameter_count()) + " parameters for " +
       std::to_string(cfg.train.steps) + " steps on " + std::to_string(corpus.train.size()) + " samples");
  const TrainResult r = train(corpus.train, cfg.train, cfg.model, out, eval, resume);
  if (!r.rows.empty()) {
    const auto& last = r.rows.back();
    info("step " + std::to_string(last.step) + ": L_total " + fmt(last.total_loss) + ", L_CE " +
         fmt(last.ce_loss) + ", L_align " + fmt(last.align_loss));
  }
  for (const auto& e : r.evals) info(eval_header() + "\n" + eval_line(e));
  return 0;
}

int cmd_infer(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data, const std::string& text,
              const std::string& scheme, const std::string& task, int speaker, const std::optional<fs::path>& out) {
  const CorpusFiles corpus = read_corpus(data, false);
  const Checkpoint ck = load_checkpoint(checkpoint);
  const TextSequence question = corpus.vocab.tokenize(text, parse_text_scheme(scheme), parse_task_prompt(task));
  const CodeMatrix context = corpus.spec.context_for(speaker);
  std::mt19937_64 rng(substream(cfg.seed, Stream::kSampling));
  const InferenceResult res = infer(ck.params, ck.config, question, context, cfg.sampler, rng);
  const std::vector<int> decoded = corpus.spec.decode(res.codes);
  std::string rendered;
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    if (i > 0) rendered += " ";
    rendered += decoded[i] < 0 ? std::string("?") : corpus.vocab.symbol_phoneme(decoded[i]);
  }
  json rec = {{"text", text},
              {"question_ids", question.ids},
              {"m", res.codes.m},
              {"N", ck.config.codebooks},
              {"codes", codes_json(res.codes)},
              {"truncated", res.truncated},
              {"decoded_symbols", decoded},
              {"decoded", rendered}};
  if (out) {
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    std::ofstream os(*out);
    if (!os) throw std::runtime_error("cannot write " + out->string());
    os << rec.dump() << "\n";
    fs::path cfg_path = *out;
    cfg_path += ".config.ini";
    write_run_config(cfg_path, cfg);
  }
  std::cout << rendered << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data, const std::string& split,
             int limit, const fs::path& out) {
  CorpusFiles corpus = read_corpus(data, split == "train");
  std::vector<Sample>& samples = split == "train" ? corpus.train : corpus.eval;
  if (split != "train" && split != "eval") throw std::runtime_error("unknown split '" + split + "'");
  if (limit > 0 && static_cast<std::size_t>(limit) < samples.size()) samples.resize(static_cast<std::size_t>(limit));
  if (samples.empty()) throw std::runtime_error("no samples in split '" + split + "'");
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto heads = align::parse_head_set(cfg.train.head_set, ck.config.layers, ck.config.heads);
  const EvalMetrics m = evaluate(ck.params, ck.config, samples, corpus.spec, corpus.vocab, cfg.sampler, heads, cfg.seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot write " + out.string());
  os << eval_header() << "\n" << eval_line({0, m}) << "\n";
  fs::path cfg_path = out;
  cfg_path += ".config.ini";
  write_run_config(cfg_path, cfg);
  info("SER " + fmt(m.symbol_error_rate) + ", repeats " + std::to_string(m.repeats) + ", misses " +
       std::to_string(m.misses) + ", diagonality " + fmt(m.diagonality));
  return 0;
}

int cmd_export_prior(const RunConfig& cfg, std::int64_t answer_len, std::int64_t question_len, int step,
                     const fs::path& prefix) {
  const auto prior = align::beta_binomial_prior<double>(answer_len, question_len, cfg.train.prior_omega);
  auto annealed = align::anneal_prior(prior, step, cfg.train.prior_start, cfg.train.prior_end);
  if (!annealed) {
    info("step " + std::to_string(step) + " is past the anneal window; the prior is removed (all-ones written)");
    annealed = align::Matrix<double>::Ones(answer_len, question_len);
  }
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  fs::path csv = prefix, pgm = prefix, ini = prefix;
  csv += ".csv";
  pgm += ".pgm";
  ini += ".config.ini";
  write_matrix_csv(csv, *annealed);
  write_pgm(pgm, *annealed);
  write_run_config(ini, cfg);
  info("wrote " + csv.string() + " and " + pgm.string());
  return 0;
}

int cmd_inspect_attn(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data, const std::string& split,
                     int index, const fs::path& out) {
  const CorpusFiles corpus = read_corpus(data, split == "train");
  const std::vector<Sample>& samples = split == "train" ? corpus.train : corpus.eval;
  if (index < 0 || static_cast<std::size_t>(index) >= samples.size()) {
    throw std::runtime_error("sample index " + std::to_string(index) + " outside split '" + split + "' of " +
                             std::to_string(samples.size()));
  }
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Sample& s = samples[static_cast<std::size_t>(index)];
  const Sample* ptr = &s;
  const Batch batch = make_batch(std::span<const Sample* const>(&ptr, 1), ck.config);
  ad::NoGradGuard no_grad;
  const auto fwd = forward(ck.params, ck.config, batch, {});
  fs::create_directories(out);
  const auto& slice = batch.slices[0];
  std::ofstream summary(out / "summary.csv");
  std::ofstream paths(out / "viterbi.csv");
  if (!summary || !paths) throw std::runtime_error("cannot write into " + out.string());
  summary << "layer,head,diagonality,forward_sum_loss\n";
  paths << "layer,head,path\n";
  for (int l = 0; l < ck.config.layers; ++l) {
    for (int h = 0; h < ck.config.heads; ++h) {
      const auto& scores = fwd.capture.at(l, h).value();
      Eigen::Map<const align::Matrix<float>> full(scores.data(), batch.decoder_len, batch.encoder_len);
      const align::Matrix<double> soft = align::soft_alignment(full, slice).cast<double>();
      const std::string stem = "layer" + std::to_string(l) + "_head" + std::to_string(h);
      write_matrix_csv(out / (stem + ".csv"), soft);
      write_pgm(out / (stem + ".pgm"), soft);
      const auto diag = align::diagnose(soft);
      summary << l << "," << h << "," << fmt(diag.diagonality) << "," << fmt(align::forward_sum_loss(soft)) << "\n";
      paths << l << "," << h << ",";
      for (std::size_t t = 0; t < diag.viterbi_path.size(); ++t) {
        paths << (t > 0 ? " " : "") << diag.viterbi_path[t];
      }
      paths << "\n";
    }
  }
  write_run_config(out / "resolved_config.ini", cfg);
  info("wrote " + std::to_string(ck.config.layers * ck.config.heads) + " head maps to " + out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"t5tts: desk-scale text-to-codes transformer with monotonic alignment learning"};
  app.require_subcommand(1);

  std::string out, data, checkpoint, text, split = "eval", scheme = "synthetic_symbol", task = "Text to Speech";
  std::optional<std::string> resume, infer_out;
  int speaker = 0, limit = 0, index = 0, step = 0;
  std::int64_t answer_len = 0, question_len = 0;

  Overrides gen_o, train_o, infer_o, eval_o, prior_o, attn_o;

  auto* gen = app.add_subcommand("gen-corpus", "write a seeded synthetic corpus");
  gen->add_option("--out", out, "output directory")->required();
  gen_o.attach(*gen, {"corpus", "model"});

  auto* tr = app.add_subcommand("train", "train a model on a corpus directory");
  tr->add_option("--data", data, "corpus directory from gen-corpus")->required();
  tr->add_option("--out", out, "run directory")->required();
  tr->add_option("--resume", resume, "checkpoint to continue from");
  train_o.attach(*tr, {"model", "train", "sampler"});

  auto* inf = app.add_subcommand("infer", "generate codes for one text");
  inf->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  inf->add_option("--data", data, "corpus directory (vocabulary and code tables)")->required();
  inf->add_option("--text", text, "input text (symbol tokens separated by spaces, or characters)")->required();
  inf->add_option("--scheme", scheme, "char_tts or synthetic_symbol")->capture_default_str();
  inf->add_option("--task", task, "'Text to Speech' or 'Phoneme TTS'")->capture_default_str();
  inf->add_option("--speaker", speaker, "speaker context index")->capture_default_str();
  inf->add_option("--out", infer_out, "JSON record output");
  infer_o.attach(*inf, {"sampler"});

  auto* ev = app.add_subcommand("eval", "symbol error rate, repeats, misses and diagonality");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--data", data, "corpus directory")->required();
  ev->add_option("--split", split, "eval or train")->capture_default_str();
  ev->add_option("--limit", limit, "evaluate at most this many samples (0 = all)")->capture_default_str();
  ev->add_option("--out", out, "metrics CSV")->required();
  eval_o.attach(*ev, {"sampler", "train"});

  auto* pr = app.add_subcommand("export-prior", "write a (possibly annealed) prior as CSV and PGM");
  pr->add_option("--answer-len", answer_len, "answer frames (rows)")->required()->check(CLI::PositiveNumber);
  pr->add_option("--question-len", question_len, "question tokens (columns)")->required()->check(CLI::PositiveNumber);
  pr->add_option("--step", step, "training step for the anneal schedule")->capture_default_str();
  pr->add_option("--out", out, "output path prefix")->required();
  prior_o.attach(*pr, {"train"});

  auto* at = app.add_subcommand("inspect-attn", "dump per-head soft alignments for one sample");
  at->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  at->add_option("--data", data, "corpus directory")->required();
  at->add_option("--split", split, "eval or train")->capture_default_str();
  at->add_option("--index", index, "sample index in the split")->capture_default_str();
  at->add_option("--out", out, "output directory")->required();
  attn_o.attach(*at, {"train"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_corpus(gen_o.resolve(), out);
    if (tr->parsed()) return cmd_train(train_o.resolve(), data, out, resume ? std::optional<fs::path>(*resume) : std::nullopt);
    if (inf->parsed()) {
      return cmd_infer(infer_o.resolve(), checkpoint, data, text, scheme, task, speaker,
                       infer_out ? std::optional<fs::path>(*infer_out) : std::nullopt);
    }
    if (ev->parsed()) return cmd_eval(eval_o.resolve(), checkpoint, data, split, limit, out);
    if (pr->parsed()) return cmd_export_prior(prior_o.resolve(), answer_len, question_len, step, out);
    if (at->parsed()) return cmd_inspect_attn(attn_o.resolve(), checkpoint, data, split, index, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
