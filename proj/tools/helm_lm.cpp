// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

// helm-lm: command-line front end for the library pipelines.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "helmlm/checkpoint.hpp"
#include "helmlm/corpus.hpp"
#include "helmlm/encoder.hpp"
#include "helmlm/errors.hpp"
#include "helmlm/evaluation.hpp"
#include "helmlm/helm.hpp"
#include "helmlm/io.hpp"
#include "helmlm/splits.hpp"
#include "helmlm/statistics.hpp"
#include "helmlm/tokenizer.hpp"
#include "helmlm/training.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace helmlm;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// ---------------------------------------------------------------------------
// Global options, config file and run manifest

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config_path;
  std::string out = ".";
  std::string precision = "f32";
  std::vector<std::string> argv;
};

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// key = value lines; '#' or ';' start comments; [section] headers are
// allowed for readability and ignored.
std::map<std::string, std::string> read_config(const std::string& path) {
  std::map<std::string, std::string> kv;
  if (path.empty()) return kv;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ConfigError, path + ":" + std::to_string(no) + ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

class Manifest {
 public:
  Manifest(std::string command, const Globals& g) : command_(std::move(command)), globals_(g) {
    start_ = std::chrono::steady_clock::now();
    const std::time_t now = std::time(nullptr);
    std::ostringstream os;
    os << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    started_ = os.str();
  }

  void input(const fs::path& p) {
    inputs_.push_back({{"path", p.string()}, {"sha256", io::sha256_file(p)}});
  }
  void output(const fs::path& p) { outputs_.push_back(p); }
  json& config() { return config_; }
  json& summary() { return summary_; }

  // <dir>/<command>.manifest.json, written last so it only exists for
  // complete runs. Reports when a previous run with the same command and
  // config saw different input bytes.
  void write(const fs::path& dir) {
    json outs = json::array();
    for (const auto& p : outputs_) outs.push_back({{"path", p.string()}, {"sha256", io::sha256_file(p)}});
    std::string name = command_;
    std::replace(name.begin(), name.end(), ' ', '_');
    const fs::path path = dir / (name + ".manifest.json");
    json m = {{"command", command_},
              {"argv", globals_.argv},
              {"seed", globals_.seed},
              {"precision", globals_.precision},
              {"config", config_},
              {"inputs", inputs_},
              {"outputs", outs},
              {"summary", summary_},
              {"timings",
               {{"started_utc", started_},
                {"wall_seconds",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}}}};
    if (fs::exists(path)) {
      try {
        const json old = json::parse(io::read_file(path));
        if (old.value("config", json()) == config_ && old.value("seed", json()) == m["seed"] &&
            old.value("inputs", json()) != m["inputs"]) {
          std::cerr << "helm-lm: note: input hashes differ from the previous manifest at "
                    << path.string() << "\n";
        }
      } catch (const json::exception&) {
      }
    }
    io::write_file_atomic(path, m.dump(2) + "\n");
  }

 private:
  std::string command_;
  const Globals& globals_;
  std::chrono::steady_clock::time_point start_;
  std::string started_;
  json inputs_ = json::array();
  std::vector<fs::path> outputs_;
  json config_ = json::object();
  json summary_ = json::object();
};

fs::path out_dir(const Globals& g) {
  fs::create_directories(g.out);
  return fs::path(g.out);
}

void write_output(Manifest& m, const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, content);
  m.output(path);
}

std::string jsonl(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Settings routed from the config file

struct Settings {
  model::ModelConfig model;
  training::TrainRunConfig train;
  training::HeadSpec head;
  std::optional<training::HeadKind> head_kind;
  std::string task;
  std::string label;
  json snapshot = json::object();
};

std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size() || x < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, key + ": expected a count, got " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::ConfigError, key + ": expected true/false, got " + v);
}

Settings load_settings(const Globals& g, training::Protocol protocol) {
  Settings s;
  s.train = training::default_run_config(protocol);
  const auto kv = read_config(g.config_path);
  std::optional<model::Variant> variant;
  for (const auto& [key, value] : kv) {
    s.snapshot[key] = value;
    if (key == "layers") {
      s.model.layers = parse_count(key, value);
    } else if (key == "hidden") {
      s.model.hidden = parse_count(key, value);
    } else if (key == "heads") {
      s.model.heads = parse_count(key, value);
    } else if (key == "ffn_dim") {
      s.model.ffn_dim = parse_count(key, value);
    } else if (key == "max_len") {
      s.model.max_len = parse_count(key, value);
    } else if (key == "max_relative") {
      s.model.max_relative = parse_count(key, value);
    } else if (key == "dropout") {
      try {
        s.model.dropout = std::stod(value);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigError, "dropout: not a number: " + value);
      }
    } else if (key == "use_disentangled") {
      s.model.use_disentangled = parse_bool(key, value);
    } else if (key == "use_ngie") {
      s.model.use_ngie = parse_bool(key, value);
    } else if (key == "use_emd") {
      s.model.use_emd = parse_bool(key, value);
    } else if (key == "use_span_mask") {
      s.model.use_span_mask = parse_bool(key, value);
    } else if (key == "variant") {
      variant = model::variant_from_string(value);
      if (!variant) throw Error(ErrorCode::ConfigError, "unknown variant " + value);
    } else if (key == "head") {
      s.head_kind = training::head_kind_from_string(value);
      if (!s.head_kind) throw Error(ErrorCode::ConfigError, "unknown head " + value);
    } else if (key == "head_hidden") {
      std::stringstream ss(value);
      std::string part;
      s.head.hidden.clear();
      while (std::getline(ss, part, ',')) s.head.hidden.push_back(parse_count(key, trim(part)));
    } else if (key == "head_dropout") {
      try {
        s.head.dropout = std::stod(value);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigError, "head_dropout: not a number: " + value);
      }
    } else if (key == "task") {
      s.task = value;
    } else if (key == "label") {
      s.label = value;
    } else {
      training::apply_setting(s.train, key, value);
    }
  }
  if (variant) s.model = model::apply_variant(s.model, *variant);
  if (g.seed_given || !kv.count("seed")) s.train.seed = g.seed;
  return s;
}

// ---------------------------------------------------------------------------
// parse

struct ParseArgs {
  std::string input;
  std::string features_out;
  bool strict = false;
};

std::size_t monomer_count(const helm::HelmSequence& seq) {
  std::size_t n = 0;
  for (const auto& p : seq.polymers) n += p.monomers.size();
  return n;
}

int run_parse(const Globals& g, const ParseArgs& a) {
  Manifest m("parse", g);
  m.input(a.input);
  const auto report = corpus::load_corpus(a.input, a.strict);
  std::vector<json> rows;
  std::map<std::string, std::size_t> counts;
  for (const auto& r : report.records) {
    const auto seq = helm::parse_helm(r.helm);
    const auto s = helm::classify_structure(seq);
    const std::string type(helm::to_string(s.structure_type));
    ++counts[type];
    rows.push_back({{"key", r.key},
                    {"structure_type", type},
                    {"n_rings", s.n_rings},
                    {"n_monomers", monomer_count(seq)}});
  }
  for (const auto& [line, msg] : report.rejected) {
    std::cerr << "helm-lm: row " << line << " skipped: " << msg << "\n";
  }
  const fs::path path = a.features_out.empty() ? out_dir(g) / "features.jsonl" : fs::path(a.features_out);
  write_output(m, path, jsonl(rows));
  m.config() = {{"strict", a.strict}};
  m.summary() = {{"records", rows.size()}, {"rejected", report.rejected.size()}, {"structure_types", counts}};
  m.write(path.has_parent_path() ? path.parent_path() : fs::path("."));
  std::cout << m.summary().dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// tokenize

struct TokenizeArgs {
  std::string input;
  std::string vocab;
  bool build = false;
};

int run_tokenize(const Globals& g, const TokenizeArgs& a) {
  Manifest m("tokenize", g);
  m.input(a.input);
  const auto report = corpus::load_corpus(a.input, true);
  const auto dir = out_dir(g);
  tokenizer::Tokenizer tok;
  if (a.build) {
    tok.compression = tokenizer::CompressionMap::standard();
    std::vector<std::string> texts;
    for (const auto& r : report.records) texts.push_back(r.helm);
    tok.vocab = tokenizer::build_vocabulary(texts, tok.compression);
    const fs::path vpath = a.vocab.empty() ? dir / "tokenizer.json" : fs::path(a.vocab);
    write_output(m, vpath, tokenizer::tokenizer_to_json(tok));
  } else {
    if (a.vocab.empty()) throw Error(ErrorCode::ConfigError, "tokenize needs --vocab or --build");
    m.input(a.vocab);
    tok = tokenizer::load_tokenizer(a.vocab);
  }
  std::vector<json> rows;
  std::size_t chars = 0, tokens = 0, unk = 0;
  for (const auto& r : report.records) {
    const auto ids = tokenizer::encode(r.helm, tok.vocab, tok.compression);
    chars += r.helm.size();
    tokens += ids.size();
    unk += static_cast<std::size_t>(std::count(ids.begin(), ids.end(), tok.vocab.unk()));
    rows.push_back({{"key", r.key}, {"ids", ids}});
  }
  write_output(m, dir / "tokens.jsonl", jsonl(rows));
  m.config() = {{"build", a.build}};
  m.summary() = {{"records", rows.size()},
                 {"vocab_size", tok.vocab.size()},
                 {"characters", chars},
                 {"tokens", tokens},
                 {"unk_tokens", unk}};
  m.write(dir);
  std::cout << m.summary().dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// dedup

struct DedupArgs {
  std::vector<std::string> inputs;
  bool filter = false;
  double threshold = -10.0;
  std::string label = "log_papp";
};

int run_dedup(const Globals& g, const DedupArgs& a) {
  Manifest m("dedup", g);
  std::vector<corpus::CorpusRecord> all;
  std::size_t rejected = 0;
  for (const auto& in : a.inputs) {
    m.input(in);
    auto report = corpus::load_corpus(in);
    rejected += report.rejected.size();
    for (const auto& [line, msg] : report.rejected) {
      std::cerr << "helm-lm: " << in << " row " << line << " skipped: " << msg << "\n";
    }
    std::move(report.records.begin(), report.records.end(), std::back_inserter(all));
  }
  auto unique = corpus::deduplicate(all);
  json per_source = json::object();
  for (const auto& r : unique) {
    const std::string s(corpus::to_string(r.source));
    per_source[s] = per_source.value(s, 0) + 1;
  }
  m.summary() = {{"loaded", all.size()}, {"rejected", rejected}, {"unique", unique.size()},
                 {"per_source", per_source}};
  if (a.filter) {
    const auto kept = corpus::filter_outliers(unique, a.threshold, a.label);
    m.summary()["after_outlier_filter"] = kept.size();
    unique = kept;
  }
  const auto dir = out_dir(g);
  const auto path = dir / "dedup.jsonl";
  corpus::write_corpus_jsonl(path, unique);
  m.output(path);
  m.config() = {{"filter_outliers", a.filter}, {"threshold", a.threshold}, {"label", a.label}};
  m.write(dir);
  std::cout << m.summary().dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// split

struct SplitArgs {
  std::string strategy = "kfold";
  std::string input;
  std::size_t folds = 5;
  double val_fraction = 0.1;
  double max_dev = 0.15;
  std::size_t pca_dims = 50;
  std::size_t clusters = 100;
  std::size_t negative_ratio = 0;
};

int run_split(const Globals& g, const SplitArgs& a) {
  Manifest m("split", g);
  m.input(a.input);
  const auto dir = out_dir(g);
  splits::DatasetSplit split;
  json summary = json::object();
  if (a.strategy == "kfold") {
    const auto report = corpus::load_corpus(a.input, true);
    std::vector<std::string> ids;
    for (const auto& r : report.records) ids.push_back(r.key);
    split = splits::make_kfold_splits(ids, a.folds, a.val_fraction, g.seed);
    summary["records"] = ids.size();
  } else if (a.strategy == "random-pair" || a.strategy == "cluster") {
    auto pairs = splits::load_pairs(a.input);
    if (a.negative_ratio > 0) {
      std::vector<splits::PairRecord> positives;
      for (const auto& p : pairs) {
        if (p.positive) positives.push_back(p);
      }
      const auto neg = splits::sample_negatives(positives, a.negative_ratio,
                                                corpus::derive_seed(g.seed, 0x6e6567));
      if (neg.saturated) std::cerr << "helm-lm: warning: negative sampling saturated\n";
      pairs = positives;
      pairs.insert(pairs.end(), neg.pairs.begin(), neg.pairs.end());
      summary["negatives"] = neg.pairs.size();
      summary["negatives_saturated"] = neg.saturated;
      const auto ppath = dir / "pairs.jsonl";
      splits::write_pairs_jsonl(ppath, pairs);
      m.output(ppath);
    }
    summary["pairs"] = pairs.size();
    if (a.strategy == "random-pair") {
      split = splits::make_random_pair_split(pairs, a.folds, a.val_fraction, g.seed);
    } else {
      const auto clusters = splits::cluster_pairs(pairs, a.pca_dims, a.clusters, g.seed);
      const auto labels = splits::inherit_cluster_labels(pairs, clusters.labels);
      split = splits::make_cluster_split(pairs, labels, clusters.centroids, a.folds, a.max_dev,
                                         a.val_fraction, g.seed);
      summary["balance_fallback"] = split.balance_fallback;
      summary["fold_weights"] = split.fold_weights;
      summary["dropped"] = split.dropped().size();
    }
  } else {
    throw Error(ErrorCode::ConfigError, "unknown split strategy " + a.strategy);
  }
  write_output(m, dir / "split.json", splits::to_json(split).dump(2) + "\n");
  m.config() = {{"strategy", a.strategy},         {"folds", a.folds},
                {"val_fraction", a.val_fraction}, {"max_dev", a.max_dev},
                {"pca_dims", a.pca_dims},         {"clusters", a.clusters},
                {"negative_ratio", a.negative_ratio}};
  m.summary() = summary;
  m.write(dir);
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainArgs {
  std::string corpus;
  std::string vocab;
};

template <typename T>
int pretrain_typed(const Globals& g, const PretrainArgs& a) {
  Manifest m("pretrain", g);
  m.input(a.corpus);
  auto s = load_settings(g, training::Protocol::Pretrain);
  s.train.protocol = training::Protocol::Pretrain;
  s.train.validate();
  const auto report = corpus::load_corpus(a.corpus, true);
  const auto dir = out_dir(g);
  tokenizer::Tokenizer tok;
  if (!a.vocab.empty()) {
    m.input(a.vocab);
    tok = tokenizer::load_tokenizer(a.vocab);
  } else {
    tok.compression = tokenizer::CompressionMap::standard();
    std::vector<std::string> texts;
    for (const auto& r : report.records) texts.push_back(r.helm);
    tok.vocab = tokenizer::build_vocabulary(texts, tok.compression);
    write_output(m, dir / "tokenizer.json", tokenizer::tokenizer_to_json(tok));
  }
  std::vector<std::vector<tokenizer::TokenId>> ids;
  for (const auto& r : report.records) ids.push_back(tokenizer::encode(r.helm, tok.vocab, tok.compression));
  s.model.vocab_size = tok.vocab.size();
  s.model.validate();

  model::Encoder<T> encoder(s.model, corpus::derive_seed(s.train.seed, 0x696e6974));
  std::vector<json> history;
  const auto result = training::pretrain(encoder, std::span<const std::vector<tokenizer::TokenId>>(ids),
                                         tok.vocab, s.train, [&](const training::EpochRecord& r) {
                                           history.push_back(training::to_json(r));
                                           std::cerr << "epoch " << r.epoch << " train " << r.train_loss
                                                     << " val " << r.val_loss << "\n";
                                         });
  auto ckpt = checkpoint::from_encoder(encoder);
  ckpt.metadata["tokenizer"] = json::parse(tokenizer::tokenizer_to_json(tok));
  ckpt.metadata["train_config"] = training::to_json(s.train);
  ckpt.metadata["best_epoch"] = result.best_epoch;
  ckpt.metadata["best_val_loss"] = result.best_val_loss;
  const auto cpath = dir / "checkpoint.bin";
  checkpoint::save_checkpoint(ckpt, cpath);
  m.output(cpath);
  write_output(m, dir / "loss_history.jsonl", jsonl(history));
  m.config() = {{"model", s.model}, {"train", training::to_json(s.train)}, {"file", s.snapshot}};
  m.summary() = {{"sequences", ids.size()},
                 {"epochs", result.history.size()},
                 {"best_epoch", result.best_epoch},
                 {"best_val_loss", result.best_val_loss},
                 {"steps", result.steps},
                 {"weights_sha256", checkpoint::weights_hash(ckpt)}};
  m.write(dir);
  std::cout << m.summary().dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// finetune

struct FinetuneArgs {
  std::string checkpoint;
  std::string data;
  std::string pairs;
  std::string protein_vectors;
  std::string features;
  std::string split;
  std::string protocol = "full_ft";
  std::string task;
  std::string head;
  std::string label;
  std::size_t folds = 10;
  double val_fraction = 0.1;
  std::optional<std::size_t> fold;
};

std::map<std::string, std::vector<double>> read_vectors(const std::string& path,
                                                        const std::string& key_field) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& row : io::read_records(path)) {
    if (!row.contains(key_field)) {
      throw Error(ErrorCode::IoError, path + ": row without " + key_field);
    }
    const json& v = row.contains("embedding") ? row.at("embedding") : row.at("vector");
    out[row.at(key_field).get<std::string>()] = io::as_vector(v, "embedding");
  }
  return out;
}

tokenizer::Tokenizer checkpoint_tokenizer(const checkpoint::Checkpoint& ckpt) {
  if (!ckpt.metadata.contains("tokenizer")) {
    throw Error(ErrorCode::CheckpointError, "checkpoint carries no tokenizer");
  }
  return tokenizer::tokenizer_from_json(ckpt.metadata.at("tokenizer").dump());
}

template <typename T>
int finetune_typed(const Globals& g, const FinetuneArgs& a) {
  Manifest m("finetune", g);
  const auto protocol = training::protocol_from_string(a.protocol);
  if (!protocol || *protocol == training::Protocol::Pretrain) {
    throw Error(ErrorCode::ConfigError, "unknown fine-tuning protocol " + a.protocol);
  }
  auto s = load_settings(g, *protocol);
  s.train.protocol = *protocol;
  if (a.fold) s.train.fold = a.fold;
  s.train.validate();

  std::optional<checkpoint::Checkpoint> ckpt;
  std::optional<tokenizer::Tokenizer> tok;
  if (!a.checkpoint.empty()) {
    m.input(a.checkpoint);
    ckpt = checkpoint::load_checkpoint(a.checkpoint);
    tok = checkpoint_tokenizer(*ckpt);
  }
  std::map<std::string, std::vector<double>> features;
  if (!a.features.empty()) {
    m.input(a.features);
    features = read_vectors(a.features, "key");
  }
  if (!ckpt && features.empty()) {
    throw Error(ErrorCode::ConfigError, "finetune needs --checkpoint or --features");
  }

  const bool pairs_mode = !a.pairs.empty();
  if (pairs_mode == !a.data.empty()) {
    throw Error(ErrorCode::ConfigError, "give exactly one of --data and --pairs");
  }
  std::string task_name = !a.task.empty() ? a.task : (!s.task.empty() ? s.task : (pairs_mode ? "binary" : "regression"));
  const auto task = training::task_from_string(task_name);
  if (!task) throw Error(ErrorCode::ConfigError, "unknown task " + task_name);
  std::string head_name = a.head;
  training::HeadSpec head = s.head;
  if (!head_name.empty()) {
    const auto k = training::head_kind_from_string(head_name);
    if (!k) throw Error(ErrorCode::ConfigError, "unknown head " + head_name);
    head.kind = *k;
  } else if (s.head_kind) {
    head.kind = *s.head_kind;
  } else {
    head.kind = pairs_mode ? training::HeadKind::UnifiedPpiResidualMlp : training::HeadKind::ResidualMlp3;
  }
  const std::string label = !a.label.empty() ? a.label : (!s.label.empty() ? s.label : "log_papp");

  std::vector<training::Example> examples;
  std::vector<std::string> ids;
  std::vector<splits::PairRecord> pairs;
  if (pairs_mode) {
    m.input(a.pairs);
    pairs = splits::load_pairs(a.pairs);
    if (a.protein_vectors.empty()) throw Error(ErrorCode::ConfigError, "--pairs needs --protein-vectors");
    m.input(a.protein_vectors);
    const auto prot = read_vectors(a.protein_vectors, "protein_id");
    examples = training::pair_examples(pairs, prot, tok ? &*tok : nullptr,
                                       features.empty() ? nullptr : &features);
    for (const auto& e : examples) ids.push_back(e.id);
  } else {
    m.input(a.data);
    const auto report = corpus::load_corpus(a.data, true);
    for (const auto& r : report.records) {
      training::Example e;
      e.id = r.key;
      const auto y = r.label(label);
      if (!y) throw Error(ErrorCode::MissingLabel, "record " + r.key + " has no " + label);
      e.target = *y;
      if (tok) e.tokens = tokenizer::encode(r.helm, tok->vocab, tok->compression);
      if (!features.empty()) {
        const auto it = features.find(r.key);
        if (it == features.end()) throw Error(ErrorCode::IoError, "no feature vector for " + r.key);
        e.extra = it->second;
      }
      ids.push_back(e.id);
      examples.push_back(std::move(e));
    }
  }

  splits::DatasetSplit split;
  if (!a.split.empty()) {
    m.input(a.split);
    split = splits::split_from_json(json::parse(io::read_file(a.split)));
  } else if (pairs_mode) {
    split = splits::make_random_pair_split(pairs, a.folds, a.val_fraction, g.seed);
  } else {
    split = splits::make_kfold_splits(ids, a.folds, a.val_fraction, g.seed);
  }

  std::vector<json> history;
  const auto results = training::finetune<T>(
      ckpt ? &*ckpt : nullptr, examples, split, *task, head, s.train,
      [&](const training::EpochRecord& r) {
        history.push_back(training::to_json(r));
        std::cerr << "fold " << r.fold << " epoch " << r.epoch << " train " << r.train_loss << " val "
                  << r.val_loss << "\n";
      });

  std::string csv = "id,y_true,y_pred\n";
  std::ostringstream num;
  num.precision(17);
  evaluation::MetricReport report;
  report.task = pairs_mode ? "ppi" : label;
  json folds = json::array();
  for (const auto& f : results) {
    for (const auto& p : f.predictions) {
      num.str("");
      num << io::csv_escape(p.id) << "," << p.y_true << "," << p.y_pred << "\n";
      csv += num.str();
    }
    for (const auto& [k, v] : f.metrics) report.add(k, v);
    folds.push_back({{"fold", f.fold},
                     {"best_epoch", f.best_epoch},
                     {"metrics", f.metrics},
                     {"test_size", f.predictions.size()},
                     {"encoder_sha256_before", f.encoder_hash_before},
                     {"encoder_sha256_after", f.encoder_hash_after}});
  }
  const auto dir = out_dir(g);
  write_output(m, dir / "predictions.csv", csv);
  write_output(m, dir / "metrics.jsonl", jsonl(history));
  write_output(m, dir / "report.json", evaluation::to_json(report).dump(2) + "\n");
  m.config() = {{"protocol", a.protocol},
                {"task", task_name},
                {"head", training::to_string(head.kind)},
                {"head_hidden", training::resolved_hidden(head, 0)},
                {"label", label},
                {"folds", split.fold_count()},
                {"train", training::to_json(s.train)},
                {"file", s.snapshot}};
  m.summary() = {{"examples", examples.size()}, {"folds", folds}};
  m.write(dir);
  std::cout << evaluation::to_json(report).dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// embed

struct EmbedArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::size_t batch = 32;
};

template <typename T>
int embed_typed(const Globals& g, const EmbedArgs& a) {
  Manifest m("embed", g);
  m.input(a.checkpoint);
  m.input(a.input);
  const auto ckpt = checkpoint::load_checkpoint(a.checkpoint);
  const auto tok = checkpoint_tokenizer(ckpt);
  const auto encoder = checkpoint::to_encoder<T>(ckpt);
  const auto report = corpus::load_corpus(a.input);
  for (const auto& [line, msg] : report.rejected) {
    std::cerr << "helm-lm: row " << line << " skipped: " << msg << "\n";
  }
  std::string out;
  const auto& recs = report.records;
  for (std::size_t start = 0; start < recs.size(); start += a.batch) {
    const std::size_t end = std::min(recs.size(), start + a.batch);
    std::vector<std::vector<tokenizer::TokenId>> seqs;
    for (std::size_t i = start; i < end; ++i) {
      seqs.push_back(tokenizer::encode(recs[i].helm, tok.vocab, tok.compression));
    }
    const auto input = make_input(seqs, tok.vocab.pad());
    model::ForwardState st;
    const auto pooled = encoder.pooled(input, st).value();
    const std::size_t h = pooled.shape()[1];
    for (std::size_t i = start; i < end; ++i) {
      std::vector<double> v(h);
      for (std::size_t c = 0; c < h; ++c) v[c] = static_cast<double>(pooled.at(i - start, c));
      out += json({{"key", recs[i].key}, {"embedding", v}}).dump() + "\n";
    }
  }
  fs::path path = a.output.empty() ? out_dir(g) / "embeddings.jsonl" : fs::path(a.output);
  write_output(m, path, out);
  m.config() = {{"batch", a.batch}};
  m.summary() = {{"records", recs.size()}, {"rejected", report.rejected.size()}, {"hidden", ckpt.config.hidden}};
  m.write(path.has_parent_path() ? path.parent_path() : fs::path("."));
  std::cout << m.summary().dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeArgs {
  std::string embeddings;
  std::string targets;
  std::string label;
  std::string task = "regression";
  std::size_t folds = 5;
  std::size_t k = 3;
};

int run_probe(const Globals& g, const ProbeArgs& a) {
  Manifest m("probe", g);
  m.input(a.embeddings);
  m.input(a.targets);
  const auto emb = read_vectors(a.embeddings, "key");
  const bool classify = a.task == "classification" || a.task == "binary";
  if (!classify && a.task != "regression") throw Error(ErrorCode::ConfigError, "unknown task " + a.task);
  if (a.label.empty()) throw Error(ErrorCode::ConfigError, "probe needs --label");

  // targets keyed like the embeddings; string labels become class indices
  std::vector<std::pair<std::string, json>> rows;
  for (const auto& row : io::read_records(a.targets)) {
    if (!row.contains("key") || !row.contains(a.label)) {
      throw Error(ErrorCode::MissingLabel, a.targets + ": row without key or " + a.label);
    }
    rows.push_back({row.at("key").get<std::string>(), row.at(a.label)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  // first row wins for repeated keys
  rows.erase(std::unique(rows.begin(), rows.end(),
                         [](const auto& x, const auto& y) { return x.first == y.first; }),
             rows.end());
  std::map<std::string, int> classes;
  if (classify) {
    for (const auto& [key, v] : rows) classes.emplace(v.is_string() ? v.get<std::string>() : v.dump(), 0);
    int next = 0;
    for (auto& [name, id] : classes) id = next++;
  }
  std::vector<std::vector<double>> xs;
  std::vector<double> y;
  std::size_t missing = 0;
  for (const auto& [key, v] : rows) {
    const auto it = emb.find(key);
    if (it == emb.end()) {
      ++missing;
      continue;
    }
    xs.push_back(it->second);
    if (classify) {
      y.push_back(classes.at(v.is_string() ? v.get<std::string>() : v.dump()));
    } else {
      y.push_back(io::as_number(v, a.label));
    }
  }
  if (xs.empty()) throw Error(ErrorCode::InsufficientData, "no target row matches an embedding");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(xs[0].size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != xs[0].size()) throw Error(ErrorCode::ShapeMismatch, "embedding widths differ");
    for (std::size_t j = 0; j < xs[i].size(); ++j) x(Eigen::Index(i), Eigen::Index(j)) = xs[i][j];
  }
  evaluation::ProbeOptions opt;
  opt.folds = a.folds;
  opt.seed = g.seed;
  const auto r = evaluation::linear_probe_cv(
      x, y, classify ? evaluation::ProbeTask::Classification : evaluation::ProbeTask::Regression, opt);
  auto report = r.report;
  report.task = a.label;
  json out = {{"task", a.task},
              {"label", a.label},
              {"samples", xs.size()},
              {"unmatched_targets", missing},
              {"selected_l2", r.selected_l2},
              {"linear_probe", evaluation::to_json(report)}};
  if (classify) {
    std::vector<int> labels(y.begin(), y.end());
    out["classes"] = classes;
    out["knn_accuracy"] = evaluation::knn_classify(x, labels, a.k);
    const auto c = evaluation::clustering_indices(x, labels);
    out["silhouette"] = c.silhouette;
    out["davies_bouldin"] = c.davies_bouldin;
    out["calinski_harabasz"] = c.calinski_harabasz;
  }
  const auto dir = out_dir(g);
  write_output(m, dir / "probe.json", out.dump(2) + "\n");
  write_output(m, dir / "report.json", evaluation::to_json(report).dump(2) + "\n");
  m.config() = {{"task", a.task}, {"label", a.label}, {"folds", a.folds}, {"k", a.k}};
  m.summary() = {{"samples", xs.size()}};
  m.write(dir);
  std::cout << out.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// stats

struct CompareArgs {
  std::string a, b;
  double n_train = 0, n_test = 0, q = 0.05;
};

int run_compare(const Globals& g, const CompareArgs& a) {
  Manifest m("stats compare", g);
  m.input(a.a);
  m.input(a.b);
  const auto ra = evaluation::metric_report_from_json(json::parse(io::read_file(a.a)));
  const auto rb = evaluation::metric_report_from_json(json::parse(io::read_file(a.b)));
  const auto cmp = statistics::compare_reports(ra, rb, a.n_train, a.n_test, a.q);
  json out = statistics::to_json(cmp);
  out["a"] = ra.task;
  out["b"] = rb.task;
  const auto dir = out_dir(g);
  write_output(m, dir / "comparison.json", out.dump(2) + "\n");
  m.config() = {{"n_train", a.n_train}, {"n_test", a.n_test}, {"q", a.q}};
  m.write(dir);
  std::cout << out.dump() << "\n";
  return kOk;
}

struct FdrArgs {
  std::vector<double> p;
  std::string input;
  double q = 0.05;
};

int run_fdr(const Globals& g, const FdrArgs& a) {
  Manifest m("stats fdr", g);
  std::vector<double> p = a.p;
  if (!a.input.empty()) {
    m.input(a.input);
    std::stringstream ss(io::read_file(a.input));
    std::string tok;
    while (ss >> tok) {
      std::replace(tok.begin(), tok.end(), ',', ' ');
      std::stringstream inner(tok);
      double v = 0;
      while (inner >> v) p.push_back(v);
    }
  }
  if (p.empty()) throw Error(ErrorCode::ConfigError, "stats fdr needs --p or --in");
  const auto r = statistics::bh_fdr(p, a.q);
  json out = {{"q", a.q}, {"p", p}, {"adjusted", r.adjusted}, {"reject", r.reject}};
  const auto dir = out_dir(g);
  write_output(m, dir / "fdr.json", out.dump(2) + "\n");
  m.config() = {{"q", a.q}};
  m.write(dir);
  std::cout << out.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// verify

int run_verify(const std::string& path) {
  const json man = json::parse(io::read_file(path));
  std::size_t bad = 0;
  for (const char* section : {"inputs", "outputs"}) {
    for (const auto& e : man.value(section, json::array())) {
      const std::string p = e.at("path");
      const std::string want = e.at("sha256");
      if (!fs::exists(p)) {
        std::cout << section << " missing " << p << "\n";
        ++bad;
        continue;
      }
      const auto got = io::sha256_file(p);
      if (got != want) {
        std::cout << section << " changed " << p << " (" << want.substr(0, 12) << " -> " << got.substr(0, 12)
                  << ")\n";
        ++bad;
      }
    }
  }
  if (bad > 0) {
    throw Error(ErrorCode::IoError, std::to_string(bad) + " file(s) differ from " + path);
  }
  std::cout << "ok " << path << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  g.argv.assign(argv, argv + argc);
  CLI::App app{"HELM peptide language model toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", g.seed, "random seed")->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--config", g.config_path, "key = value settings file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory (embed: output file)");
  app.add_option("--precision", g.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));

  ParseArgs parse_args;
  auto* parse = app.add_subcommand("parse", "structure features per HELM record");
  parse->add_option("input", parse_args.input)->required()->check(CLI::ExistingFile);
  parse->add_option("--features-out", parse_args.features_out, "JSON-lines output path");
  parse->add_flag("--strict", parse_args.strict, "fail on the first unparsable row");

  TokenizeArgs tok_args;
  auto* tokenize = app.add_subcommand("tokenize", "encode a corpus to token ids");
  tokenize->add_option("input", tok_args.input)->required()->check(CLI::ExistingFile);
  tokenize->add_option("--vocab", tok_args.vocab, "tokenizer JSON (read, or written with --build)");
  tokenize->add_flag("--build", tok_args.build, "build the vocabulary from the input");

  DedupArgs dedup_args;
  auto* dedup = app.add_subcommand("dedup", "merge corpora and drop duplicate structures");
  dedup->add_option("inputs", dedup_args.inputs)->required()->check(CLI::ExistingFile);
  dedup->add_flag("--filter-outliers", dedup_args.filter, "drop records with label <= threshold");
  dedup->add_option("--threshold", dedup_args.threshold, "outlier threshold");
  dedup->add_option("--label", dedup_args.label, "label used by the outlier filter");

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "cross-validation split manifest");
  split->add_option("--strategy", split_args.strategy)
      ->check(CLI::IsMember({"kfold", "random-pair", "cluster"}));
  split->add_option("--in", split_args.input, "corpus (kfold) or pairs JSON-lines")
      ->required()
      ->check(CLI::ExistingFile);
  split->add_option("--folds", split_args.folds);
  split->add_option("--val-fraction", split_args.val_fraction);
  split->add_option("--max-dev", split_args.max_dev, "cluster split fold-size deviation");
  split->add_option("--pca-dims", split_args.pca_dims);
  split->add_option("--clusters", split_args.clusters);
  split->add_option("--negative-ratio", split_args.negative_ratio, "sample this many negatives per positive");

  PretrainArgs pre_args;
  auto* pretrain = app.add_subcommand("pretrain", "masked language model pre-training");
  pretrain->add_option("corpus", pre_args.corpus)->required()->check(CLI::ExistingFile);
  pretrain->add_option("--vocab", pre_args.vocab, "existing tokenizer JSON")->check(CLI::ExistingFile);

  FinetuneArgs ft_args;
  auto* finetune = app.add_subcommand("finetune", "downstream training with cross-validation");
  finetune->add_option("--checkpoint", ft_args.checkpoint)->check(CLI::ExistingFile);
  finetune->add_option("--data", ft_args.data, "labelled corpus")->check(CLI::ExistingFile);
  finetune->add_option("--pairs", ft_args.pairs, "peptide-protein pairs")->check(CLI::ExistingFile);
  finetune->add_option("--protein-vectors", ft_args.protein_vectors)->check(CLI::ExistingFile);
  finetune->add_option("--features", ft_args.features, "precomputed peptide vectors")->check(CLI::ExistingFile);
  finetune->add_option("--split", ft_args.split, "split manifest from `split`")->check(CLI::ExistingFile);
  finetune->add_option("--protocol", ft_args.protocol, "full_ft, head_ft or linear_probe");
  finetune->add_option("--task", ft_args.task, "regression or binary");
  finetune->add_option("--head", ft_args.head);
  finetune->add_option("--label", ft_args.label);
  finetune->add_option("--folds", ft_args.folds, "folds when no split manifest is given");
  finetune->add_option("--val-fraction", ft_args.val_fraction);
  finetune->add_option("--fold", ft_args.fold, "train a single fold");

  EmbedArgs embed_args;
  auto* embed = app.add_subcommand("embed", "mean-pooled encoder vectors");
  embed->add_option("--checkpoint", embed_args.checkpoint)->required()->check(CLI::ExistingFile);
  embed->add_option("--in", embed_args.input)->required()->check(CLI::ExistingFile);
  embed->add_option("--batch", embed_args.batch);

  ProbeArgs probe_args;
  auto* probe = app.add_subcommand("probe", "linear probe, k-NN and cluster indices on embeddings");
  probe->add_option("--embeddings", probe_args.embeddings)->required()->check(CLI::ExistingFile);
  probe->add_option("--targets", probe_args.targets)->required()->check(CLI::ExistingFile);
  probe->add_option("--label", probe_args.label)->required();
  probe->add_option("--task", probe_args.task)->check(CLI::IsMember({"regression", "classification", "binary"}));
  probe->add_option("--folds", probe_args.folds);
  probe->add_option("-k", probe_args.k, "neighbours for k-NN");

  auto* stats = app.add_subcommand("stats", "model comparison statistics");
  stats->require_subcommand(1);
  stats->fallthrough();
  CompareArgs cmp_args;
  auto* compare = stats->add_subcommand("compare", "corrected t-test, BH and Cohen's d per metric");
  compare->add_option("--a", cmp_args.a)->required()->check(CLI::ExistingFile);
  compare->add_option("--b", cmp_args.b)->required()->check(CLI::ExistingFile);
  compare->add_option("--n-train", cmp_args.n_train)->required();
  compare->add_option("--n-test", cmp_args.n_test)->required();
  compare->add_option("--q", cmp_args.q);
  FdrArgs fdr_args;
  auto* fdr = stats->add_subcommand("fdr", "Benjamini-Hochberg adjustment of raw p-values");
  fdr->add_option("--p", fdr_args.p, "p-values")->delimiter(',');
  fdr->add_option("--in", fdr_args.input, "file of p-values")->check(CLI::ExistingFile);
  fdr->add_option("--q", fdr_args.q);

  std::string verify_path;
  auto* verify = app.add_subcommand("verify", "re-hash the files listed in a run manifest");
  verify->add_option("manifest", verify_path)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const bool f64 = g.precision == "f64";
    if (*parse) return run_parse(g, parse_args);
    if (*tokenize) return run_tokenize(g, tok_args);
    if (*dedup) return run_dedup(g, dedup_args);
    if (*split) return run_split(g, split_args);
    if (*pretrain) return f64 ? pretrain_typed<double>(g, pre_args) : pretrain_typed<float>(g, pre_args);
    if (*finetune) return f64 ? finetune_typed<double>(g, ft_args) : finetune_typed<float>(g, ft_args);
    if (*embed) {
      // --out names the embeddings file for this subcommand
      if (g.out != ".") embed_args.output = g.out;
      return f64 ? embed_typed<double>(g, embed_args) : embed_typed<float>(g, embed_args);
    }
    if (*probe) return run_probe(g, probe_args);
    if (*compare) return run_compare(g, cmp_args);
    if (*fdr) return run_fdr(g, fdr_args);
    if (*verify) return run_verify(verify_path);
  } catch (const Error& e) {
    std::cerr << "helm-lm: " << e.what() << "\n";
    if (e.is_numeric()) return kNumeric;
    return e.code() == ErrorCode::ConfigError ? kUsage : kData;
  } catch (const json::exception& e) {
    std::cerr << "helm-lm: IoError: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "helm-lm: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
