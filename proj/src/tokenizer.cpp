// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "helmlm/errors.hpp"

namespace helmlm::tokenizer {

namespace {

// Characters the HELM grammar subset gives meaning to.
constexpr std::string_view kGrammarChars = "{}[].,$|:-";

bool is_printable_ascii(char c) {
  auto u = static_cast<unsigned char>(c);
  return u >= 0x20 && u < 0x7f;
}

}  // namespace

CompressionMap::CompressionMap(std::vector<MotifEntry> entries)
    : entries_(std::move(entries)) {
  std::set<char> seen;
  for (const auto& e : entries_) {
    if (e.motif.size() < 2) {
      throw Error(ErrorCode::InvalidArgument,
                  "motif '" + e.motif + "' must span at least two characters");
    }
    if (!seen.insert(e.marker).second) {
      throw Error(ErrorCode::MarkerCollision,
                  std::string("marker '") + e.marker + "' used twice");
    }
    if (kGrammarChars.find(e.marker) != std::string_view::npos ||
        std::isalnum(static_cast<unsigned char>(e.marker)) ||
        !is_printable_ascii(e.marker)) {
      throw Error(ErrorCode::MarkerCollision,
                  std::string("marker '") + e.marker +
                      "' collides with HELM characters");
    }
  }
  for (const auto& e : entries_) {
    for (char m : seen) {
      if (e.motif.find(m) != std::string::npos) {
        throw Error(ErrorCode::MarkerCollision,
                    std::string("marker '") + m + "' occurs in motif '" +
                        e.motif + "'");
      }
    }
  }
  // Longest first; ties broken lexicographically so order is a pure function
  // of the entry set.
  std::stable_sort(entries_.begin(), entries_.end(),
                   [](const MotifEntry& a, const MotifEntry& b) {
                     if (a.motif.size() != b.motif.size()) {
                       return a.motif.size() > b.motif.size();
                     }
                     return a.motif < b.motif;
                   });
}

CompressionMap CompressionMap::standard() {
  return CompressionMap({{"PEPTIDE", '/'}, {"me", '*'}});
}

bool CompressionMap::is_marker(char c) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [c](const MotifEntry& e) { return e.marker == c; });
}

std::string CompressionMap::compress(std::string_view text) const {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const auto& e : entries_) {
      if (text.substr(i).starts_with(e.motif)) {
        out += e.marker;
        i += e.motif.size();
        matched = true;
        break;
      }
    }
    if (!matched) out += text[i++];
  }
  return out;
}

std::string CompressionMap::expand(std::string_view compressed) const {
  std::string out;
  out.reserve(compressed.size() * 2);
  for (char c : compressed) {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [c](const MotifEntry& e) { return e.marker == c; });
    if (it != entries_.end()) {
      out += it->motif;
    } else {
      out += c;
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<char> characters)
    : characters_(std::move(characters)) {
  std::sort(characters_.begin(), characters_.end(),
            [](char a, char b) {
              return static_cast<unsigned char>(a) <
                     static_cast<unsigned char>(b);
            });
  characters_.erase(std::unique(characters_.begin(), characters_.end()),
                    characters_.end());
  index_.fill(-1);
  for (std::size_t i = 0; i < characters_.size(); ++i) {
    index_[static_cast<unsigned char>(characters_[i])] =
        static_cast<std::int32_t>(i);
  }
}

std::optional<TokenId> Vocabulary::id_of(char c) const {
  auto id = index_[static_cast<unsigned char>(c)];
  if (id < 0) return std::nullopt;
  return id;
}

char Vocabulary::char_of(TokenId id) const {
  return characters_.at(static_cast<std::size_t>(id));
}

std::vector<TokenId> Vocabulary::regular_ids() const {
  std::vector<TokenId> ids(characters_.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i);
  return ids;
}

Vocabulary build_vocabulary(std::span<const std::string> corpus,
                            const CompressionMap& compression) {
  if (corpus.empty()) {
    throw Error(ErrorCode::InvalidArgument, "corpus is empty");
  }
  std::set<char> chars;
  for (const auto& text : corpus) {
    for (char c : text) {
      if (compression.is_marker(c)) {
        throw Error(ErrorCode::MarkerCollision,
                    std::string("marker '") + c + "' occurs in corpus text");
      }
    }
    for (char c : compression.compress(text)) {
      if (is_printable_ascii(c)) chars.insert(c);
    }
  }
  for (const auto& e : compression.entries()) chars.insert(e.marker);
  return Vocabulary(std::vector<char>(chars.begin(), chars.end()));
}

std::vector<TokenId> encode(std::string_view input, const Vocabulary& vocab,
                            const CompressionMap& compression) {
  std::vector<TokenId> ids;
  ids.reserve(input.size());
  std::size_t i = 0;
  const auto& entries = compression.entries();
  while (i < input.size()) {
    // Raw marker characters cannot be represented: decoding would expand them.
    if (compression.is_marker(input[i])) {
      ids.push_back(vocab.unk());
      ++i;
      continue;
    }
    bool matched = false;
    for (const auto& e : entries) {
      if (input.substr(i).starts_with(e.motif)) {
        auto id = vocab.id_of(e.marker);
        ids.push_back(id ? *id : vocab.unk());
        i += e.motif.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    auto id = vocab.id_of(input[i]);
    ids.push_back(id ? *id : vocab.unk());
    ++i;
  }
  return ids;
}

std::string decode(std::span<const TokenId> tokens, const Vocabulary& vocab,
                   const CompressionMap& compression) {
  std::string compressed;
  compressed.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto id = tokens[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size() ||
        vocab.is_special(id)) {
      throw Error(ErrorCode::UndecodableToken,
                  "token " + std::to_string(id) + " at position " +
                      std::to_string(i));
    }
    compressed += vocab.char_of(id);
  }
  return compression.expand(compressed);
}

std::string tokenizer_to_json(const Tokenizer& tok) {
  nlohmann::ordered_json j;
  j["markers"] = nlohmann::ordered_json::array();
  for (const auto& e : tok.compression.entries()) {
    j["markers"].push_back({{"motif", e.motif}, {"marker", std::string(1, e.marker)}});
  }
  j["tokens"] = nlohmann::ordered_json::array();
  for (char c : tok.vocab.characters()) j["tokens"].push_back(std::string(1, c));
  j["specials"] = {{std::string(kSpecialNames[0]), tok.vocab.unk()},
                   {std::string(kSpecialNames[1]), tok.vocab.mask()},
                   {std::string(kSpecialNames[2]), tok.vocab.pad()}};
  return j.dump(2);
}

Tokenizer tokenizer_from_json(std::string_view json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("vocabulary file: ") + e.what());
  }
  std::vector<MotifEntry> entries;
  for (const auto& m : j.value("markers", nlohmann::json::array())) {
    auto marker = m.at("marker").get<std::string>();
    if (marker.size() != 1) {
      throw Error(ErrorCode::ConfigError, "marker must be one character");
    }
    entries.push_back({m.at("motif").get<std::string>(), marker[0]});
  }
  std::vector<char> chars;
  for (const auto& t : j.at("tokens")) {
    auto s = t.get<std::string>();
    if (s.size() != 1) {
      throw Error(ErrorCode::ConfigError, "token '" + s + "' is not one character");
    }
    chars.push_back(s[0]);
  }
  Tokenizer tok{Vocabulary(std::move(chars)), CompressionMap(std::move(entries))};
  if (j.contains("specials")) {
    const auto& s = j["specials"];
    if (s.value(std::string(kSpecialNames[0]), tok.vocab.unk()) != tok.vocab.unk() ||
        s.value(std::string(kSpecialNames[1]), tok.vocab.mask()) != tok.vocab.mask() ||
        s.value(std::string(kSpecialNames[2]), tok.vocab.pad()) != tok.vocab.pad()) {
      throw Error(ErrorCode::ConfigError,
                  "special token ids do not follow the character tokens");
    }
  }
  return tok;
}

void save_tokenizer(const Tokenizer& tok, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << tokenizer_to_json(tok) << '\n';
}

Tokenizer load_tokenizer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return tokenizer_from_json(ss.str());
}

}  // namespace helmlm::tokenizer
