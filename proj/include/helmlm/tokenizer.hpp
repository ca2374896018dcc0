// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace helmlm::tokenizer {

using TokenId = std::int32_t;

struct MotifEntry {
  std::string motif;
  char marker;
};

/// Multi-character motifs collapsed to single-character markers before
/// character tokenization. Entries are kept sorted longest motif first.
class CompressionMap {
 public:
  CompressionMap() = default;
  /// Throws MarkerCollision when markers repeat, appear inside a motif, or
  /// collide with characters the HELM grammar uses.
  explicit CompressionMap(std::vector<MotifEntry> entries);

  /// The two documented motifs: PEPTIDE -> '/', me -> '*'.
  static CompressionMap standard();

  const std::vector<MotifEntry>& entries() const { return entries_; }
  bool is_marker(char c) const;
  std::string compress(std::string_view text) const;
  std::string expand(std::string_view compressed) const;

 private:
  std::vector<MotifEntry> entries_;
};

enum class Special : std::uint8_t { Unk = 0, Mask = 1, Pad = 2 };

inline constexpr std::array<std::string_view, 3> kSpecialNames = {
    "[UNK]", "[MASK]", "[PAD]"};

/// Dense character vocabulary: characters in byte order first, then UNK,
/// MASK and PAD.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<char> characters);

  std::size_t size() const { return characters_.size() + 3; }
  TokenId unk() const { return static_cast<TokenId>(characters_.size()); }
  TokenId mask() const { return unk() + 1; }
  TokenId pad() const { return unk() + 2; }
  bool is_special(TokenId id) const { return id >= unk(); }

  std::optional<TokenId> id_of(char c) const;
  char char_of(TokenId id) const;  // undefined for specials
  const std::vector<char>& characters() const { return characters_; }
  /// Ids of every non-special token; used for random replacement.
  std::vector<TokenId> regular_ids() const;

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<char> characters_;
  std::array<std::int32_t, 256> index_{};
};

struct Tokenizer {
  Vocabulary vocab;
  CompressionMap compression;
};

/// Characters of the compressed corpus plus every marker. Throws
/// MarkerCollision if a marker already occurs in the raw corpus and
/// InvalidArgument on an empty corpus.
Vocabulary build_vocabulary(std::span<const std::string> corpus,
                            const CompressionMap& compression);

/// Motifs replaced longest-first left to right, then one id per character.
/// Characters outside the vocabulary, and raw occurrences of marker
/// characters, become UNK.
std::vector<TokenId> encode(std::string_view input, const Vocabulary& vocab,
                            const CompressionMap& compression);

/// Throws UndecodableToken on special or out-of-range ids.
std::string decode(std::span<const TokenId> tokens, const Vocabulary& vocab,
                   const CompressionMap& compression);

/// JSON layout: {"markers":[{"motif","marker"}...],"tokens":[...],
/// "specials":{"[UNK]":id,"[MASK]":id,"[PAD]":id}}.
void save_tokenizer(const Tokenizer& tok, const std::filesystem::path& path);
Tokenizer load_tokenizer(const std::filesystem::path& path);
std::string tokenizer_to_json(const Tokenizer& tok);
Tokenizer tokenizer_from_json(std::string_view json);

}  // namespace helmlm::tokenizer
