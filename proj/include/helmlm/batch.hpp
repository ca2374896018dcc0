// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "helmlm/tokenizer.hpp"

namespace helmlm {

using tokenizer::TokenId;
using Mask = std::vector<std::uint8_t>;

/// Right-padded token matrix, stored row-major as batch x seq_len.
struct EncoderInput {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> ids;
  Mask attention_mask;  // 0 at PAD
};

struct MaskedSpan {
  std::size_t start = 0;         // position in the sequence
  std::size_t length = 0;        // positions actually masked
  std::size_t drawn_length = 0;  // clipped geometric draw before truncation
  enum class Replacement : std::uint8_t { Mask, Random, Keep } replacement =
      Replacement::Mask;
};

/// One span-masked sequence before padding.
struct MaskedRow {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  Mask loss_mask;
  std::vector<MaskedSpan> spans;
};

struct MaskedBatch {
  EncoderInput input;
  std::vector<TokenId> target_ids;
  Mask loss_mask;
};

EncoderInput make_input(std::span<const std::vector<TokenId>> sequences,
                        TokenId pad_id);
MaskedBatch collate(std::span<const MaskedRow> rows, TokenId pad_id);

}  // namespace helmlm
