// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "helmlm/encoder.hpp"

namespace helmlm::checkpoint {

struct NamedTensor {
  std::string name;
  tensor::Shape shape;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

/// File layout: "HELMLMCK", uint64 little-endian header length, JSON header
/// {format_version, config, tensors:[{name, shape}], metadata}, then every
/// tensor as little-endian float32 in header order.
struct Checkpoint {
  model::ModelConfig config;
  std::vector<NamedTensor> tensors;  // encoder parameters first, then extras
  nlohmann::json metadata = nlohmann::json::object();

  const NamedTensor* find(const std::string& name) const;
  /// Tensors whose name starts with prefix, in file order.
  std::vector<const NamedTensor*> with_prefix(const std::string& prefix) const;
};

inline constexpr int kFormatVersion = 1;

std::string serialize(const Checkpoint& ckpt);
/// Validates magic, lengths and the encoder manifest: missing parameters
/// raise CheckpointError listing every name; wrong shapes raise
/// CheckpointError naming the tensor.
Checkpoint deserialize(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// SHA-256 over the float32 payload of the tensors matching prefix.
std::string weights_hash(const Checkpoint& ckpt, const std::string& prefix = "");

template <typename T>
NamedTensor to_named(const tensor::Parameter<T>& p);
template <typename T>
void copy_into(const NamedTensor& src, tensor::Parameter<T>& dst);

/// Encoder parameters in creation order.
template <typename T>
Checkpoint from_encoder(const model::Encoder<T>& encoder);
/// Builds an encoder for ckpt.config and overwrites its weights.
template <typename T>
model::Encoder<T> to_encoder(const Checkpoint& ckpt);
template <typename T>
void load_weights(model::Encoder<T>& encoder, const Checkpoint& ckpt);

}  // namespace helmlm::checkpoint
