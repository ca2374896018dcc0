// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "helmlm/errors.hpp"
#include "helmlm/io.hpp"

namespace helmlm::checkpoint {

namespace {

constexpr char kMagic[8] = {'H', 'E', 'L', 'M', 'L', 'M', 'C', 'K'};

static_assert(sizeof(float) == 4);

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_float(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xff);
}

float get_float(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

[[noreturn]] void corrupt(const std::string& what) {
  throw Error(ErrorCode::CheckpointError, what);
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::vector<const NamedTensor*> Checkpoint::with_prefix(const std::string& prefix) const {
  std::vector<const NamedTensor*> out;
  for (const auto& t : tensors) {
    if (t.name.compare(0, prefix.size(), prefix) == 0) out.push_back(&t);
  }
  return out;
}

std::string serialize(const Checkpoint& ckpt) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) {
    if (t.data.size() != tensor::element_count(t.shape)) {
      throw Error(ErrorCode::ShapeMismatch, "tensor " + t.name + " data does not match its shape");
    }
    manifest.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const nlohmann::json header = {{"format_version", kFormatVersion},
                                 {"config", ckpt.config},
                                 {"tensors", manifest},
                                 {"metadata", ckpt.metadata}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, text.size());
  out += text;
  for (const auto& t : ckpt.tensors) {
    for (float f : t.data) put_float(out, f);
  }
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    corrupt("not a helm-lm checkpoint (bad magic)");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) corrupt("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("unreadable header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    if (header.at("format_version").get<int>() != kFormatVersion) {
      corrupt("unsupported format version " + header.at("format_version").dump());
    }
    ckpt.config = header.at("config").get<model::ModelConfig>();
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<tensor::Shape>();
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("malformed header: ") + e.what());
  }

  std::size_t offset = 16 + header_len;
  for (auto& t : ckpt.tensors) {
    const std::size_t count = tensor::element_count(t.shape);
    if (count > (bytes.size() - offset) / 4) corrupt("payload truncated at tensor " + t.name);
    t.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) t.data[i] = get_float(bytes.data() + offset + 4 * i);
    offset += 4 * count;
  }
  if (offset != bytes.size()) corrupt("trailing bytes after the last tensor");

  ckpt.config.validate();
  std::string missing;
  for (const auto& [name, shape] : model::parameter_manifest(ckpt.config)) {
    const auto* t = ckpt.find(name);
    if (t == nullptr) {
      missing += (missing.empty() ? "" : ", ") + name;
    } else if (t->shape != shape) {
      corrupt("tensor " + name + " has shape " + tensor::shape_string(t->shape) +
              ", the config expects " + tensor::shape_string(shape));
    }
  }
  if (!missing.empty()) corrupt("missing tensor(s): " + missing);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

std::string weights_hash(const Checkpoint& ckpt, const std::string& prefix) {
  std::string payload;
  for (const auto* t : ckpt.with_prefix(prefix)) {
    payload += t->name;
    payload += '\0';
    for (float f : t->data) put_float(payload, f);
  }
  return io::sha256_hex(payload);
}

template <typename T>
NamedTensor to_named(const tensor::Parameter<T>& p) {
  NamedTensor t;
  t.name = p.name();
  t.shape = p.value().shape();
  t.data.assign(p.value().storage().begin(), p.value().storage().end());
  return t;
}

template <typename T>
void copy_into(const NamedTensor& src, tensor::Parameter<T>& dst) {
  if (src.shape != dst.value().shape()) {
    throw Error(ErrorCode::CheckpointError,
                "tensor " + src.name + " has shape " + tensor::shape_string(src.shape) +
                    ", expected " + tensor::shape_string(dst.value().shape()));
  }
  auto& out = dst.value().storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src.data[i]);
}

template <typename T>
Checkpoint from_encoder(const model::Encoder<T>& encoder) {
  Checkpoint ckpt;
  ckpt.config = encoder.config();
  const auto& params = encoder.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ckpt.tensors.push_back(to_named(params[i]));
  return ckpt;
}

template <typename T>
void load_weights(model::Encoder<T>& encoder, const Checkpoint& ckpt) {
  auto& params = encoder.parameters();
  std::string missing;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* t = ckpt.find(params[i].name());
    if (t == nullptr) {
      missing += (missing.empty() ? "" : ", ") + params[i].name();
      continue;
    }
    copy_into(*t, params[i]);
  }
  if (!missing.empty()) corrupt("missing tensor(s): " + missing);
}

template <typename T>
model::Encoder<T> to_encoder(const Checkpoint& ckpt) {
  model::Encoder<T> encoder(ckpt.config, 0);
  load_weights(encoder, ckpt);
  return encoder;
}

#define HELMLM_INSTANTIATE(T)                                              \
  template NamedTensor to_named(const tensor::Parameter<T>&);             \
  template void copy_into(const NamedTensor&, tensor::Parameter<T>&);     \
  template Checkpoint from_encoder(const model::Encoder<T>&);             \
  template void load_weights(model::Encoder<T>&, const Checkpoint&);      \
  template model::Encoder<T> to_encoder(const Checkpoint&);

HELMLM_INSTANTIATE(float)
HELMLM_INSTANTIATE(double)

#undef HELMLM_INSTANTIATE

}  // namespace helmlm::checkpoint
