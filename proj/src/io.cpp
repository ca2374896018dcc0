// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "helmlm/errors.hpp"

namespace helmlm::io {

namespace fs = std::filesystem;

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw Error(ErrorCode::IoError, "unterminated quote in CSV line");
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<nlohmann::json> read_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  const auto ext = path.extension().string();
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t line_no = 0;
  if (ext == ".csv") {
    std::vector<std::string> header;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      auto fields = split_csv_line(line);
      if (header.empty()) {
        header = std::move(fields);
        continue;
      }
      if (fields.size() != header.size()) {
        throw Error(ErrorCode::IoError, path.string() + ":" + std::to_string(line_no) +
                                            ": expected " + std::to_string(header.size()) +
                                            " fields");
      }
      nlohmann::json row = nlohmann::json::object();
      for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = fields[i];
      rows.push_back(std::move(row));
    }
  } else if (ext == ".jsonl" || ext == ".ndjson" || ext == ".json") {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        rows.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IoError,
                    path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  } else {
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      rows.push_back(nlohmann::json{{"helm", line}});
    }
  }
  return rows;
}

double as_number(const nlohmann::json& value, std::string_view field) {
  if (value.is_number()) return value.get<double>();
  if (value.is_string()) {
    const auto& s = value.get_ref<const std::string&>();
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec == std::errc{} && ptr == s.data() + s.size()) return out;
  }
  throw Error(ErrorCode::InvalidArgument,
              "field '" + std::string(field) + "' is not numeric: " + value.dump());
}

std::vector<double> as_vector(const nlohmann::json& value, std::string_view field) {
  if (!value.is_array()) {
    throw Error(ErrorCode::InvalidArgument,
                "field '" + std::string(field) + "' is not an array");
  }
  std::vector<double> out;
  out.reserve(value.size());
  for (const auto& v : value) out.push_back(as_number(v, field));
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

}  // namespace helmlm::io
