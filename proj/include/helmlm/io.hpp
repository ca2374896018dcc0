// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace helmlm::io {

/// Splits one RFC 4180 line; quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_escape(std::string_view field);

/// Reads tabular records as JSON objects. `.csv` uses the header row (cells
/// stay strings), `.jsonl`/`.ndjson`/`.json` hold one object per line, and any
/// other extension is plain text with one {"helm": line} per non-empty line.
std::vector<nlohmann::json> read_records(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Accepts a JSON number or a numeric string. Throws InvalidArgument.
double as_number(const nlohmann::json& value, std::string_view field);
std::vector<double> as_vector(const nlohmann::json& value, std::string_view field);

/// Lower-case hex SHA-256 of a byte string or a file's contents.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace helmlm::io
