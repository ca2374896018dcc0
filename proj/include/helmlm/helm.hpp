// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace helmlm::helm {

enum class PolymerKind { Peptide, Chem };
enum class RGroup { R1 = 1, R2 = 2, R3 = 3 };
enum class StructureType { Cyclic, Lariat, Linear };

std::string_view to_string(PolymerKind kind);
std::string_view to_string(RGroup group);
std::string_view to_string(StructureType type);

struct Monomer {
  std::string symbol;
  bool bracketed = false;

  bool operator==(const Monomer&) const = default;
};

struct Polymer {
  std::string id;  // e.g. PEPTIDE1
  PolymerKind kind = PolymerKind::Peptide;
  std::vector<Monomer> monomers;

  bool operator==(const Polymer&) const = default;
};

struct Endpoint {
  std::string polymer;
  int index = 1;  // 1-based monomer position
  RGroup rgroup = RGroup::R1;

  bool operator==(const Endpoint&) const = default;
};

/// A connection is an unordered pair of attachment points; equality ignores
/// which endpoint is written first.
struct Connection {
  Endpoint source;
  Endpoint target;

  bool operator==(const Connection& other) const;
};

/// Parsed HELM string. Connections form a set: two sequences compare equal
/// when their polymers match in order and their connection lists hold the same
/// endpoint pairs in any order and orientation.
struct HelmSequence {
  std::vector<Polymer> polymers;
  std::vector<Connection> connections;
  std::string polymer_groups;  // preserved verbatim
  std::string annotations;     // preserved verbatim
  std::optional<std::string> version;

  const Polymer* find_polymer(std::string_view id) const;
  std::size_t monomer_count() const;

  bool operator==(const HelmSequence& other) const;
};

struct StructureSummary {
  StructureType structure_type = StructureType::Linear;
  int n_rings = 0;

  bool operator==(const StructureSummary&) const = default;
};

/// Throws helmlm::Error with SyntaxError, DanglingConnection,
/// DuplicatePolymerId or DuplicateConnection.
HelmSequence parse_helm(std::string_view input);

/// Polymers are written in stored order; connections in canonical order with
/// each pair oriented smaller-endpoint-first.
std::string serialize_helm(const HelmSequence& seq);

StructureSummary classify_structure(const HelmSequence& seq);

/// Polymers renumbered per kind by first appearance, connections oriented and
/// sorted. Groups, annotations and version are dropped.
HelmSequence canonicalize(const HelmSequence& seq);

/// Deduplication key: the serialization of canonicalize(seq).
std::string canonical_key(const HelmSequence& seq);

/// Ordering used for canonical connection lists. Polymer ids compare by kind
/// then numeric suffix, so PEPTIDE2 sorts before PEPTIDE10.
bool endpoint_less(const Endpoint& a, const Endpoint& b);

}  // namespace helmlm::helm
