// Copyright 2026 The helm-lm Authors
// SPDX-License-Identifier: Apache-2.0

#include "helmlm/helm.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <tuple>

#include "helmlm/errors.hpp"

namespace helmlm::helm {

std::string_view to_string(PolymerKind kind) {
  return kind == PolymerKind::Peptide ? "PEPTIDE" : "CHEM";
}

std::string_view to_string(RGroup group) {
  switch (group) {
    case RGroup::R1: return "R1";
    case RGroup::R2: return "R2";
    case RGroup::R3: return "R3";
  }
  return "R?";
}

std::string_view to_string(StructureType type) {
  switch (type) {
    case StructureType::Cyclic: return "cyclic";
    case StructureType::Lariat: return "lariat";
    case StructureType::Linear: return "linear";
  }
  return "unknown";
}

namespace {

struct PolymerIdParts {
  PolymerKind kind;
  long number;
};

std::optional<PolymerIdParts> split_polymer_id(std::string_view id) {
  for (auto kind : {PolymerKind::Peptide, PolymerKind::Chem}) {
    const auto prefix = to_string(kind);
    if (!id.starts_with(prefix)) continue;
    auto digits = id.substr(prefix.size());
    if (digits.empty() || digits.front() == '0') return std::nullopt;
    long number = 0;
    auto [ptr, ec] =
        std::from_chars(digits.data(), digits.data() + digits.size(), number);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
      return std::nullopt;
    }
    return PolymerIdParts{kind, number};
  }
  return std::nullopt;
}

auto endpoint_tuple(const Endpoint& e) {
  auto parts = split_polymer_id(e.polymer);
  int kind = parts ? static_cast<int>(parts->kind) : 99;
  long number = parts ? parts->number : 0;
  return std::make_tuple(kind, number, e.polymer, e.index,
                         static_cast<int>(e.rgroup));
}

Connection oriented(Connection c) {
  if (endpoint_less(c.target, c.source)) std::swap(c.source, c.target);
  return c;
}

bool connection_less(const Connection& a, const Connection& b) {
  auto key = [](const Connection& c) {
    return std::make_tuple(endpoint_tuple(c.source), endpoint_tuple(c.target));
  };
  return key(a) < key(b);
}

bool is_forbidden_in_code(char c) {
  switch (c) {
    case '.': case '{': case '}': case '$': case '|': case ',':
    case '[': case ']':
      return true;
    default:
      return std::isspace(static_cast<unsigned char>(c)) != 0;
  }
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  HelmSequence parse() {
    HelmSequence seq;
    seq.polymers.push_back(parse_polymer());
    while (peek() == '|') {
      ++pos_;
      seq.polymers.push_back(parse_polymer());
    }
    expect('$');
    if (peek() != '$') {
      seq.connections.push_back(parse_connection());
      while (peek() == '|') {
        ++pos_;
        seq.connections.push_back(parse_connection());
      }
    }
    expect('$');
    seq.polymer_groups = take_until('$');
    expect('$');
    seq.annotations = take_until('$');
    expect('$');
    if (pos_ < text_.size()) {
      auto version = text_.substr(pos_);
      for (char c : version) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.') {
          fail("version tag of letters, digits and '.'");
        }
      }
      seq.version = std::string(version);
      pos_ = text_.size();
    }
    return seq;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  [[noreturn]] void fail(std::string_view expected) const {
    std::string found = pos_ < text_.size()
                            ? "'" + std::string(1, text_[pos_]) + "'"
                            : std::string("end of input");
    throw Error(ErrorCode::SyntaxError,
                "at position " + std::to_string(pos_) + ": expected " +
                    std::string(expected) + ", found " + found);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("'") + c + "'");
    ++pos_;
  }

  std::string take_until(char stop) {
    auto end = text_.find(stop, pos_);
    if (end == std::string_view::npos) fail(std::string("'") + stop + "'");
    std::string out(text_.substr(pos_, end - pos_));
    pos_ = end;
    return out;
  }

  std::string parse_polymer_id() {
    const auto start = pos_;
    while (std::isupper(static_cast<unsigned char>(peek()))) ++pos_;
    while (std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    std::string id(text_.substr(start, pos_ - start));
    if (!split_polymer_id(id)) {
      pos_ = start;
      fail("polymer id (PEPTIDE<n> or CHEM<n>)");
    }
    return id;
  }

  Monomer parse_monomer() {
    if (peek() == '[') {
      ++pos_;
      const auto start = pos_;
      while (pos_ < text_.size() && !is_forbidden_in_code(text_[pos_])) ++pos_;
      if (pos_ == start) fail("monomer code");
      Monomer m{std::string(text_.substr(start, pos_ - start)), true};
      expect(']');
      return m;
    }
    if (std::isupper(static_cast<unsigned char>(peek()))) {
      return Monomer{std::string(1, text_[pos_++]), false};
    }
    fail("monomer (uppercase letter or bracketed code)");
  }

  Polymer parse_polymer() {
    Polymer p;
    const auto id_pos = pos_;
    p.id = parse_polymer_id();
    p.kind = split_polymer_id(p.id)->kind;
    expect('{');
    p.monomers.push_back(parse_monomer());
    while (peek() == '.') {
      ++pos_;
      p.monomers.push_back(parse_monomer());
    }
    expect('}');
    if (p.kind == PolymerKind::Chem && p.monomers.size() != 1) {
      pos_ = id_pos;
      fail("CHEM polymer with exactly one monomer");
    }
    return p;
  }

  int parse_index() {
    const auto start = pos_;
    while (std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    int value = 0;
    auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_,
                                     value);
    if (pos_ == start || ec != std::errc{} || value < 1) {
      pos_ = start;
      fail("1-based monomer index");
    }
    return value;
  }

  RGroup parse_rgroup() {
    if (peek() == 'R' && pos_ + 1 < text_.size()) {
      char d = text_[pos_ + 1];
      if (d >= '1' && d <= '3') {
        pos_ += 2;
        return static_cast<RGroup>(d - '0');
      }
    }
    fail("R-group (R1, R2 or R3)");
  }

  Connection parse_connection() {
    Connection c;
    c.source.polymer = parse_polymer_id();
    expect(',');
    c.target.polymer = parse_polymer_id();
    expect(',');
    c.source.index = parse_index();
    expect(':');
    c.source.rgroup = parse_rgroup();
    expect('-');
    c.target.index = parse_index();
    expect(':');
    c.target.rgroup = parse_rgroup();
    return c;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

void validate(const HelmSequence& seq) {
  for (std::size_t i = 0; i < seq.polymers.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (seq.polymers[i].id == seq.polymers[j].id) {
        throw Error(ErrorCode::DuplicatePolymerId, seq.polymers[i].id);
      }
    }
  }
  auto check_endpoint = [&](const Endpoint& e) {
    const Polymer* p = seq.find_polymer(e.polymer);
    if (p == nullptr) {
      throw Error(ErrorCode::DanglingConnection,
                  "unknown polymer " + e.polymer);
    }
    if (e.index < 1 || static_cast<std::size_t>(e.index) > p->monomers.size()) {
      throw Error(ErrorCode::DanglingConnection,
                  e.polymer + " has no monomer " + std::to_string(e.index));
    }
  };
  for (std::size_t i = 0; i < seq.connections.size(); ++i) {
    const auto& c = seq.connections[i];
    check_endpoint(c.source);
    check_endpoint(c.target);
    if (c.source == c.target) {
      throw Error(ErrorCode::SyntaxError,
                  "connection joins an attachment point to itself");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (seq.connections[j] == c) {
        throw Error(ErrorCode::DuplicateConnection,
                    c.source.polymer + "," + c.target.polymer + "," +
                        std::to_string(c.source.index) + "-" +
                        std::to_string(c.target.index));
      }
    }
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

void write_endpoint(std::string& out, const Endpoint& e) {
  out += std::to_string(e.index);
  out += ':';
  out += to_string(e.rgroup);
}

}  // namespace

bool endpoint_less(const Endpoint& a, const Endpoint& b) {
  return endpoint_tuple(a) < endpoint_tuple(b);
}

bool Connection::operator==(const Connection& other) const {
  return (source == other.source && target == other.target) ||
         (source == other.target && target == other.source);
}

const Polymer* HelmSequence::find_polymer(std::string_view id) const {
  auto it = std::find_if(polymers.begin(), polymers.end(),
                         [&](const Polymer& p) { return p.id == id; });
  return it == polymers.end() ? nullptr : &*it;
}

std::size_t HelmSequence::monomer_count() const {
  std::size_t n = 0;
  for (const auto& p : polymers) n += p.monomers.size();
  return n;
}

bool HelmSequence::operator==(const HelmSequence& other) const {
  if (polymers != other.polymers || polymer_groups != other.polymer_groups ||
      annotations != other.annotations || version != other.version ||
      connections.size() != other.connections.size()) {
    return false;
  }
  auto sorted = [](std::vector<Connection> cs) {
    for (auto& c : cs) c = oriented(std::move(c));
    std::sort(cs.begin(), cs.end(), connection_less);
    return cs;
  };
  auto a = sorted(connections);
  auto b = sorted(other.connections);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].source != b[i].source || a[i].target != b[i].target) return false;
  }
  return true;
}

HelmSequence parse_helm(std::string_view input) {
  auto seq = Parser(trim(input)).parse();
  validate(seq);
  return seq;
}

std::string serialize_helm(const HelmSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.polymers.size(); ++i) {
    const auto& p = seq.polymers[i];
    if (i > 0) out += '|';
    out += p.id;
    out += '{';
    for (std::size_t m = 0; m < p.monomers.size(); ++m) {
      if (m > 0) out += '.';
      const auto& mono = p.monomers[m];
      if (mono.bracketed) {
        out += '[';
        out += mono.symbol;
        out += ']';
      } else {
        out += mono.symbol;
      }
    }
    out += '}';
  }
  out += '$';
  std::vector<Connection> connections;
  connections.reserve(seq.connections.size());
  for (const auto& c : seq.connections) connections.push_back(oriented(c));
  std::sort(connections.begin(), connections.end(), connection_less);
  for (std::size_t i = 0; i < connections.size(); ++i) {
    const auto& c = connections[i];
    if (i > 0) out += '|';
    out += c.source.polymer;
    out += ',';
    out += c.target.polymer;
    out += ',';
    write_endpoint(out, c.source);
    out += '-';
    write_endpoint(out, c.target);
  }
  out += '$';
  out += seq.polymer_groups;
  out += '$';
  out += seq.annotations;
  out += '$';
  if (seq.version) out += *seq.version;
  return out;
}

StructureSummary classify_structure(const HelmSequence& seq) {
  StructureSummary summary;
  bool uses_side_chain = false;
  for (const auto& c : seq.connections) {
    if (c.source.polymer != c.target.polymer) continue;
    ++summary.n_rings;
    if (c.source.rgroup == RGroup::R3 || c.target.rgroup == RGroup::R3) {
      uses_side_chain = true;
    }
  }
  if (summary.n_rings == 0) {
    summary.structure_type = StructureType::Linear;
  } else {
    summary.structure_type =
        uses_side_chain ? StructureType::Lariat : StructureType::Cyclic;
  }
  return summary;
}

HelmSequence canonicalize(const HelmSequence& seq) {
  HelmSequence out;
  std::map<std::string, std::string, std::less<>> renamed;
  int peptides = 0;
  int chems = 0;
  for (const auto& p : seq.polymers) {
    Polymer q = p;
    const int n = p.kind == PolymerKind::Peptide ? ++peptides : ++chems;
    q.id = std::string(to_string(p.kind)) + std::to_string(n);
    renamed.emplace(p.id, q.id);
    out.polymers.push_back(std::move(q));
  }
  for (const auto& c : seq.connections) {
    Connection r = c;
    r.source.polymer = renamed.at(c.source.polymer);
    r.target.polymer = renamed.at(c.target.polymer);
    out.connections.push_back(oriented(std::move(r)));
  }
  std::sort(out.connections.begin(), out.connections.end(), connection_less);
  return out;
}

std::string canonical_key(const HelmSequence& seq) {
  return serialize_helm(canonicalize(seq));
}

}  // namespace helmlm::helm
