#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyper2/common.hpp"

// Data model and ingestion: fact parsing (token lines and role-value
// records), vocabulary construction, literal filtering and reciprocal
// augmentation. A fact is a relation plus an ordered entity list: primary
// head, primary tail, zero or more affiliated entities.

namespace hyper2 {

// ---------------------------------------------------------------------------
// Raw (pre-index) facts

struct RawFact {
  std::string relation;
  std::string head;
  std::string tail;
  std::vector<std::string> affiliated;

  int arity() const { return 2 + static_cast<int>(affiliated.size()); }

  // canonical single-space form; parse_nary_line(to_line()) round-trips
  std::string to_line() const {
    std::string out = relation;
    out += ' ';
    out += head;
    out += ' ';
    out += tail;
    for (const auto& a : affiliated) {
      out += ' ';
      out += a;
    }
    return out;
  }
};

// Splits on runs of ASCII whitespace: relation, head, tail, affiliated...
inline RawFact parse_nary_line(std::string_view line, std::size_t line_no = 0,
                               const std::string& file = "") {
  std::vector<std::string> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) toks.emplace_back(line.substr(start, i - start));
  }
  if (toks.size() < 3) {
    std::string where = file.empty() ? "" : file + ":";
    throw data_error("parse error at " + where + std::to_string(line_no) +
                     ": a fact needs a relation and at least two entities, got " +
                     std::to_string(toks.size()) + " token(s)");
  }
  RawFact f;
  f.relation = std::move(toks[0]);
  f.head = std::move(toks[1]);
  f.tail = std::move(toks[2]);
  f.affiliated.assign(std::make_move_iterator(toks.begin() + 3),
                      std::make_move_iterator(toks.end()));
  return f;
}

// Role-value record: {head, relation, tail, pairs: [[role, value], ...],
// literals: [...]}. Role labels are discarded; the values become affiliated
// entities in record order. `literals` lists values of this record that
// should be treated as literal (non-entity) values downstream.
struct RoleValueRecord {
  RawFact fact;
  std::vector<std::string> literals;
};

inline RoleValueRecord parse_role_value_record(const nlohmann::json& rec,
                                               std::size_t line_no = 0,
                                               const std::string& file = "") {
  auto where = [&] {
    std::string w = file.empty() ? "record" : file + ":" + std::to_string(line_no);
    return w;
  };
  if (!rec.is_object()) throw data_error("parse error at " + where() + ": expected a JSON object");
  for (const char* key : {"head", "relation", "tail"}) {
    if (!rec.contains(key) || !rec[key].is_string() || rec[key].get<std::string>().empty())
      throw data_error("parse error at " + where() + ": missing or non-string \"" +
                       key + "\"");
  }
  RoleValueRecord out;
  out.fact.head = rec["head"].get<std::string>();
  out.fact.relation = rec["relation"].get<std::string>();
  out.fact.tail = rec["tail"].get<std::string>();
  if (rec.contains("pairs")) {
    if (!rec["pairs"].is_array())
      throw data_error("parse error at " + where() + ": \"pairs\" must be an array");
    for (const auto& p : rec["pairs"]) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
        throw data_error("parse error at " + where() +
                         ": each pair must be [role, value] of strings");
      out.fact.affiliated.push_back(p[1].get<std::string>());  // role discarded
    }
  }
  if (rec.contains("literals")) {
    if (!rec["literals"].is_array())
      throw data_error("parse error at " + where() + ": \"literals\" must be an array");
    for (const auto& v : rec["literals"]) {
      if (!v.is_string())
        throw data_error("parse error at " + where() + ": literals must be strings");
      out.literals.push_back(v.get<std::string>());
    }
  }
  return out;
}

// Default literal detector: numeric values, ISO-style dates (with optional
// time suffix) and quoted strings.
inline bool is_default_literal(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return true;
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  if (i >= s.size()) return false;
  std::size_t digits = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++digits;
  if (digits == 0) {
    // allow ".5"
    if (i < s.size() && s[i] == '.') {
      std::size_t j = i + 1, frac = 0;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j, ++frac;
      return frac > 0 && j == s.size();
    }
    return false;
  }
  if (i == s.size()) return true;  // plain integer
  if (s[i] == '.') {
    ++i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i == s.size()) return true;
    if (s[i] == 'e' || s[i] == 'E') {
      ++i;
      if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
      std::size_t e = 0;
      while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++e;
      return e > 0 && i == s.size();
    }
    return false;
  }
  if (s[i] == 'e' || s[i] == 'E') {
    ++i;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    std::size_t e = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++e;
    return e > 0 && i == s.size();
  }
  // date core: YYYY(-...)-MM-DD, optionally followed by T<time...>
  if (s[i] == '-' && digits >= 4) {
    auto two_digits = [&]() {
      if (i + 2 > s.size()) return false;
      bool ok = std::isdigit(static_cast<unsigned char>(s[i])) &&
                std::isdigit(static_cast<unsigned char>(s[i + 1]));
      i += 2;
      return ok;
    };
    ++i;
    if (!two_digits()) return false;
    if (i >= s.size() || s[i] != '-') return false;
    ++i;
    if (!two_digits()) return false;
    return i == s.size() || s[i] == 'T';
  }
  return false;
}

using LiteralPredicate = std::function<bool(const std::string&)>;

// ---------------------------------------------------------------------------
// Indexed facts

struct Fact {
  int32_t relation = -1;
  int32_t head = -1;
  int32_t tail = -1;
  std::vector<int32_t> affiliated;

  int arity() const { return 2 + static_cast<int>(affiliated.size()); }
  bool binary() const { return affiliated.empty(); }
  bool operator==(const Fact& o) const = default;
};

struct FactHash {
  std::size_t operator()(const Fact& f) const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a over the id sequence
    auto mix = [&h](uint64_t v) {
      h ^= v;
      h *= 1099511628211ull;
    };
    mix(static_cast<uint32_t>(f.relation));
    mix(static_cast<uint32_t>(f.head));
    mix(static_cast<uint32_t>(f.tail));
    for (int32_t a : f.affiliated) mix(static_cast<uint32_t>(a));
    return static_cast<std::size_t>(h);
  }
};

using KnownFacts = std::unordered_set<Fact, FactHash>;

// ---------------------------------------------------------------------------
// Vocabulary

struct Vocabulary {
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  std::unordered_map<std::string, int32_t> entity_ids;
  std::unordered_map<std::string, int32_t> relation_ids;
  int32_t n_base_relations = 0;
  bool has_reciprocals = false;

  int32_t num_entities() const { return static_cast<int32_t>(entities.size()); }
  int32_t num_relations() const { return static_cast<int32_t>(relations.size()); }

  int32_t entity_id(const std::string& name) const {
    auto it = entity_ids.find(name);
    if (it == entity_ids.end()) throw data_error("unknown entity: " + name);
    return it->second;
  }
  int32_t relation_id(const std::string& name) const {
    auto it = relation_ids.find(name);
    if (it == relation_ids.end()) throw data_error("unknown relation: " + name);
    return it->second;
  }

  int32_t add_entity(const std::string& name) {
    auto [it, fresh] = entity_ids.try_emplace(name, num_entities());
    if (fresh) entities.push_back(name);
    return it->second;
  }
  int32_t add_relation(const std::string& name) {
    auto [it, fresh] = relation_ids.try_emplace(name, num_relations());
    if (fresh) relations.push_back(name);
    return it->second;
  }

  bool is_reciprocal(int32_t r) const { return has_reciprocals && r >= n_base_relations; }
  int32_t reciprocal_of(int32_t r) const {
    if (!has_reciprocals) throw data_error("vocabulary has no reciprocal relations");
    return r < n_base_relations ? r + n_base_relations : r - n_base_relations;
  }
};

// ---------------------------------------------------------------------------
// Dataset

struct RawDataset {
  std::vector<RawFact> train;
  std::vector<RawFact> valid;
  std::vector<RawFact> test;
  bool has_valid = false;
};

struct Dataset {
  std::vector<Fact> train;
  std::vector<Fact> valid;
  std::vector<Fact> test;
  bool has_valid = false;
  Vocabulary vocab;
  KnownFacts known;  // union of the three splits
  bool reciprocals_added = false;

  void rebuild_known() {
    known.clear();
    known.reserve(train.size() + valid.size() + test.size());
    for (const auto* split : {&train, &valid, &test})
      for (const Fact& f : *split) known.insert(f);
  }
};

// Deterministic index assignment: first appearance over train, then valid,
// then test; within a fact, relation then head, tail, affiliated in order.
inline Vocabulary build_vocab(const RawDataset& raw) {
  Vocabulary v;
  for (const auto* split : {&raw.train, &raw.valid, &raw.test}) {
    for (const RawFact& f : *split) {
      v.add_relation(f.relation);
      v.add_entity(f.head);
      v.add_entity(f.tail);
      for (const auto& a : f.affiliated) v.add_entity(a);
    }
  }
  v.n_base_relations = v.num_relations();
  return v;
}

inline std::vector<Fact> index_facts(const std::vector<RawFact>& raw,
                                     const Vocabulary& vocab) {
  std::vector<Fact> out;
  out.reserve(raw.size());
  for (const RawFact& rf : raw) {
    Fact f;
    f.relation = vocab.relation_id(rf.relation);
    f.head = vocab.entity_id(rf.head);
    f.tail = vocab.entity_id(rf.tail);
    f.affiliated.reserve(rf.affiliated.size());
    for (const auto& a : rf.affiliated) f.affiliated.push_back(vocab.entity_id(a));
    out.push_back(std::move(f));
  }
  return out;
}

inline Dataset make_dataset(const RawDataset& raw) {
  Dataset d;
  d.vocab = build_vocab(raw);
  d.train = index_facts(raw.train, d.vocab);
  d.valid = index_facts(raw.valid, d.vocab);
  d.test = index_facts(raw.test, d.vocab);
  d.has_valid = raw.has_valid;
  d.rebuild_known();
  return d;
}

inline RawFact raw_from_fact(const Fact& f, const Vocabulary& vocab) {
  RawFact rf;
  rf.relation = vocab.relations.at(f.relation);
  rf.head = vocab.entities.at(f.head);
  rf.tail = vocab.entities.at(f.tail);
  for (int32_t a : f.affiliated) rf.affiliated.push_back(vocab.entities.at(a));
  return rf;
}

// ---------------------------------------------------------------------------
// Literal filtering (Wiki-filtered construction)

struct FilterStats {
  std::size_t dropped_primary_literal = 0;   // literal head or tail, any arity
  std::size_t affiliated_values_removed = 0; // literal affiliated values erased
  std::size_t facts_in = 0;
  std::size_t facts_out = 0;

  std::size_t dropped() const { return facts_in - facts_out; }
};

// Binary facts with a literal tail (or head) are dropped; n-ary facts keep
// the primary triple and shed literal affiliated values. A fact reduced to
// arity 2 stays as a binary fact; a fact whose head or tail is a literal is
// dropped outright since a primary triple is required.
inline std::vector<RawFact> filter_literal_facts(const std::vector<RawFact>& in,
                                                 const LiteralPredicate& is_literal,
                                                 FilterStats& stats) {
  std::vector<RawFact> out;
  out.reserve(in.size());
  for (const RawFact& f : in) {
    ++stats.facts_in;
    if (is_literal(f.head) || is_literal(f.tail)) {
      ++stats.dropped_primary_literal;
      continue;
    }
    RawFact kept;
    kept.relation = f.relation;
    kept.head = f.head;
    kept.tail = f.tail;
    for (const auto& a : f.affiliated) {
      if (is_literal(a))
        ++stats.affiliated_values_removed;
      else
        kept.affiliated.push_back(a);
    }
    ++stats.facts_out;
    out.push_back(std::move(kept));
  }
  return out;
}

inline RawDataset filter_literals(const RawDataset& raw, const LiteralPredicate& is_literal,
                                  FilterStats* stats_out = nullptr) {
  RawDataset out;
  FilterStats stats;
  out.train = filter_literal_facts(raw.train, is_literal, stats);
  out.valid = filter_literal_facts(raw.valid, is_literal, stats);
  out.test = filter_literal_facts(raw.test, is_literal, stats);
  out.has_valid = raw.has_valid;
  if (stats_out) *stats_out = stats;
  return out;
}

// ---------------------------------------------------------------------------
// Reciprocal augmentation

// Doubles the relation vocabulary and appends, to the training stream only,
// one mirrored fact (r^-1, tail, head, affiliated...) per training fact.
inline void add_reciprocals(Dataset& d) {
  if (d.reciprocals_added) throw data_error("reciprocal relations already added");
  Vocabulary& v = d.vocab;
  const int32_t n_base = v.num_relations();
  for (int32_t r = 0; r < n_base; ++r) {
    std::string name = v.relations[r] + "^-1";
    while (v.relation_ids.count(name)) name += "'";
    v.add_relation(name);
  }
  v.n_base_relations = n_base;
  v.has_reciprocals = true;

  const std::size_t n_train = d.train.size();
  d.train.reserve(2 * n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    const Fact& f = d.train[i];
    Fact mirror;
    mirror.relation = f.relation + n_base;
    mirror.head = f.tail;
    mirror.tail = f.head;
    mirror.affiliated = f.affiliated;
    d.train.push_back(std::move(mirror));
  }
  d.reciprocals_added = true;
  d.rebuild_known();
}

// ---------------------------------------------------------------------------
// File I/O

// One fact per line, tokens separated by runs of ASCII whitespace;
// '#'-prefixed lines and blank lines are ignored.
inline std::vector<RawFact> load_fact_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open fact file: " + path.string());
  std::vector<RawFact> facts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || line[first] == '#') continue;
    facts.push_back(parse_nary_line(line, line_no, path.string()));
  }
  return facts;
}

inline void write_fact_file(const std::filesystem::path& path,
                            const std::vector<RawFact>& facts) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write fact file: " + path.string());
  for (const RawFact& f : facts) out << f.to_line() << '\n';
}

inline std::vector<RoleValueRecord> load_role_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open role-value file: " + path.string());
  std::vector<RoleValueRecord> recs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || line[first] == '#') continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw data_error("parse error at " + path.string() + ":" + std::to_string(line_no) +
                       ": " + e.what());
    }
    recs.push_back(parse_role_value_record(rec, line_no, path.string()));
  }
  return recs;
}

// Reads a canonical dataset directory: train.txt (required), valid.txt
// (optional), test.txt (optional).
inline Dataset load_dataset_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  RawDataset raw;
  const fs::path train_path = dir / "train.txt";
  if (!fs::exists(train_path))
    throw data_error("dataset directory lacks train.txt: " + dir.string());
  raw.train = load_fact_file(train_path);
  if (fs::exists(dir / "valid.txt")) {
    raw.valid = load_fact_file(dir / "valid.txt");
    raw.has_valid = true;
  }
  if (fs::exists(dir / "test.txt")) raw.test = load_fact_file(dir / "test.txt");
  return make_dataset(raw);
}

struct SplitCounts {
  std::size_t binary = 0;
  std::size_t nary = 0;
  std::size_t overall() const { return binary + nary; }
  double nary_share() const {
    return overall() == 0 ? 0.0 : static_cast<double>(nary) / static_cast<double>(overall());
  }
};

template <typename FactT>
inline SplitCounts count_split(const std::vector<FactT>& facts) {
  SplitCounts c;
  for (const auto& f : facts)
    (f.arity() == 2 ? c.binary : c.nary)++;
  return c;
}

}  // namespace hyper2
