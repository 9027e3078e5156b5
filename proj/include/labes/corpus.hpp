// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "labes/common.hpp"

namespace labes {

using Tokens = std::vector<std::string>;

// Lowercase, split on whitespace and punctuation boundaries.
Tokens tokenize(const std::string& text);
std::string join_tokens(const Tokens& toks);

// ---------------------------------------------------------------------------
// Schema

struct SlotDef {
  std::string name;
  std::vector<std::string> values;  // known surface values
};

struct DomainDef {
  std::string name;
  std::vector<SlotDef> informable;
  std::vector<std::string> requestable;
};

class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<DomainDef> domains);

  static Schema from_json_file(const std::string& path);
  static Schema from_json_text(const std::string& text);
  std::string to_json_text() const;

  const std::vector<DomainDef>& domains() const { return domains_; }

  // Informable (domain, slot) pairs in declaration order.
  const std::vector<std::pair<std::string, std::string>>& informable_pairs()
      const {
    return pairs_;
  }
  int num_informable() const { return static_cast<int>(pairs_.size()); }
  // Index of (domain, slot) in declaration order, -1 if unknown.
  int pair_index(const std::string& domain, const std::string& slot) const;
  // Slot-specific end-of-value symbol, e.g. "<eov:restaurant.food>".
  const std::string& eov_symbol(int pair_idx) const { return eovs_[pair_idx]; }
  // Placeholder token for a requestable slot, e.g. "[v.name]".
  static std::string placeholder(const std::string& slot);
  // All requestable slot names across domains (deduplicated, ordered).
  const std::vector<std::string>& requestable_slots() const {
    return requestables_;
  }
  const std::vector<std::string>& known_values(int pair_idx) const {
    return values_[pair_idx];
  }
  bool has_domain(const std::string& d) const;

 private:
  void build_index();
  std::vector<DomainDef> domains_;
  std::vector<std::pair<std::string, std::string>> pairs_;
  std::vector<std::string> eovs_;
  std::vector<std::vector<std::string>> values_;
  std::vector<std::string> requestables_;
  std::map<std::pair<std::string, std::string>, int> index_;
};

// ---------------------------------------------------------------------------
// Belief state

// Ordered map (domain, slot) -> value token sequence, keyed by the schema's
// informable pair index. An absent or empty entry means "slot unfilled".
struct BeliefState {
  std::map<int, Tokens> entries;

  bool filled(int pair_idx) const {
    auto it = entries.find(pair_idx);
    return it != entries.end() && !it->second.empty();
  }
  const Tokens* value(int pair_idx) const {
    auto it = entries.find(pair_idx);
    return it == entries.end() ? nullptr : &it->second;
  }
  void set(int pair_idx, Tokens v) { entries[pair_idx] = std::move(v); }
  bool operator==(const BeliefState& o) const;
};

// Canonical text-span serialization: schema declaration order, each slot's
// value tokens followed by the slot-specific end-of-value symbol.
Tokens serialize_belief(const BeliefState& b, const Schema& schema);
// Total inverse on serializer output; throws DataError naming the slot whose
// terminator is missing.
BeliefState parse_belief(const Tokens& tokens, const Schema& schema);

// ---------------------------------------------------------------------------
// Dialogs

struct Turn {
  Tokens user;
  Tokens response_delex;
  Tokens response_raw;
  std::optional<BeliefState> gold_belief;
  // (placeholder, replaced source span) pairs, left to right.
  std::vector<std::pair<std::string, Tokens>> span_map;
  std::string entity_id;  // empty when none
};

struct DomainGoal {
  std::map<std::string, std::string> inform;  // slot -> value
  std::vector<std::string> request;           // requestable slot names
};

struct Dialog {
  std::string id;
  std::vector<Turn> turns;
  std::vector<std::string> active_domains;
  std::map<std::string, DomainGoal> goal;  // optional; empty when absent
};

struct DialogCorpus {
  std::vector<Dialog> dialogs;
  std::size_t total_turns() const;
};

class EntityDb;  // kb.hpp

// Corpus JSON: top-level array of dialogs, see README for the schema. When a
// database is given, responses with an entity_id are delexicalized against
// that entity (plus the schema value inventory for requestable slots).
DialogCorpus load_corpus(const std::string& path, const Schema& schema,
                         const EntityDb* db = nullptr);
DialogCorpus parse_corpus_text(const std::string& text, const Schema& schema,
                               const EntityDb* db = nullptr);
std::string corpus_to_json_text(const DialogCorpus& corpus,
                                const Schema& schema);
void save_corpus(const DialogCorpus& corpus, const Schema& schema,
                 const std::string& path);

struct Entity;  // kb.hpp

// Replaces every maximal token span matching an entity slot value (or a
// schema value-inventory entry for requestable slots) by its placeholder;
// longest match wins, scanned left to right.
std::pair<Tokens, std::vector<std::pair<std::string, Tokens>>> delexicalize(
    const Tokens& response_raw, const Entity* entity, const Schema& schema);
Tokens relexicalize(const Tokens& response_delex,
                    const std::vector<std::pair<std::string, Tokens>>& spans);

// Dialog-level split: [labeled, unlabeled]; unlabeled dialogs keep responses
// but have gold beliefs stripped. Deterministic given seed.
std::pair<DialogCorpus, DialogCorpus> split_labels(const DialogCorpus& corpus,
                                                   double fraction,
                                                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSep = 2;
  static constexpr int kGoResp = 3;
  static constexpr int kEosResp = 4;

  Vocabulary() = default;
  // Most-frequent corpus tokens up to max_size after reserving specials;
  // frequency ties broken lexicographically.
  static Vocabulary build(const DialogCorpus& corpus, const Schema& schema,
                          int max_size);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& tok) const;  // kUnk when out of vocabulary
  const std::string& token(int id) const { return tokens_.at(id); }
  bool contains(const std::string& tok) const;
  int eov_id(int pair_idx) const { return eov_ids_.at(pair_idx); }
  bool is_eov(int id) const;

  std::vector<int> encode(const Tokens& toks) const;
  Tokens decode(const std::vector<int>& ids) const;

  std::string to_json_text() const;
  static Vocabulary from_json_text(const std::string& text,
                                   const Schema& schema);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  std::vector<int> eov_ids_;  // per informable pair
};

}  // namespace labes
