// SPDX-License-Identifier: Apache-2.0
#include "labes/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "labes/kb.hpp"

namespace labes {

using nlohmann::json;

Tokens tokenize(const std::string& text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '[' || c == ']' || c == '<' || c == '>' || c == '.' ||
               c == ':' || c == '_' || c == '-') {
      // Placeholder and end-symbol tokens ([v.name], <eov:d.s>) stay whole;
      // the same characters inside ordinary words split them.
      if (c == '[' || c == '<') {
        flush();
        std::size_t close = text.find(c == '[' ? ']' : '>', i);
        if (close != std::string::npos) {
          std::string tok = text.substr(i, close - i + 1);
          std::transform(tok.begin(), tok.end(), tok.begin(),
                         [](unsigned char ch) { return std::tolower(ch); });
          out.push_back(tok);
          i = close;
          continue;
        }
        out.push_back(std::string(1, static_cast<char>(c)));
      } else if (!cur.empty() && i + 1 < text.size() &&
                 std::isalnum(static_cast<unsigned char>(text[i + 1])) &&
                 (c == '.' || c == '-' || c == '_' || c == ':')) {
        // keep intra-word punctuation ("06:30", "a.m", "so-so") as one token
        cur.push_back(static_cast<char>(c));
      } else {
        flush();
        out.push_back(std::string(1, static_cast<char>(c)));
      }
    } else {
      flush();
      out.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const Tokens& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Schema

Schema::Schema(std::vector<DomainDef> domains) : domains_(std::move(domains)) {
  build_index();
}

void Schema::build_index() {
  pairs_.clear();
  eovs_.clear();
  values_.clear();
  requestables_.clear();
  index_.clear();
  for (const auto& d : domains_) {
    if (d.informable.empty() || d.requestable.empty()) {
      throw DataError("schema: domain '" + d.name +
                      "' needs non-empty informable and requestable slots");
    }
    for (const auto& s : d.informable) {
      auto key = std::make_pair(d.name, s.name);
      if (index_.count(key)) {
        throw DataError("schema: duplicate slot " + d.name + "." + s.name);
      }
      index_[key] = static_cast<int>(pairs_.size());
      pairs_.push_back(key);
      eovs_.push_back("<eov:" + d.name + "." + s.name + ">");
      values_.push_back(s.values);
    }
    for (const auto& r : d.requestable) {
      if (std::find(requestables_.begin(), requestables_.end(), r) ==
          requestables_.end()) {
        requestables_.push_back(r);
      }
    }
  }
}

int Schema::pair_index(const std::string& domain,
                       const std::string& slot) const {
  auto it = index_.find(std::make_pair(domain, slot));
  return it == index_.end() ? -1 : it->second;
}

std::string Schema::placeholder(const std::string& slot) {
  return "[v." + slot + "]";
}

bool Schema::has_domain(const std::string& d) const {
  for (const auto& dom : domains_)
    if (dom.name == d) return true;
  return false;
}

Schema Schema::from_json_text(const std::string& text) {
  json j = json::parse(text);
  std::vector<DomainDef> domains;
  for (const auto& jd : j.at("domains")) {
    DomainDef d;
    d.name = jd.at("name").get<std::string>();
    for (const auto& js : jd.at("informable")) {
      SlotDef s;
      s.name = js.at("name").get<std::string>();
      if (js.contains("values")) {
        for (const auto& v : js["values"]) s.values.push_back(v);
      }
      d.informable.push_back(std::move(s));
    }
    for (const auto& r : jd.at("requestable")) {
      d.requestable.push_back(r.get<std::string>());
    }
    domains.push_back(std::move(d));
  }
  return Schema(std::move(domains));
}

Schema Schema::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string Schema::to_json_text() const {
  json j;
  j["domains"] = json::array();
  for (const auto& d : domains_) {
    json jd;
    jd["name"] = d.name;
    jd["informable"] = json::array();
    for (const auto& s : d.informable) {
      jd["informable"].push_back({{"name", s.name}, {"values", s.values}});
    }
    jd["requestable"] = d.requestable;
    j["domains"].push_back(jd);
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Belief state

bool BeliefState::operator==(const BeliefState& o) const {
  // Empty values compare equal to absent entries.
  auto filled_of = [](const BeliefState& b) {
    std::map<int, Tokens> m;
    for (const auto& [k, v] : b.entries)
      if (!v.empty()) m[k] = v;
    return m;
  };
  return filled_of(*this) == filled_of(o);
}

Tokens serialize_belief(const BeliefState& b, const Schema& schema) {
  Tokens out;
  for (int i = 0; i < schema.num_informable(); ++i) {
    if (const Tokens* v = b.value(i)) {
      out.insert(out.end(), v->begin(), v->end());
    }
    out.push_back(schema.eov_symbol(i));
  }
  return out;
}

BeliefState parse_belief(const Tokens& tokens, const Schema& schema) {
  BeliefState b;
  std::size_t pos = 0;
  for (int i = 0; i < schema.num_informable(); ++i) {
    Tokens value;
    const std::string& eov = schema.eov_symbol(i);
    bool terminated = false;
    while (pos < tokens.size()) {
      if (tokens[pos] == eov) {
        ++pos;
        terminated = true;
        break;
      }
      value.push_back(tokens[pos++]);
    }
    if (!terminated) {
      const auto& [d, s] = schema.informable_pairs()[i];
      throw DataError("belief parse: missing terminator for slot " + d + "." +
                      s);
    }
    if (!value.empty()) b.set(i, std::move(value));
  }
  return b;
}

// ---------------------------------------------------------------------------
// Delexicalization

std::pair<Tokens, std::vector<std::pair<std::string, Tokens>>> delexicalize(
    const Tokens& response_raw, const Entity* entity, const Schema& schema) {
  // Candidate spans: entity slot values first, then the schema inventory for
  // requestable slots. Sorted by token length so the longest match wins.
  struct Cand {
    Tokens span;
    std::string placeholder;
  };
  std::vector<Cand> cands;
  if (entity) {
    for (const auto& [slot, value] : entity->slots) {
      Tokens span = tokenize(value);
      if (!span.empty())
        cands.push_back({std::move(span), Schema::placeholder(slot)});
    }
  }
  for (const auto& d : schema.domains()) {
    for (const auto& r : d.requestable) {
      int pi = schema.pair_index(d.name, r);
      if (pi < 0) continue;  // only informables carry inventories
      for (const auto& v : schema.known_values(pi)) {
        Tokens span = tokenize(v);
        if (!span.empty())
          cands.push_back({std::move(span), Schema::placeholder(r)});
      }
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) {
                     return a.span.size() > b.span.size();
                   });

  Tokens out;
  std::vector<std::pair<std::string, Tokens>> spans;
  std::size_t i = 0;
  while (i < response_raw.size()) {
    const Cand* hit = nullptr;
    for (const auto& c : cands) {
      if (i + c.span.size() > response_raw.size()) continue;
      if (std::equal(c.span.begin(), c.span.end(),
                     response_raw.begin() + static_cast<long>(i))) {
        hit = &c;
        break;
      }
    }
    if (hit) {
      out.push_back(hit->placeholder);
      spans.emplace_back(hit->placeholder, hit->span);
      i += hit->span.size();
    } else {
      out.push_back(response_raw[i]);
      ++i;
    }
  }
  return {out, spans};
}

Tokens relexicalize(const Tokens& response_delex,
                    const std::vector<std::pair<std::string, Tokens>>& spans) {
  Tokens out;
  std::size_t next = 0;
  for (const auto& tok : response_delex) {
    if (next < spans.size() && tok == spans[next].first) {
      const Tokens& span = spans[next].second;
      out.insert(out.end(), span.begin(), span.end());
      ++next;
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus I/O

std::size_t DialogCorpus::total_turns() const {
  std::size_t n = 0;
  for (const auto& d : dialogs) n += d.turns.size();
  return n;
}

namespace {

BeliefState belief_from_json(const json& jb, const Schema& schema,
                             const std::string& dialog_id) {
  BeliefState b;
  for (auto it = jb.begin(); it != jb.end(); ++it) {
    const std::string key = it.key();
    auto dot = key.find('.');
    if (dot == std::string::npos) {
      throw DataError("dialog " + dialog_id + ": belief key '" + key +
                      "' is not domain.slot");
    }
    int pi = schema.pair_index(key.substr(0, dot), key.substr(dot + 1));
    if (pi < 0) {
      throw DataError("dialog " + dialog_id + ": unknown slot '" + key + "'");
    }
    Tokens v = tokenize(it.value().get<std::string>());
    if (!v.empty()) b.set(pi, std::move(v));
  }
  return b;
}

json belief_to_json(const BeliefState& b, const Schema& schema) {
  json j = json::object();
  for (const auto& [idx, v] : b.entries) {
    if (v.empty()) continue;
    const auto& [d, s] = schema.informable_pairs()[idx];
    j[d + "." + s] = join_tokens(v);
  }
  return j;
}

}  // namespace

DialogCorpus parse_corpus_text(const std::string& text, const Schema& schema,
                               const EntityDb* db) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("corpus JSON parse error: ") + e.what());
  }
  if (!j.is_array()) throw DataError("corpus file: top level must be an array");
  DialogCorpus corpus;
  for (const auto& jd : j) {
    Dialog dlg;
    try {
      dlg.id = jd.at("id").get<std::string>();
    } catch (const json::exception&) {
      throw DataError("corpus: dialog record missing 'id'");
    }
    try {
      for (const auto& dom : jd.at("domains")) {
        std::string name = dom.get<std::string>();
        if (!schema.has_domain(name)) {
          throw DataError("dialog " + dlg.id + ": unknown domain '" + name +
                          "'");
        }
        dlg.active_domains.push_back(std::move(name));
      }
      if (jd.contains("goal")) {
        for (auto it = jd["goal"].begin(); it != jd["goal"].end(); ++it) {
          DomainGoal g;
          if (it.value().contains("inform")) {
            for (auto gi = it.value()["inform"].begin();
                 gi != it.value()["inform"].end(); ++gi) {
              g.inform[gi.key()] = gi.value().get<std::string>();
            }
          }
          if (it.value().contains("request")) {
            for (const auto& r : it.value()["request"])
              g.request.push_back(r.get<std::string>());
          }
          dlg.goal[it.key()] = std::move(g);
        }
      }
      for (const auto& jt : jd.at("turns")) {
        Turn turn;
        turn.user = tokenize(jt.at("user").get<std::string>());
        turn.response_raw = tokenize(jt.at("response").get<std::string>());
        if (jt.contains("belief") && !jt["belief"].is_null()) {
          turn.gold_belief = belief_from_json(jt["belief"], schema, dlg.id);
        }
        if (jt.contains("entity_id") && !jt["entity_id"].is_null()) {
          turn.entity_id = jt["entity_id"].get<std::string>();
        }
        const Entity* ent = nullptr;
        if (db && !turn.entity_id.empty()) {
          for (const auto& dom : dlg.active_domains) {
            for (const auto& e : db->domain_records(dom)) {
              if (e.id == turn.entity_id) ent = &e;
            }
          }
        }
        auto [delex, spans] = delexicalize(turn.response_raw, ent, schema);
        turn.response_delex = std::move(delex);
        turn.span_map = std::move(spans);
        dlg.turns.push_back(std::move(turn));
      }
    } catch (const json::exception& e) {
      throw DataError("dialog " + dlg.id + ": malformed record: " + e.what());
    }
    if (dlg.turns.empty()) {
      throw DataError("dialog " + dlg.id + ": no turns");
    }
    corpus.dialogs.push_back(std::move(dlg));
  }
  return corpus;
}

DialogCorpus load_corpus(const std::string& path, const Schema& schema,
                         const EntityDb* db) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_corpus_text(ss.str(), schema, db);
}

std::string corpus_to_json_text(const DialogCorpus& corpus,
                                const Schema& schema) {
  json j = json::array();
  for (const auto& d : corpus.dialogs) {
    json jd;
    jd["id"] = d.id;
    jd["domains"] = d.active_domains;
    if (!d.goal.empty()) {
      json jg = json::object();
      for (const auto& [dom, g] : d.goal) {
        jg[dom] = {{"inform", g.inform}, {"request", g.request}};
      }
      jd["goal"] = jg;
    }
    jd["turns"] = json::array();
    for (const auto& t : d.turns) {
      json jt;
      jt["user"] = join_tokens(t.user);
      jt["response"] = join_tokens(t.response_raw);
      jt["belief"] = t.gold_belief
                         ? belief_to_json(*t.gold_belief, schema)
                         : json();
      jt["entity_id"] = t.entity_id.empty() ? json() : json(t.entity_id);
      jd["turns"].push_back(jt);
    }
    j.push_back(jd);
  }
  return j.dump(2);
}

void save_corpus(const DialogCorpus& corpus, const Schema& schema,
                 const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path);
  out << corpus_to_json_text(corpus, schema);
}

std::pair<DialogCorpus, DialogCorpus> split_labels(const DialogCorpus& corpus,
                                                   double fraction,
                                                   std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw ConfigError("split_labels: fraction must be in [0,1]");
  }
  std::vector<std::size_t> order(corpus.dialogs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_labeled = static_cast<std::size_t>(
      fraction * static_cast<double>(corpus.dialogs.size()));
  std::vector<bool> labeled(corpus.dialogs.size(), false);
  for (std::size_t i = 0; i < n_labeled; ++i) labeled[order[i]] = true;

  DialogCorpus lab, unlab;
  for (std::size_t i = 0; i < corpus.dialogs.size(); ++i) {
    if (labeled[i]) {
      lab.dialogs.push_back(corpus.dialogs[i]);
    } else {
      Dialog d = corpus.dialogs[i];
      for (auto& t : d.turns) t.gold_belief.reset();
      unlab.dialogs.push_back(std::move(d));
    }
  }
  return {std::move(lab), std::move(unlab)};
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::build(const DialogCorpus& corpus, const Schema& schema,
                             int max_size) {
  Vocabulary v;
  auto add = [&](const std::string& tok) {
    if (!v.ids_.count(tok)) {
      v.ids_[tok] = static_cast<int>(v.tokens_.size());
      v.tokens_.push_back(tok);
    }
  };
  add("<pad>");
  add("<unk>");
  add("<sep>");
  add("<go_r>");
  add("<eos_r>");
  for (int i = 0; i < schema.num_informable(); ++i) add(schema.eov_symbol(i));
  for (const auto& d : schema.domains()) {
    for (const auto& t : tokenize(d.name)) add(t);
    for (const auto& s : d.informable)
      for (const auto& t : tokenize(s.name)) add(t);
    for (const auto& r : d.requestable) {
      for (const auto& t : tokenize(r)) add(t);
      add(Schema::placeholder(r));
    }
  }
  add("dontcare");

  std::map<std::string, long> freq;
  for (const auto& d : corpus.dialogs) {
    for (const auto& t : d.turns) {
      for (const auto& w : t.user) ++freq[w];
      for (const auto& w : t.response_delex) ++freq[w];
      if (t.gold_belief) {
        for (const auto& [idx, val] : t.gold_belief->entries)
          for (const auto& w : val) ++freq[w];
      }
    }
  }
  // Known slot values stay encodable even when rare in the corpus text.
  for (int i = 0; i < schema.num_informable(); ++i) {
    for (const auto& val : schema.known_values(i))
      for (const auto& w : tokenize(val)) ++freq[w];
  }
  std::vector<std::pair<std::string, long>> by_freq(freq.begin(), freq.end());
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [tok, n] : by_freq) {
    if (static_cast<int>(v.tokens_.size()) >= max_size) break;
    add(tok);
  }
  v.eov_ids_.resize(schema.num_informable());
  for (int i = 0; i < schema.num_informable(); ++i) {
    v.eov_ids_[i] = v.ids_.at(schema.eov_symbol(i));
  }
  return v;
}

int Vocabulary::id(const std::string& tok) const {
  auto it = ids_.find(tok);
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& tok) const {
  return ids_.count(tok) > 0;
}

bool Vocabulary::is_eov(int id) const {
  return std::find(eov_ids_.begin(), eov_ids_.end(), id) != eov_ids_.end();
}

std::vector<int> Vocabulary::encode(const Tokens& toks) const {
  std::vector<int> out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(id(t));
  return out;
}

Tokens Vocabulary::decode(const std::vector<int>& ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::to_json_text() const {
  json j;
  j["tokens"] = tokens_;
  return j.dump();
}

Vocabulary Vocabulary::from_json_text(const std::string& text,
                                      const Schema& schema) {
  json j = json::parse(text);
  Vocabulary v;
  for (const auto& t : j.at("tokens")) {
    std::string tok = t.get<std::string>();
    v.ids_[tok] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(std::move(tok));
  }
  v.eov_ids_.resize(schema.num_informable());
  for (int i = 0; i < schema.num_informable(); ++i) {
    auto it = v.ids_.find(schema.eov_symbol(i));
    if (it == v.ids_.end()) {
      throw DataError("vocabulary missing end symbol " + schema.eov_symbol(i));
    }
    v.eov_ids_[i] = it->second;
  }
  return v;
}

}  // namespace labes
