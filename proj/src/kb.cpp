// SPDX-License-Identifier: Apache-2.0
#include "labes/kb.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace labes {

using nlohmann::json;

std::string normalize_value(const std::string& v) {
  Tokens kept;
  for (const std::string& t : tokenize(v)) {
    bool punct = std::all_of(t.begin(), t.end(), [](unsigned char c) {
      return std::ispunct(c);
    });
    if (!punct) kept.push_back(t);
  }
  return join_tokens(kept);
}

int DbMatchVector::bucket() const {
  for (int i = 0; i < 5; ++i)
    if (one_hot[static_cast<std::size_t>(i)] != 0.0) return i;
  return -1;
}

DbMatchVector match_vector(long count) {
  DbMatchVector d;
  int bucket = count >= 4 ? 4 : static_cast<int>(count);
  d.one_hot[static_cast<std::size_t>(bucket)] = 1.0;
  return d;
}

void EntityDb::add(Entity e) { records_[e.domain].push_back(std::move(e)); }

const std::vector<Entity>& EntityDb::domain_records(
    const std::string& domain) const {
  static const std::vector<Entity> kEmpty;
  auto it = records_.find(domain);
  return it == records_.end() ? kEmpty : it->second;
}

std::size_t EntityDb::size() const {
  std::size_t n = 0;
  for (const auto& [d, v] : records_) n += v.size();
  return n;
}

std::vector<const Entity*> EntityDb::query(
    const Schema& schema, const BeliefState& belief,
    const std::vector<std::string>& active_domains) const {
  std::vector<const Entity*> out;
  for (const auto& domain : active_domains) {
    for (const auto& ent : domain_records(domain)) {
      bool ok = true;
      for (const auto& [pair_idx, value] : belief.entries) {
        if (value.empty()) continue;
        const auto& [d, slot] = schema.informable_pairs()[pair_idx];
        if (d != domain) continue;  // constraints apply within their domain
        std::string want = normalize_value(join_tokens(value));
        if (want == "dontcare") continue;
        auto it = ent.slots.find(slot);
        if (it == ent.slots.end() || normalize_value(it->second) != want) {
          ok = false;
          break;
        }
      }
      if (ok) out.push_back(&ent);
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Entity* a, const Entity* b) { return a->id < b->id; });
  return out;
}

EntityDb EntityDb::from_json_text(const std::string& text,
                                  const Schema& schema) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("database JSON parse error: ") + e.what());
  }
  EntityDb db;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string domain = it.key();
    if (!schema.has_domain(domain)) {
      throw DataError("database: unknown domain '" + domain + "'");
    }
    for (const auto& jr : it.value()) {
      Entity e;
      e.domain = domain;
      for (auto f = jr.begin(); f != jr.end(); ++f) {
        if (f.key() == "id") {
          e.id = f.value().get<std::string>();
        } else {
          e.slots[f.key()] = f.value().get<std::string>();
        }
      }
      if (e.id.empty()) {
        e.id = domain + "#" + std::to_string(db.domain_records(domain).size());
      }
      db.add(std::move(e));
    }
  }
  return db;
}

EntityDb EntityDb::from_json_file(const std::string& path,
                                  const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open database file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str(), schema);
}

std::string EntityDb::to_json_text() const {
  json j = json::object();
  for (const auto& [domain, ents] : records_) {
    j[domain] = json::array();
    for (const auto& e : ents) {
      json je;
      je["id"] = e.id;
      for (const auto& [k, v] : e.slots) je[k] = v;
      j[domain].push_back(je);
    }
  }
  return j.dump(2);
}

}  // namespace labes
