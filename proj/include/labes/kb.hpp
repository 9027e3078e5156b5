// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "labes/corpus.hpp"

namespace labes {

struct Entity {
  std::string id;
  std::string domain;
  std::map<std::string, std::string> slots;  // slot -> surface value
};

// 5 binary components for match counts {0, 1, 2, 3, >3}; exactly one is set.
struct DbMatchVector {
  std::array<double, 5> one_hot{};
  int bucket() const;
};

DbMatchVector match_vector(long count);

class EntityDb {
 public:
  EntityDb() = default;

  static EntityDb from_json_file(const std::string& path,
                                 const Schema& schema);
  static EntityDb from_json_text(const std::string& text,
                                 const Schema& schema);
  std::string to_json_text() const;

  void add(Entity e);
  const std::vector<Entity>& domain_records(const std::string& domain) const;
  std::size_t size() const;

  // Entities in the active domains whose slot values equal the belief's
  // filled values (case-insensitive, normalized). "dontcare" and unfilled
  // slots impose no constraint. Results sorted by entity id.
  std::vector<const Entity*> query(
      const Schema& schema, const BeliefState& belief,
      const std::vector<std::string>& active_domains) const;

 private:
  std::map<std::string, std::vector<Entity>> records_;
};

// Lowercased, punctuation-stripped, whitespace-collapsed surface form used
// for all value comparisons.
std::string normalize_value(const std::string& v);

}  // namespace labes
