// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "labes/kb.hpp"

using namespace labes;

namespace {

Schema two_domain_schema() {
  DomainDef rest;
  rest.name = "restaurant";
  rest.informable = {{"food", {"british", "russian", "thai"}},
                     {"pricerange", {"cheap", "expensive"}}};
  rest.requestable = {"name", "phone"};
  DomainDef hotel;
  hotel.name = "hotel";
  hotel.informable = {{"stars", {"three", "four"}}};
  hotel.requestable = {"name"};
  return Schema({rest, hotel});
}

EntityDb make_db() {
  EntityDb db;
  auto add = [&](const std::string& id, const std::string& dom,
                 std::map<std::string, std::string> slots) {
    Entity e;
    e.id = id;
    e.domain = dom;
    e.slots = std::move(slots);
    db.add(std::move(e));
  };
  add("r1", "restaurant", {{"food", "british"}, {"pricerange", "expensive"}});
  add("r2", "restaurant", {{"food", "british"}, {"pricerange", "cheap"}});
  add("r3", "restaurant", {{"food", "thai"}, {"pricerange", "expensive"}});
  add("h1", "hotel", {{"stars", "three"}});
  return db;
}

}  // namespace

TEST_CASE("match_vector buckets counts into {0,1,2,3,>3}") {
  for (long count = 0; count <= 10; ++count) {
    DbMatchVector v = match_vector(count);
    const int expect = count >= 4 ? 4 : static_cast<int>(count);
    CHECK(v.bucket() == expect);
    double sum = 0.0;
    for (double x : v.one_hot) sum += x;
    CHECK(sum == 1.0);
    CHECK(v.one_hot[static_cast<std::size_t>(expect)] == 1.0);
  }
}

TEST_CASE("query matches filled slots exactly after normalization") {
  Schema schema = two_domain_schema();
  EntityDb db = make_db();
  BeliefState b;
  b.set(schema.pair_index("restaurant", "food"), {"British"});
  auto hits = db.query(schema, b, {"restaurant"});
  REQUIRE(hits.size() == 2);
  CHECK(hits[0]->id == "r1");  // sorted by id
  CHECK(hits[1]->id == "r2");
}

TEST_CASE("unfilled and dontcare slots impose no constraint") {
  Schema schema = two_domain_schema();
  EntityDb db = make_db();
  BeliefState b;
  CHECK(db.query(schema, b, {"restaurant"}).size() == 3);
  b.set(schema.pair_index("restaurant", "pricerange"), {"dontcare"});
  CHECK(db.query(schema, b, {"restaurant"}).size() == 3);
  b.set(schema.pair_index("restaurant", "pricerange"), {"expensive"});
  CHECK(db.query(schema, b, {"restaurant"}).size() == 2);
}

TEST_CASE("query is restricted to active domains") {
  Schema schema = two_domain_schema();
  EntityDb db = make_db();
  BeliefState b;
  CHECK(db.query(schema, b, {"hotel"}).size() == 1);
  CHECK(db.query(schema, b, {"restaurant", "hotel"}).size() == 4);
  CHECK(db.query(schema, b, {}).empty());
}

TEST_CASE("constraints only apply within their own domain") {
  Schema schema = two_domain_schema();
  EntityDb db = make_db();
  BeliefState b;
  b.set(schema.pair_index("restaurant", "food"), {"thai"});
  auto hits = db.query(schema, b, {"restaurant", "hotel"});
  REQUIRE(hits.size() == 2);
  CHECK(hits[0]->id == "h1");
  CHECK(hits[1]->id == "r3");
}

TEST_CASE("unsatisfiable constraint returns zero matches") {
  Schema schema = two_domain_schema();
  EntityDb db = make_db();
  BeliefState b;
  b.set(schema.pair_index("restaurant", "food"), {"russian"});
  b.set(schema.pair_index("restaurant", "pricerange"), {"expensive"});
  CHECK(db.query(schema, b, {"restaurant"}).empty());
}

TEST_CASE("normalize_value canonicalizes case and spacing") {
  CHECK(normalize_value("British Food") == normalize_value("british  food"));
  CHECK(normalize_value("cheap!") == normalize_value("cheap"));
}

TEST_CASE("db JSON round-trips") {
  Schema schema = two_domain_schema();
  EntityDb db = make_db();
  EntityDb db2 = EntityDb::from_json_text(db.to_json_text(), schema);
  CHECK(db2.size() == db.size());
  CHECK(db2.to_json_text() == db.to_json_text());
  BeliefState b;
  b.set(schema.pair_index("restaurant", "food"), {"british"});
  CHECK(db2.query(schema, b, {"restaurant"}).size() == 2);
}
