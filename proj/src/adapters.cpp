// SPDX-License-Identifier: Apache-2.0
#include "labes/adapters.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace labes {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open source file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

std::string first_existing(const std::string& dir,
                           std::initializer_list<const char*> names) {
  for (const char* n : names) {
    fs::path p = fs::path(dir) / n;
    if (fs::exists(p)) return p.string();
  }
  std::ostringstream msg;
  msg << "none of the expected source files found under " << dir << ":";
  for (const char* n : names) msg << " " << n;
  throw DataError(msg.str());
}

std::string norm_text(const json& j) {
  return j.is_string() ? j.get<std::string>() : std::string();
}

// 3:1:1 split in file order, matching the dataset's published convention.
void split_311(DialogCorpus all, AdaptedData& out) {
  const std::size_t n = all.dialogs.size();
  const std::size_t n_train = n * 3 / 5;
  const std::size_t n_dev = n / 5;
  for (std::size_t i = 0; i < n; ++i) {
    Dialog& d = all.dialogs[i];
    if (i < n_train) {
      out.train.dialogs.push_back(std::move(d));
    } else if (i < n_train + n_dev) {
      out.dev.dialogs.push_back(std::move(d));
    } else {
      out.test.dialogs.push_back(std::move(d));
    }
  }
}

// ---------------------------------------------------------------------------
// CamRest676

AdaptedData adapt_camrest(const std::string& dir) {
  json raw = load_json(
      first_existing(dir, {"CamRest676_v2.json", "CamRest676.json"}));
  json raw_db = load_json(first_existing(dir, {"CamRestDB.json"}));

  AdaptedData out;
  const std::vector<std::string> informables = {"food", "pricerange", "area"};
  const std::vector<std::string> requestables = {
      "address", "phone", "postcode", "name", "area", "food", "pricerange"};

  std::map<std::string, std::set<std::string>> values;
  for (const json& e : raw_db) {
    Entity ent;
    ent.domain = "restaurant";
    for (auto it = e.begin(); it != e.end(); ++it) {
      if (!it.value().is_string()) continue;
      ent.slots[it.key()] = it.value().get<std::string>();
    }
    ent.id = e.contains("id") ? norm_text(e["id"])
                              : ent.slots.count("name") ? ent.slots["name"]
                                                        : "";
    if (ent.id.empty()) ent.id = "r" + std::to_string(out.db.size());
    for (const std::string& s : informables) {
      if (ent.slots.count(s)) values[s].insert(ent.slots[s]);
    }
    out.db.add(std::move(ent));
  }

  DomainDef dom;
  dom.name = "restaurant";
  for (const std::string& s : informables) {
    SlotDef sd;
    sd.name = s;
    sd.values.assign(values[s].begin(), values[s].end());
    sd.values.push_back("dontcare");
    dom.informable.push_back(std::move(sd));
  }
  dom.requestable = requestables;
  out.schema = Schema({dom});

  DialogCorpus all;
  for (const json& jd : raw) {
    Dialog dlg;
    dlg.id = jd.contains("dialogue_id")
                 ? std::to_string(jd["dialogue_id"].get<long>())
                 : std::to_string(all.dialogs.size());
    dlg.active_domains = {"restaurant"};

    DomainGoal goal;
    if (jd.contains("goal")) {
      const json& g = jd["goal"];
      if (g.contains("constraints")) {
        for (const json& c : g["constraints"]) {
          if (c.is_array() && c.size() == 2) {
            goal.inform[norm_text(c[0])] = norm_text(c[1]);
          }
        }
      }
      if (g.contains("request-slots")) {
        for (const json& r : g["request-slots"]) {
          goal.request.push_back(norm_text(r));
        }
      }
    }
    if (!goal.inform.empty() || !goal.request.empty()) {
      dlg.goal["restaurant"] = goal;
    }

    BeliefState belief;
    for (const json& jt : jd.value("dial", json::array())) {
      Turn turn;
      turn.user = tokenize(norm_text(jt.at("usr").at("transcript")));
      Tokens raw_resp = tokenize(norm_text(jt.at("sys").at("sent")));
      turn.response_raw = raw_resp;

      for (const json& act : jt["usr"].value("slu", json::array())) {
        if (norm_text(act.value("act", json(""))) != "inform") continue;
        for (const json& sv : act.value("slots", json::array())) {
          if (!sv.is_array() || sv.size() != 2) continue;
          int pi = out.schema.pair_index("restaurant", norm_text(sv[0]));
          if (pi >= 0) belief.set(pi, tokenize(norm_text(sv[1])));
        }
      }
      turn.gold_belief = belief;

      auto hits = out.db.query(out.schema, belief, dlg.active_domains);
      const Entity* ent = hits.empty() ? nullptr : hits[0];
      if (ent) turn.entity_id = ent->id;
      auto [delex, spans] = delexicalize(raw_resp, ent, out.schema);
      turn.response_delex = std::move(delex);
      turn.span_map = std::move(spans);
      dlg.turns.push_back(std::move(turn));
    }
    if (!dlg.turns.empty()) all.dialogs.push_back(std::move(dlg));
  }
  split_311(std::move(all), out);
  return out;
}

// ---------------------------------------------------------------------------
// In-Car assistant (kvret)

DialogCorpus adapt_incar_file(const json& raw, Schema& schema, EntityDb& db,
                              std::map<std::string, std::set<std::string>>&
                                  slot_values,
                              const std::string& split_tag) {
  DialogCorpus corpus;
  for (const json& jd : raw) {
    const json& scenario = jd.at("scenario");
    const std::string domain =
        norm_text(scenario.at("task").at("intent"));

    if (scenario.contains("kb") && scenario["kb"].contains("items") &&
        scenario["kb"]["items"].is_array()) {
      for (const json& item : scenario["kb"]["items"]) {
        Entity ent;
        ent.domain = domain;
        for (auto it = item.begin(); it != item.end(); ++it) {
          if (it.value().is_string()) {
            ent.slots[it.key()] = it.value().get<std::string>();
          }
        }
        if (ent.slots.empty()) continue;
        ent.id = domain + "_" + std::to_string(db.size());
        db.add(std::move(ent));
      }
    }

    Dialog dlg;
    dlg.id = split_tag + std::to_string(corpus.dialogs.size());
    dlg.active_domains = {domain};

    Turn turn;
    bool have_user = false;
    std::map<std::string, std::string> belief_raw;
    for (const json& jt : jd.value("dialogue", json::array())) {
      const std::string who = norm_text(jt.at("turn"));
      const json& data = jt.at("data");
      if (who == "driver") {
        if (have_user) {
          // consecutive driver turns collapse into one user utterance
          Tokens extra = tokenize(norm_text(data.at("utterance")));
          turn.user.insert(turn.user.end(), extra.begin(), extra.end());
        } else {
          turn.user = tokenize(norm_text(data.at("utterance")));
          have_user = true;
        }
      } else {
        if (!have_user) continue;  // dialog starting with the assistant
        turn.response_raw = tokenize(norm_text(data.at("utterance")));
        if (data.contains("slots") && data["slots"].is_object()) {
          for (auto it = data["slots"].begin(); it != data["slots"].end();
               ++it) {
            if (it.value().is_string()) {
              belief_raw[domain + "\t" + it.key()] =
                  it.value().get<std::string>();
              slot_values[domain + "\t" + it.key()].insert(
                  it.value().get<std::string>());
            }
          }
        }
        // schema is finalized after all files are read, so the belief
        // snapshot is parked in span_map and resolved in finalize()
        Turn done = std::move(turn);
        done.response_delex = done.response_raw;
        dlg.turns.push_back(std::move(done));
        for (const auto& [k, v] : belief_raw) {
          dlg.turns.back().span_map.emplace_back(k, tokenize(v));
        }
        turn = Turn{};
        have_user = false;
      }
    }
    if (!dlg.turns.empty()) corpus.dialogs.push_back(std::move(dlg));
  }
  (void)schema;
  return corpus;
}

AdaptedData adapt_incar(const std::string& dir) {
  AdaptedData out;
  std::map<std::string, std::set<std::string>> slot_values;

  json train_raw = load_json(first_existing(dir, {"kvret_train_public.json"}));
  json dev_raw = load_json(first_existing(dir, {"kvret_dev_public.json"}));
  json test_raw = load_json(first_existing(dir, {"kvret_test_public.json"}));

  out.train = adapt_incar_file(train_raw, out.schema, out.db, slot_values,
                               "incar_train_");
  out.dev =
      adapt_incar_file(dev_raw, out.schema, out.db, slot_values, "incar_dev_");
  out.test = adapt_incar_file(test_raw, out.schema, out.db, slot_values,
                              "incar_test_");

  // schema from the observed (domain, slot) inventory
  std::map<std::string, DomainDef> domains;
  for (const auto& [key, vals] : slot_values) {
    const auto tab = key.find('\t');
    const std::string dom = key.substr(0, tab);
    const std::string slot = key.substr(tab + 1);
    SlotDef sd;
    sd.name = slot;
    sd.values.assign(vals.begin(), vals.end());
    sd.values.push_back("dontcare");
    domains[dom].name = dom;
    domains[dom].informable.push_back(std::move(sd));
  }
  std::vector<DomainDef> defs;
  for (auto& [name, def] : domains) {
    std::sort(def.informable.begin(), def.informable.end(),
              [](const SlotDef& a, const SlotDef& b) {
                return a.name < b.name;
              });
    def.requestable = {"address", "poi"};
    defs.push_back(std::move(def));
  }
  if (defs.empty()) throw DataError("In-Car source contains no annotations");
  out.schema = Schema(std::move(defs));

  // resolve the stashed raw beliefs against the final schema
  auto finalize = [&](DialogCorpus& corpus) {
    for (Dialog& dlg : corpus.dialogs) {
      for (Turn& turn : dlg.turns) {
        BeliefState b;
        for (const auto& [key, val] : turn.span_map) {
          const auto tab = key.find('\t');
          int pi = out.schema.pair_index(key.substr(0, tab),
                                         key.substr(tab + 1));
          if (pi >= 0) b.set(pi, val);
        }
        turn.span_map.clear();
        turn.gold_belief = std::move(b);
        auto [delex, spans] = delexicalize(turn.response_raw, nullptr,
                                           out.schema);
        turn.response_delex = std::move(delex);
        turn.span_map = std::move(spans);
      }
    }
  };
  finalize(out.train);
  finalize(out.dev);
  finalize(out.test);
  return out;
}

// ---------------------------------------------------------------------------
// MultiWOZ 2.1

AdaptedData adapt_multiwoz(const std::string& dir) {
  json raw = load_json(first_existing(dir, {"data.json"}));

  auto read_list = [&](const char* name) {
    std::set<std::string> ids;
    fs::path p = fs::path(dir) / name;
    std::ifstream in(p);
    if (!in) throw DataError("cannot open split list: " + p.string());
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
        line.pop_back();
      }
      if (!line.empty()) ids.insert(line);
    }
    return ids;
  };
  std::set<std::string> dev_ids = read_list("valListFile.txt");
  std::set<std::string> test_ids = read_list("testListFile.txt");

  // value inventory and slot names discovered from the annotations
  std::map<std::string, std::map<std::string, std::set<std::string>>> seen;
  struct RawTurn {
    Tokens user, resp;
    std::map<std::pair<std::string, std::string>, std::string> belief;
  };
  struct RawDialog {
    std::string id;
    std::vector<std::string> domains;
    std::vector<RawTurn> turns;
  };
  std::vector<RawDialog> dialogs;

  for (auto it = raw.begin(); it != raw.end(); ++it) {
    RawDialog rd;
    rd.id = it.key();
    const json& log = it.value().value("log", json::array());
    std::set<std::string> doms;
    for (std::size_t i = 0; i + 1 < log.size(); i += 2) {
      RawTurn rt;
      rt.user = tokenize(norm_text(log[i].at("text")));
      rt.resp = tokenize(norm_text(log[i + 1].at("text")));
      const json& meta = log[i + 1].value("metadata", json::object());
      for (auto dit = meta.begin(); dit != meta.end(); ++dit) {
        const json& semi = dit.value().value("semi", json::object());
        for (auto sit = semi.begin(); sit != semi.end(); ++sit) {
          std::string v = norm_text(sit.value());
          if (v.empty() || v == "not mentioned" || v == "none") continue;
          rt.belief[{dit.key(), sit.key()}] = v;
          seen[dit.key()][sit.key()].insert(v);
          doms.insert(dit.key());
        }
      }
      rd.turns.push_back(std::move(rt));
    }
    rd.domains.assign(doms.begin(), doms.end());
    if (!rd.turns.empty()) dialogs.push_back(std::move(rd));
  }

  AdaptedData out;
  std::vector<DomainDef> defs;
  for (const auto& [dom, slots] : seen) {
    DomainDef def;
    def.name = dom;
    for (const auto& [slot, vals] : slots) {
      SlotDef sd;
      sd.name = slot;
      sd.values.assign(vals.begin(), vals.end());
      def.informable.push_back(std::move(sd));
    }
    def.requestable = {"address", "phone", "postcode", "name", "reference"};
    defs.push_back(std::move(def));
  }
  if (defs.empty()) throw DataError("MultiWOZ source contains no annotations");
  out.schema = Schema(std::move(defs));

  for (const auto& [dom, slots] : seen) {
    fs::path dbp = fs::path(dir) / (dom + "_db.json");
    if (!fs::exists(dbp)) continue;
    json jdb = load_json(dbp.string());
    for (const json& e : jdb) {
      Entity ent;
      ent.domain = dom;
      for (auto eit = e.begin(); eit != e.end(); ++eit) {
        if (eit.value().is_string()) {
          ent.slots[eit.key()] = eit.value().get<std::string>();
        }
      }
      ent.id = dom + "_" + std::to_string(out.db.size());
      out.db.add(std::move(ent));
    }
  }

  for (RawDialog& rd : dialogs) {
    Dialog dlg;
    dlg.id = rd.id;
    dlg.active_domains = rd.domains;
    BeliefState cumulative;
    for (RawTurn& rt : rd.turns) {
      Turn turn;
      turn.user = std::move(rt.user);
      turn.response_raw = std::move(rt.resp);
      for (const auto& [key, val] : rt.belief) {
        int pi = out.schema.pair_index(key.first, key.second);
        if (pi >= 0) cumulative.set(pi, tokenize(val));
      }
      turn.gold_belief = cumulative;
      auto [delex, spans] =
          delexicalize(turn.response_raw, nullptr, out.schema);
      turn.response_delex = std::move(delex);
      turn.span_map = std::move(spans);
      dlg.turns.push_back(std::move(turn));
    }
    DialogCorpus& dst = test_ids.count(rd.id)  ? out.test
                        : dev_ids.count(rd.id) ? out.dev
                                               : out.train;
    dst.dialogs.push_back(std::move(dlg));
  }
  return out;
}

}  // namespace

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "camrest") return DatasetKind::camrest;
  if (name == "incar") return DatasetKind::incar;
  if (name == "multiwoz") return DatasetKind::multiwoz;
  throw ConfigError("unknown dataset adapter: " + name +
                    " (expected camrest, incar, or multiwoz)");
}

AdaptedData adapt_dataset(DatasetKind kind, const std::string& source_dir) {
  if (!fs::is_directory(source_dir)) {
    throw DataError("source directory not found: " + source_dir);
  }
  switch (kind) {
    case DatasetKind::camrest:
      return adapt_camrest(source_dir);
    case DatasetKind::incar:
      return adapt_incar(source_dir);
    case DatasetKind::multiwoz:
      return adapt_multiwoz(source_dir);
  }
  throw ConfigError("unknown dataset kind");
}

}  // namespace labes
