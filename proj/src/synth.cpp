// SPDX-License-Identifier: Apache-2.0
#include "labes/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

namespace labes {

using nlohmann::json;

std::string SynthSpec::to_json_text() const {
  json j;
  j["slots"] = slots;
  j["values_per_slot"] = values_per_slot;
  j["dialogs"] = dialogs;
  j["turns_per_dialog"] = turns_per_dialog;
  j["db_size"] = db_size;
  j["seed"] = seed;
  return j.dump();
}

SynthSpec SynthSpec::from_json_text(const std::string& text) {
  json j = json::parse(text);
  SynthSpec s;
  s.slots = j.value("slots", s.slots);
  s.values_per_slot = j.value("values_per_slot", s.values_per_slot);
  s.dialogs = j.value("dialogs", s.dialogs);
  s.turns_per_dialog = j.value("turns_per_dialog", s.turns_per_dialog);
  s.db_size = j.value("db_size", s.db_size);
  s.seed = j.value("seed", s.seed);
  if (s.slots <= 0 || s.values_per_slot <= 0 || s.dialogs <= 0 ||
      s.turns_per_dialog <= 0) {
    throw ConfigError("synth spec fields must be positive");
  }
  return s;
}

namespace {

std::string slot_name(int i) { return "attr" + std::to_string(i); }
std::string slot_value(int slot, int v) {
  return "v" + std::to_string(slot) + "_" + std::to_string(v);
}

const char* bucket_word(int bucket) {
  switch (bucket) {
    case 0: return "none";
    case 1: return "one";
    case 2: return "two";
    case 3: return "three";
    default: return "many";
  }
}

}  // namespace

SynthData generate(const SynthSpec& spec) {
  SynthData out;

  DomainDef dom;
  dom.name = "venue";
  for (int s = 0; s < spec.slots; ++s) {
    SlotDef sd;
    sd.name = slot_name(s);
    for (int v = 0; v < spec.values_per_slot; ++v) {
      sd.values.push_back(slot_value(s, v));
    }
    dom.informable.push_back(std::move(sd));
  }
  dom.requestable = {"name"};
  out.schema = Schema({dom});

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> value_pick(0, spec.values_per_slot - 1);

  for (int i = 0; i < spec.db_size; ++i) {
    Entity e;
    e.id = "e" + std::to_string(i);
    e.domain = "venue";
    for (int s = 0; s < spec.slots; ++s) {
      e.slots[slot_name(s)] = slot_value(s, value_pick(rng));
    }
    e.slots["name"] = "name_" + std::to_string(i);
    out.db.add(std::move(e));
  }

  for (int d = 0; d < spec.dialogs; ++d) {
    Dialog dlg;
    dlg.id = "synth" + std::to_string(d);
    dlg.active_domains = {"venue"};

    std::vector<int> goal_value(static_cast<std::size_t>(spec.slots));
    for (int s = 0; s < spec.slots; ++s) {
      goal_value[static_cast<std::size_t>(s)] = value_pick(rng);
    }
    // spread slot mentions over the turns, in a shuffled order
    std::vector<int> mention_order(static_cast<std::size_t>(spec.slots));
    std::iota(mention_order.begin(), mention_order.end(), 0);
    std::shuffle(mention_order.begin(), mention_order.end(), rng);

    DomainGoal goal;
    for (int s = 0; s < spec.slots; ++s) {
      goal.inform[slot_name(s)] =
          slot_value(s, goal_value[static_cast<std::size_t>(s)]);
    }
    goal.request = {"name"};
    dlg.goal["venue"] = goal;

    BeliefState belief;
    std::size_t next_mention = 0;
    for (int t = 0; t < spec.turns_per_dialog; ++t) {
      Turn turn;
      const int turns_left = spec.turns_per_dialog - t;
      const std::size_t remaining = mention_order.size() - next_mention;
      // how many new slots this user turn introduces (0-2), never leaving
      // more slots than turns to mention them in
      std::size_t lo = remaining > static_cast<std::size_t>(turns_left - 1) * 2
                           ? remaining - static_cast<std::size_t>(turns_left - 1) * 2
                           : 0;
      if (turns_left == 1) lo = remaining;
      std::size_t hi = std::min<std::size_t>(2, remaining);
      lo = std::min(lo, hi);
      std::uniform_int_distribution<std::size_t> k_pick(lo, hi);
      std::size_t k = k_pick(rng);

      Tokens user;
      if (k == 0) {
        user = {"anything", "else"};
      } else {
        user = {"i", "want"};
        for (std::size_t j = 0; j < k; ++j) {
          const int s = mention_order[next_mention++];
          const std::string v =
              slot_value(s, goal_value[static_cast<std::size_t>(s)]);
          if (j > 0) user.push_back("and");
          user.push_back(slot_name(s));
          user.push_back("is");
          user.push_back(v);
          belief.set(out.schema.pair_index("venue", slot_name(s)),
                     Tokens{v});
        }
      }
      turn.user = user;
      turn.gold_belief = belief;

      const auto hits = out.db.query(out.schema, belief, dlg.active_domains);
      const int bucket = match_vector(static_cast<long>(hits.size())).bucket();
      Tokens resp = {"found", bucket_word(bucket), "matches"};
      for (int s = 0; s < spec.slots; ++s) {
        const int pi = out.schema.pair_index("venue", slot_name(s));
        if (belief.filled(pi)) {
          resp.push_back(slot_name(s));
          resp.push_back((*belief.value(pi))[0]);
        }
      }
      const Entity* offered = nullptr;
      if (t + 1 == spec.turns_per_dialog) {
        resp.push_back("try");
        resp.push_back(Schema::placeholder("name"));
        if (!hits.empty()) {
          offered = hits[0];
          turn.entity_id = offered->id;
          resp.back() = offered->slots.at("name");
        }
      }
      turn.response_raw = resp;
      // same derivation the corpus loader applies, so save/load round-trips
      auto [delex, spans] = delexicalize(turn.response_raw, offered,
                                         out.schema);
      turn.response_delex = std::move(delex);
      turn.span_map = std::move(spans);
      dlg.turns.push_back(std::move(turn));
    }
    out.corpus.dialogs.push_back(std::move(dlg));
  }
  return out;
}

BeliefState invert_templates(const Schema& schema, const Dialog& dialog,
                             int upto_turn) {
  BeliefState b;
  for (int t = 0; t <= upto_turn && t < static_cast<int>(dialog.turns.size());
       ++t) {
    const Tokens& u = dialog.turns[static_cast<std::size_t>(t)].user;
    for (std::size_t i = 0; i + 2 < u.size(); ++i) {
      if (u[i + 1] != "is") continue;
      for (const auto& [dom, slot] : schema.informable_pairs()) {
        if (u[i] == slot) {
          b.set(schema.pair_index(dom, slot), Tokens{u[i + 2]});
        }
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Enumeration oracle

namespace {

double logsumexp(const std::vector<double>& xs) {
  double m = -1e300;
  for (double x : xs) m = std::max(m, x);
  if (m <= -1e300) return -1e300;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Every belief state whose slot values are token strings of length at most
// `cap` over the vocabulary (excluding each slot's own end symbol).
std::vector<BeliefState> all_beliefs(const LabesModel& model, int cap,
                                     long max_enumeration) {
  const Vocabulary& vocab = model.vocab();
  const Schema& schema = model.schema();
  std::vector<std::vector<Tokens>> per_slot;
  for (int pi = 0; pi < schema.num_informable(); ++pi) {
    std::vector<Tokens> values{{}};
    std::vector<Tokens> frontier{{}};
    for (int len = 1; len <= cap; ++len) {
      std::vector<Tokens> next;
      for (const Tokens& prefix : frontier) {
        for (int id = 0; id < vocab.size(); ++id) {
          if (id == vocab.eov_id(pi)) continue;
          Tokens t = prefix;
          t.push_back(vocab.token(id));
          next.push_back(std::move(t));
        }
      }
      values.insert(values.end(), next.begin(), next.end());
      frontier = std::move(next);
      if (static_cast<long>(values.size()) > max_enumeration) {
        throw ConfigError("belief enumeration exceeds limit");
      }
    }
    per_slot.push_back(std::move(values));
  }

  std::vector<BeliefState> beliefs{{}};
  for (int pi = 0; pi < schema.num_informable(); ++pi) {
    std::vector<BeliefState> next;
    if (static_cast<long>(beliefs.size() * per_slot[pi].size()) >
        max_enumeration) {
      throw ConfigError("belief enumeration exceeds limit");
    }
    for (const BeliefState& b : beliefs) {
      for (const Tokens& v : per_slot[static_cast<std::size_t>(pi)]) {
        BeliefState nb = b;
        if (!v.empty()) nb.set(pi, v);
        next.push_back(std::move(nb));
      }
    }
    beliefs = std::move(next);
  }
  return beliefs;
}

double forced_belief_logprob(const LabesModel& model, Graph& g,
                             const LabesModel::EncodedTurn& enc,
                             const BeliefState& b) {
  auto bd = model.decode_belief(g, Net::prior, enc, BeliefMode::force, &b);
  return bd.log_prob_value;
}

double forced_response_logprob(const LabesModel& model, Graph& g,
                               const std::vector<int>& ctx,
                               const BeliefState& b, const EntityDb& db,
                               const std::vector<std::string>& domains,
                               const std::vector<int>& resp) {
  DbMatchVector d = model.db_vector(b, db, domains);
  auto rc = model.encode_for_response(g, ctx, model.belief_to_tokens(b), d);
  auto rd = model.decode_response(g, rc, true, &resp);
  return rd.log_prob_value;
}

}  // namespace

EnumeratedPosterior enumerate_posterior(const LabesModel& model,
                                        const Dialog& dialog, int turn,
                                        const BeliefState& b_prev,
                                        const EntityDb& db, int max_value_len,
                                        long max_enumeration) {
  if (turn < 0 || turn >= static_cast<int>(dialog.turns.size())) {
    throw ConfigError("enumerate_posterior: turn out of range");
  }
  const Vocabulary& vocab = model.vocab();
  std::vector<int> prev_resp =
      turn > 0 ? vocab.encode(
                     dialog.turns[static_cast<std::size_t>(turn - 1)]
                         .response_delex)
               : std::vector<int>{};
  const Turn& tn = dialog.turns[static_cast<std::size_t>(turn)];
  std::vector<int> ctx =
      LabesModel::make_context(vocab, prev_resp, vocab.encode(tn.user));
  std::vector<int> resp = vocab.encode(tn.response_delex);

  EnumeratedPosterior out;
  out.beliefs = all_beliefs(model, max_value_len, max_enumeration);

  Graph g(model.params(), false, 0);
  StTokens bp = model.belief_to_tokens(b_prev);
  auto enc = model.encode_turn(g, Net::prior, ctx, bp, nullptr);

  std::vector<double> joint;
  for (const BeliefState& b : out.beliefs) {
    double lp = forced_belief_logprob(model, g, enc, b);
    double lr = forced_response_logprob(model, g, ctx, b, db,
                                        dialog.active_domains, resp);
    out.log_prior.push_back(lp);
    out.log_resp.push_back(lr);
    joint.push_back(lp + lr);
  }
  out.log_marginal = logsumexp(joint);
  for (double j : joint) out.log_posterior.push_back(j - out.log_marginal);
  return out;
}

std::vector<double> exact_marginal(const LabesModel& model,
                                   const Dialog& dialog, const EntityDb& db,
                                   int max_value_len, long max_enumeration) {
  const Vocabulary& vocab = model.vocab();
  std::vector<BeliefState> beliefs =
      all_beliefs(model, max_value_len, max_enumeration);
  const std::size_t nb = beliefs.size();

  // filtering over the enumerated belief space, starting from the single
  // empty state
  std::vector<double> log_alpha{0.0};
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < nb; ++i) {
    if (beliefs[i] == BeliefState{}) {
      support = {i};
      break;
    }
  }
  if (support.empty()) throw ConfigError("empty belief missing");

  std::vector<double> marginals;
  std::vector<int> prev_resp;
  for (std::size_t t = 0; t < dialog.turns.size(); ++t) {
    const Turn& tn = dialog.turns[t];
    std::vector<int> ctx =
        LabesModel::make_context(vocab, prev_resp, vocab.encode(tn.user));
    std::vector<int> resp = vocab.encode(tn.response_delex);

    // log p(r_t, b_t = j | history) accumulated over the previous support
    std::vector<std::vector<double>> contrib(
        nb, std::vector<double>{});
    for (std::size_t si = 0; si < support.size(); ++si) {
      const BeliefState& bp = beliefs[support[si]];
      Graph g(model.params(), false, 0);
      auto enc =
          model.encode_turn(g, Net::prior, ctx, model.belief_to_tokens(bp),
                            nullptr);
      for (std::size_t j = 0; j < nb; ++j) {
        double lp = forced_belief_logprob(model, g, enc, beliefs[j]);
        double lr = forced_response_logprob(model, g, ctx, beliefs[j], db,
                                            dialog.active_domains, resp);
        contrib[j].push_back(log_alpha[si] + lp + lr);
      }
    }
    std::vector<double> log_joint(nb);
    std::vector<double> all;
    for (std::size_t j = 0; j < nb; ++j) {
      log_joint[j] = logsumexp(contrib[j]);
      all.push_back(log_joint[j]);
    }
    const double lm = logsumexp(all);
    marginals.push_back(lm);

    support.clear();
    log_alpha.clear();
    for (std::size_t j = 0; j < nb; ++j) {
      support.push_back(j);
      log_alpha.push_back(log_joint[j] - lm);
    }
    prev_resp = resp;
  }
  return marginals;
}

}  // namespace labes
