// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "labes/kb.hpp"
#include "labes/model.hpp"

namespace labes {

// Synthetic dialog generator with exactly-known belief states: user turns
// mention 0-2 new slot values through fixed templates, gold beliefs
// accumulate them, and system responses echo the filled values plus a
// db-bucket cue word.
struct SynthSpec {
  int slots = 2;
  int values_per_slot = 20;
  int dialogs = 500;
  int turns_per_dialog = 3;
  int db_size = 60;
  std::uint64_t seed = 7;

  std::string to_json_text() const;
  static SynthSpec from_json_text(const std::string& text);
};

struct SynthData {
  Schema schema;
  DialogCorpus corpus;
  EntityDb db;
};

SynthData generate(const SynthSpec& spec);

// Re-extracts slot values from utterances by template inversion; used to
// verify belief-utterance consistency.
BeliefState invert_templates(const Schema& schema, const Dialog& dialog,
                             int upto_turn);

// ---------------------------------------------------------------------------
// Enumeration oracle

// Exact per-turn log p_theta(r_t | u_{1:t}, r_{1:t-1}) by summing the joint
// over every terminated belief string, chaining exact per-turn posteriors
// across turns. Throws when the belief space exceeds `max_enumeration`.
std::vector<double> exact_marginal(const LabesModel& model,
                                   const Dialog& dialog, const EntityDb& db,
                                   int max_value_len,
                                   long max_enumeration = 100000);

// Single-turn helpers for the ELBO acceptance check.
struct EnumeratedPosterior {
  std::vector<BeliefState> beliefs;
  std::vector<double> log_prior;      // log p(b | b_prev, c)
  std::vector<double> log_resp;       // log p(r | c, b, d(b))
  std::vector<double> log_posterior;  // exact, normalized
  double log_marginal = 0.0;
};
EnumeratedPosterior enumerate_posterior(const LabesModel& model,
                                        const Dialog& dialog, int turn,
                                        const BeliefState& b_prev,
                                        const EntityDb& db, int max_value_len,
                                        long max_enumeration = 100000);

}  // namespace labes
