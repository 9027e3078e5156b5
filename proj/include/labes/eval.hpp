// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "labes/kb.hpp"
#include "labes/model.hpp"

namespace labes {

struct DialogOutput {
  std::string dialog_id;
  std::vector<BeliefState> beliefs;
  std::vector<Tokens> responses;  // delexicalized
  std::vector<int> db_buckets;
};

struct MetricsReport {
  double joint_goal = 0.0;  // ratio
  double bleu = 0.0;        // percentage
  double match = 0.0;       // ratio
  double succ_f1 = 0.0;     // ratio
  double inform = 0.0;      // percentage
  double success = 0.0;     // percentage
  double combined = 0.0;    // (inform + success) * 0.5 + bleu
  struct PerDialog {
    std::string id;
    bool matched = false;
    bool informed = false;
    bool successful = false;
    int turns_correct = 0;
    int turns = 0;
  };
  std::vector<PerDialog> per_dialog;

  std::string to_json_text(bool with_breakdown) const;
  std::string to_table_text() const;
};

// Proportion of turns where every (domain, slot) value matches gold after
// normalization; empty-vs-empty matches.
double joint_goal_accuracy(const std::vector<BeliefState>& predicted,
                           const std::vector<BeliefState>& gold,
                           const Schema& schema);

// Corpus-level 4-gram BLEU with brevity penalty, no smoothing, as a
// percentage.
double bleu(const std::vector<Tokens>& candidates,
            const std::vector<Tokens>& references);

double match_rate(const std::vector<DialogOutput>& outputs,
                  const std::vector<const Dialog*>& gold, const Schema& schema,
                  const EntityDb& db,
                  std::vector<MetricsReport::PerDialog>* breakdown = nullptr);

double succ_f1(const std::vector<DialogOutput>& outputs,
               const std::vector<const Dialog*>& gold, const Schema& schema);

std::pair<double, double> inform_success(
    const std::vector<DialogOutput>& outputs,
    const std::vector<const Dialog*>& gold, const Schema& schema,
    const EntityDb& db,
    std::vector<MetricsReport::PerDialog>* breakdown = nullptr);

double combined(double inform, double success, double bleu);

// Eval-mode unroll of every dialog followed by the full metric battery. The
// model's own predicted beliefs feed the response decoder throughout.
MetricsReport evaluate_corpus(const LabesModel& model,
                              const DialogCorpus& corpus, const EntityDb& db,
                              int beam_width = 1, int threads = 1);

std::vector<DialogOutput> unroll_corpus(const LabesModel& model,
                                        const DialogCorpus& corpus,
                                        const EntityDb& db, int beam_width = 1,
                                        int threads = 1);

}  // namespace labes
