// SPDX-License-Identifier: Apache-2.0
#include "labes/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"

namespace labes {

using nlohmann::json;

std::string MetricsReport::to_json_text(bool with_breakdown) const {
  json j;
  j["joint_goal"] = joint_goal;
  j["bleu"] = bleu;
  j["match"] = match;
  j["succ_f1"] = succ_f1;
  j["inform"] = inform;
  j["success"] = success;
  j["combined"] = combined;
  if (with_breakdown) {
    json arr = json::array();
    for (const auto& d : per_dialog) {
      arr.push_back({{"id", d.id},
                     {"matched", d.matched},
                     {"informed", d.informed},
                     {"successful", d.successful},
                     {"turns_correct", d.turns_correct},
                     {"turns", d.turns}});
    }
    j["dialogs"] = arr;
  }
  return j.dump(2);
}

std::string MetricsReport::to_table_text() const {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(2);
  ss << "joint goal  " << 100.0 * joint_goal << "\n"
     << "match       " << 100.0 * match << "\n"
     << "succ f1     " << 100.0 * succ_f1 << "\n"
     << "inform      " << inform << "\n"
     << "success     " << success << "\n"
     << "bleu        " << bleu << "\n"
     << "combined    " << combined << "\n";
  return ss.str();
}

// ---------------------------------------------------------------------------
// Belief accuracy

namespace {

bool beliefs_equal(const BeliefState& a, const BeliefState& b,
                   const Schema& schema) {
  for (int pi = 0; pi < schema.num_informable(); ++pi) {
    const Tokens* va = a.value(pi);
    const Tokens* vb = b.value(pi);
    const bool fa = va && !va->empty();
    const bool fb = vb && !vb->empty();
    if (fa != fb) return false;
    if (fa && normalize_value(join_tokens(*va)) !=
                  normalize_value(join_tokens(*vb))) {
      return false;
    }
  }
  return true;
}

}  // namespace

double joint_goal_accuracy(const std::vector<BeliefState>& predicted,
                           const std::vector<BeliefState>& gold,
                           const Schema& schema) {
  if (predicted.size() != gold.size()) {
    throw DataError("joint goal: prediction/gold length mismatch");
  }
  if (predicted.empty()) throw DataError("joint goal: no turns");
  long correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (beliefs_equal(predicted[i], gold[i], schema)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------------------
// BLEU

double bleu(const std::vector<Tokens>& candidates,
            const std::vector<Tokens>& references) {
  if (candidates.size() != references.size()) {
    throw DataError("bleu: candidate/reference count mismatch");
  }
  if (candidates.empty()) throw DataError("bleu: empty corpus");
  constexpr int kMaxN = 4;
  std::array<long, kMaxN> clipped{}, totals{};
  long cand_len = 0, ref_len = 0;

  auto ngram_counts = [](const Tokens& toks, int n) {
    std::map<std::vector<std::string>, long> counts;
    if (static_cast<int>(toks.size()) >= n) {
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size();
           ++i) {
        std::vector<std::string> g(toks.begin() + static_cast<long>(i),
                                   toks.begin() + static_cast<long>(i) + n);
        ++counts[g];
      }
    }
    return counts;
  };

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<long>(candidates[i].size());
    ref_len += static_cast<long>(references[i].size());
    for (int n = 1; n <= kMaxN; ++n) {
      auto cc = ngram_counts(candidates[i], n);
      auto rc = ngram_counts(references[i], n);
      for (const auto& [g, c] : cc) {
        totals[static_cast<std::size_t>(n - 1)] += c;
        auto it = rc.find(g);
        if (it != rc.end()) {
          clipped[static_cast<std::size_t>(n - 1)] += std::min(c, it->second);
        }
      }
    }
  }

  double log_prec = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    if (clipped[static_cast<std::size_t>(n)] == 0 ||
        totals[static_cast<std::size_t>(n)] == 0) {
      return 0.0;  // unsmoothed: any zero n-gram precision zeroes the score
    }
    log_prec +=
        std::log(static_cast<double>(clipped[static_cast<std::size_t>(n)]) /
                 static_cast<double>(totals[static_cast<std::size_t>(n)]));
  }
  log_prec /= kMaxN;
  double bp = 1.0;
  if (cand_len < ref_len && cand_len > 0) {
    bp = std::exp(1.0 - static_cast<double>(ref_len) /
                            static_cast<double>(cand_len));
  }
  return 100.0 * bp * std::exp(log_prec);
}

// ---------------------------------------------------------------------------
// Task metrics

namespace {

// Entities satisfying the dialog goal's inform constraints.
std::set<std::string> goal_entity_ids(const Dialog& dialog,
                                      const Schema& schema,
                                      const EntityDb& db) {
  std::set<std::string> ids;
  for (const auto& [domain, goal] : dialog.goal) {
    BeliefState constraint;
    for (const auto& [slot, value] : goal.inform) {
      int pi = schema.pair_index(domain, slot);
      if (pi >= 0) constraint.set(pi, tokenize(value));
    }
    for (const Entity* e : db.query(schema, constraint, {domain})) {
      ids.insert(e->id);
    }
  }
  return ids;
}

// Whether the final predicted belief points at a goal-consistent entity.
bool dialog_matched(const DialogOutput& out, const Dialog& dialog,
                    const Schema& schema, const EntityDb& db) {
  if (dialog.goal.empty()) return true;  // nothing to satisfy
  std::set<std::string> want = goal_entity_ids(dialog, schema, db);
  if (want.empty()) return false;
  if (out.beliefs.empty()) return false;
  for (const Entity* e :
       db.query(schema, out.beliefs.back(), dialog.active_domains)) {
    if (want.count(e->id)) return true;
  }
  return false;
}

std::set<std::string> requested_slots(const Dialog& dialog) {
  std::set<std::string> slots;
  for (const auto& [domain, goal] : dialog.goal) {
    for (const std::string& s : goal.request) slots.insert(s);
  }
  return slots;
}

std::set<std::string> offered_slots(const DialogOutput& out,
                                    const Schema& schema) {
  std::set<std::string> slots;
  for (const Tokens& resp : out.responses) {
    for (const std::string& tok : resp) {
      for (const std::string& s : schema.requestable_slots()) {
        if (tok == Schema::placeholder(s)) slots.insert(s);
      }
    }
  }
  return slots;
}

}  // namespace

double match_rate(const std::vector<DialogOutput>& outputs,
                  const std::vector<const Dialog*>& gold, const Schema& schema,
                  const EntityDb& db,
                  std::vector<MetricsReport::PerDialog>* breakdown) {
  if (outputs.size() != gold.size() || outputs.empty()) {
    throw DataError("match rate: output/gold mismatch");
  }
  long matched = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const bool m = dialog_matched(outputs[i], *gold[i], schema, db);
    if (m) ++matched;
    if (breakdown) (*breakdown)[i].matched = m;
  }
  return static_cast<double>(matched) / static_cast<double>(outputs.size());
}

double succ_f1(const std::vector<DialogOutput>& outputs,
               const std::vector<const Dialog*>& gold, const Schema& schema) {
  if (outputs.size() != gold.size() || outputs.empty()) {
    throw DataError("success F1: output/gold mismatch");
  }
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    std::set<std::string> want = requested_slots(*gold[i]);
    std::set<std::string> got = offered_slots(outputs[i], schema);
    for (const std::string& s : got) {
      if (want.count(s)) {
        ++tp;
      } else {
        ++fp;
      }
    }
    for (const std::string& s : want) {
      if (!got.count(s)) ++fn;
    }
  }
  if (tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * p * r / (p + r);
}

std::pair<double, double> inform_success(
    const std::vector<DialogOutput>& outputs,
    const std::vector<const Dialog*>& gold, const Schema& schema,
    const EntityDb& db, std::vector<MetricsReport::PerDialog>* breakdown) {
  if (outputs.size() != gold.size() || outputs.empty()) {
    throw DataError("inform/success: output/gold mismatch");
  }
  long informed = 0, successful = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const bool inf = dialog_matched(outputs[i], *gold[i], schema, db);
    bool suc = false;
    if (inf) {
      std::set<std::string> want = requested_slots(*gold[i]);
      std::set<std::string> got = offered_slots(outputs[i], schema);
      suc = std::all_of(want.begin(), want.end(), [&](const std::string& s) {
        return got.count(s) > 0;
      });
    }
    if (inf) ++informed;
    if (suc) ++successful;
    if (breakdown) {
      (*breakdown)[i].informed = inf;
      (*breakdown)[i].successful = suc;
    }
  }
  const double denom = static_cast<double>(outputs.size());
  return {100.0 * static_cast<double>(informed) / denom,
          100.0 * static_cast<double>(successful) / denom};
}

double combined(double inform, double success, double bleu) {
  return (inform + success) * 0.5 + bleu;
}

// ---------------------------------------------------------------------------
// Corpus evaluation

std::vector<DialogOutput> unroll_corpus(const LabesModel& model,
                                        const DialogCorpus& corpus,
                                        const EntityDb& db, int beam_width,
                                        int threads) {
  const int n = static_cast<int>(corpus.dialogs.size());
  std::vector<DialogOutput> outputs(static_cast<std::size_t>(n));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(1, threads))
#endif
  for (int i = 0; i < n; ++i) {
    const Dialog& d = corpus.dialogs[static_cast<std::size_t>(i)];
    DialogOutput& out = outputs[static_cast<std::size_t>(i)];
    out.dialog_id = d.id;
    for (const TurnOutput& t :
         model.unroll_dialog(d, db, UnrollMode::eval, 0, beam_width)) {
      out.beliefs.push_back(t.belief);
      out.responses.push_back(model.vocab().decode(t.response));
      out.db_buckets.push_back(t.db_bucket);
    }
  }
  return outputs;
}

MetricsReport evaluate_corpus(const LabesModel& model,
                              const DialogCorpus& corpus, const EntityDb& db,
                              int beam_width, int threads) {
  if (corpus.dialogs.empty()) throw DataError("evaluate: empty corpus");
  std::vector<DialogOutput> outputs =
      unroll_corpus(model, corpus, db, beam_width, threads);
  std::vector<const Dialog*> gold;
  for (const Dialog& d : corpus.dialogs) gold.push_back(&d);

  MetricsReport rep;
  rep.per_dialog.resize(outputs.size());
  std::vector<BeliefState> pred_b, gold_b;
  std::vector<Tokens> cand, ref;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    rep.per_dialog[i].id = outputs[i].dialog_id;
    rep.per_dialog[i].turns = static_cast<int>(gold[i]->turns.size());
    for (std::size_t t = 0; t < gold[i]->turns.size(); ++t) {
      cand.push_back(outputs[i].responses[t]);
      ref.push_back(gold[i]->turns[t].response_delex);
      if (gold[i]->turns[t].gold_belief) {
        pred_b.push_back(outputs[i].beliefs[t]);
        gold_b.push_back(*gold[i]->turns[t].gold_belief);
        if (beliefs_equal(outputs[i].beliefs[t],
                          *gold[i]->turns[t].gold_belief, model.schema())) {
          ++rep.per_dialog[i].turns_correct;
        }
      }
    }
  }
  if (!pred_b.empty()) {
    rep.joint_goal = joint_goal_accuracy(pred_b, gold_b, model.schema());
  }
  rep.bleu = bleu(cand, ref);
  rep.match = match_rate(outputs, gold, model.schema(), db, &rep.per_dialog);
  rep.succ_f1 = succ_f1(outputs, gold, model.schema());
  auto [inf, suc] =
      inform_success(outputs, gold, model.schema(), db, &rep.per_dialog);
  rep.inform = inf;
  rep.success = suc;
  rep.combined = combined(rep.inform, rep.success, rep.bleu);
  return rep;
}

}  // namespace labes
