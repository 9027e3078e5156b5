// SPDX-License-Identifier: Apache-2.0
#include "labes/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"

namespace labes {

using nlohmann::json;

std::string TrainConfig::to_json_text() const {
  json j;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["alpha"] = alpha;
  j["label_fraction"] = label_fraction;
  j["seed"] = seed;
  j["patience"] = patience;
  j["decay_trigger"] = decay_trigger;
  j["decay_factor"] = decay_factor;
  j["max_epochs"] = max_epochs;
  j["phase2_max_epochs"] = phase2_max_epochs;
  j["clip_norm"] = clip_norm;
  j["threads"] = threads;
  j["sup_per_unsup"] = sup_per_unsup;
  return j.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.alpha = j.value("alpha", c.alpha);
  c.label_fraction = j.value("label_fraction", c.label_fraction);
  c.seed = j.value("seed", c.seed);
  c.patience = j.value("patience", c.patience);
  c.decay_trigger = j.value("decay_trigger", c.decay_trigger);
  c.decay_factor = j.value("decay_factor", c.decay_factor);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.phase2_max_epochs = j.value("phase2_max_epochs", c.phase2_max_epochs);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.threads = j.value("threads", c.threads);
  c.sup_per_unsup = j.value("sup_per_unsup", c.sup_per_unsup);
  if (c.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (c.lr <= 0.0) throw ConfigError("lr must be positive");
  if (c.label_fraction < 0.0 || c.label_fraction > 1.0)
    throw ConfigError("label_fraction must be in [0,1]");
  return c;
}

// ---------------------------------------------------------------------------
// Objectives

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

struct DialogResult {
  GradBuffer grads;
  double loss = 0.0;
  double kl = 0.0;
  long turns = 0;
};

enum class Objective { sup, un, self };

DialogResult run_dialog(const LabesModel& model, const Dialog& dialog,
                        const EntityDb& db, Objective obj, double alpha,
                        bool want_grads, std::uint64_t seed, bool relaxed_st) {
  const Vocabulary& vocab = model.vocab();
  DialogResult out;
  Graph g(model.params(), want_grads, seed);

  std::vector<Graph::Ref> loss_terms;
  std::vector<Graph::Ref> kl_terms;
  BeliefState gold_prev;
  StTokens chained_prev = model.empty_belief_tokens();
  std::vector<int> prev_resp;

  for (std::size_t t = 0; t < dialog.turns.size(); ++t) {
    const Turn& turn = dialog.turns[t];
    std::vector<int> user = vocab.encode(turn.user);
    std::vector<int> resp = vocab.encode(turn.response_delex);
    std::vector<int> ctx = LabesModel::make_context(vocab, prev_resp, user);

    if (obj == Objective::sup) {
      if (!turn.gold_belief) {
        throw DataError("supervised objective on unlabeled dialog " +
                        dialog.id);
      }
      const BeliefState& gold = *turn.gold_belief;
      StTokens b_prev = model.belief_to_tokens(gold_prev);

      auto prior_enc = model.encode_turn(g, Net::prior, ctx, b_prev, nullptr);
      auto bd_p = model.decode_belief(g, Net::prior, prior_enc,
                                      BeliefMode::force, &gold, relaxed_st);
      auto post_enc =
          model.encode_turn(g, Net::posterior, ctx, b_prev, &resp);
      auto bd_q = model.decode_belief(g, Net::posterior, post_enc,
                                      BeliefMode::force, &gold, relaxed_st);

      DbMatchVector d = model.db_vector(gold, db, dialog.active_domains);
      auto rc =
          model.encode_for_response(g, ctx, model.belief_to_tokens(gold), d);
      auto rd = model.decode_response(g, rc, true, &resp);

      loss_terms.push_back(
          g.scale(g.sum({bd_p.log_prob, bd_q.log_prob, rd.log_prob}), -1.0));
      gold_prev = gold;
    } else if (obj == Objective::un) {
      auto post_enc =
          model.encode_turn(g, Net::posterior, ctx, chained_prev, &resp);
      auto prior_enc =
          model.encode_turn(g, Net::prior, ctx, chained_prev, nullptr);
      auto ps = model.sample_posterior(g, post_enc, prior_enc, false,
                                       relaxed_st);

      DbMatchVector d =
          model.db_vector(ps.sample.belief, db, dialog.active_domains);
      auto rc = model.encode_for_response(g, ctx, ps.sample.serialized, d);
      auto rd = model.decode_response(g, rc, true, &resp);

      loss_terms.push_back(g.add(g.scale(rd.log_prob, -1.0),
                                 g.scale(ps.kl, alpha)));
      kl_terms.push_back(ps.kl);
      chained_prev = ps.sample.serialized;
    } else {
      auto prior_enc =
          model.encode_turn(g, Net::prior, ctx, chained_prev, nullptr);
      auto bd = model.decode_belief_st_greedy(g, prior_enc, relaxed_st);

      DbMatchVector d =
          model.db_vector(bd.belief, db, dialog.active_domains);
      auto rc = model.encode_for_response(g, ctx, bd.serialized, d);
      auto rd = model.decode_response(g, rc, true, &resp);

      loss_terms.push_back(g.scale(rd.log_prob, -1.0));
      chained_prev = bd.serialized;
    }
    prev_resp = resp;
    ++out.turns;
  }

  Graph::Ref total = g.sum(loss_terms);
  out.loss = g.scalar(total);
  for (Graph::Ref k : kl_terms) out.kl += g.scalar(k);
  if (want_grads) {
    g.backward(total);
    out.grads = std::move(g.grads());
  }
  return out;
}

LossStats run_batch(const LabesModel& model,
                    std::span<const Dialog* const> batch, const EntityDb& db,
                    Objective obj, double alpha, GradBuffer* grads,
                    std::uint64_t seed, int threads, bool relaxed_st) {
  if (batch.empty()) throw DataError("empty training batch");
  const int n = static_cast<int>(batch.size());
  std::vector<DialogResult> results(static_cast<std::size_t>(n));
  std::exception_ptr err;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(1, threads))
#endif
  for (int i = 0; i < n; ++i) {
    try {
      results[static_cast<std::size_t>(i)] = run_dialog(
          model, *batch[static_cast<std::size_t>(i)], db, obj, alpha,
          grads != nullptr, mix_seed(seed, static_cast<std::uint64_t>(i)),
          relaxed_st);
    } catch (...) {
      // exceptions must not unwind out of the parallel region
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);

  LossStats stats;
  // reduced in dialog order so results do not depend on thread count
  for (int i = 0; i < n; ++i) {
    const DialogResult& r = results[static_cast<std::size_t>(i)];
    stats.loss += r.loss;
    stats.kl += r.kl;
    stats.turns += r.turns;
    if (grads) grads->accumulate(r.grads);
  }
  const double inv = 1.0 / static_cast<double>(stats.turns);
  stats.loss *= inv;
  stats.kl *= inv;
  if (grads) grads->scale(inv);
  return stats;
}

}  // namespace

LossStats j_sup(const LabesModel& model, std::span<const Dialog* const> batch,
                const EntityDb& db, GradBuffer* grads, std::uint64_t seed,
                int threads, bool relaxed_st) {
  return run_batch(model, batch, db, Objective::sup, 0.0, grads, seed,
                   threads, relaxed_st);
}

LossStats j_un(const LabesModel& model, std::span<const Dialog* const> batch,
               const EntityDb& db, double alpha, GradBuffer* grads,
               std::uint64_t seed, int threads, bool relaxed_st) {
  return run_batch(model, batch, db, Objective::un, alpha, grads, seed,
                   threads, relaxed_st);
}

LossStats j_self(const LabesModel& model, std::span<const Dialog* const> batch,
                 const EntityDb& db, GradBuffer* grads, std::uint64_t seed,
                 int threads, bool relaxed_st) {
  return run_batch(model, batch, db, Objective::self, 0.0, grads, seed,
                   threads, relaxed_st);
}

// ---------------------------------------------------------------------------
// Optimization

void AdamState::reset(const ParameterSet& ps) {
  m.reset(ps);
  v.reset(ps);
  step = 0;
}

void step_optimizer(ParameterSet& params, GradBuffer& grads, AdamState& adam,
                    double lr, double clip_norm) {
  if (!grads.all_finite()) {
    throw NumericError("non-finite gradient in update");
  }
  const double norm = grads.global_norm();
  if (clip_norm > 0.0 && norm > clip_norm) {
    grads.scale(clip_norm / norm);
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  adam.step += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
  for (int i = 0; i < params.count(); ++i) {
    adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * grads[i];
    adam.v[i] = b2 * adam.v[i].array().matrix() +
                (1.0 - b2) * grads[i].array().square().matrix();
    Mat mhat = adam.m[i] / bc1;
    Mat vhat = adam.v[i] / bc2;
    params.value(i).array() -=
        lr * mhat.array() / (vhat.array().sqrt() + eps);
  }
  if (!params.all_finite()) {
    throw NumericError("non-finite weight after update: " +
                       params.first_non_finite());
  }
}

ScheduleTracker::Decision ScheduleTracker::observe(double dev_score) {
  ++epoch_;
  Decision d;
  if (dev_score > best_) {
    best_ = dev_score;
    best_epoch_ = epoch_;
    bad_ = 0;
    d.improved = true;
  } else {
    ++bad_;
    d.decay = (bad_ % decay_trigger_) == 0;
    d.stop = bad_ >= patience_;
  }
  return d;
}

void ScheduleTracker::restore(double best, int best_epoch, int bad) {
  best_ = best;
  best_epoch_ = best_epoch;
  bad_ = bad;
  epoch_ = best_epoch + bad;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(LabesModel& model, const EntityDb& db, TrainConfig cfg)
    : model_(model), db_(db), cfg_(cfg) {
  adam_.reset(model_.params());
}

double Trainer::dev_joint_goal(const DialogCorpus& dev) const {
  long correct = 0, total = 0;
  for (const Dialog& d : dev.dialogs) {
    auto outs = model_.unroll_dialog(d, db_, UnrollMode::eval);
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      if (!d.turns[t].gold_belief) continue;
      ++total;
      if (outs[t].belief == *d.turns[t].gold_belief) ++correct;
    }
  }
  if (total == 0) throw DataError("dev corpus has no labeled turns");
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

std::vector<std::vector<const Dialog*>> make_batches(
    const DialogCorpus& corpus, int batch_size, std::mt19937_64& rng) {
  std::vector<const Dialog*> order;
  order.reserve(corpus.dialogs.size());
  for (const Dialog& d : corpus.dialogs) order.push_back(&d);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<const Dialog*>> batches;
  for (std::size_t i = 0; i < order.size();
       i += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(order.size(),
                               i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(end));
  }
  return batches;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream ss(s);
  ss >> rng;
  if (ss.fail()) throw DataError("bad RNG state in checkpoint");
}

}  // namespace

double Trainer::run_phase(const std::string& phase, TrainMode mode,
                          const DialogCorpus& labeled,
                          const DialogCorpus& unlabeled,
                          const DialogCorpus& dev, const std::string& out_dir,
                          TrainResult& result, TrainStateBlob* resume_state) {
  const bool phase2 = phase != "supervised-pretrain";
  const int max_epochs = phase2 ? cfg_.phase2_max_epochs : cfg_.max_epochs;
  double lr = cfg_.lr;
  ScheduleTracker sched(cfg_.decay_trigger, cfg_.patience);
  std::mt19937_64 rng(mix_seed(cfg_.seed, phase2 ? 2 : 1));
  int start_epoch = 1;

  if (resume_state && resume_state->phase == phase) {
    lr = resume_state->lr;
    sched.restore(resume_state->best_dev, resume_state->best_epoch,
                  resume_state->bad_epochs);
    adam_.step = resume_state->adam_step;
    rng_from_string(rng, resume_state->rng_state);
    start_epoch = resume_state->epoch + 1;
  } else {
    adam_.reset(model_.params());
  }

  // best weights kept in memory so early stopping can rewind
  std::vector<Mat> best_weights;
  auto snapshot = [&]() {
    best_weights.clear();
    for (int i = 0; i < model_.params().count(); ++i) {
      best_weights.push_back(model_.params().value(i));
    }
  };
  snapshot();
  if (start_epoch > 1 && !out_dir.empty()) {
    const std::string best_path = out_dir + "/best_" + phase + ".ckpt";
    if (std::filesystem::exists(best_path)) {
      LoadedCheckpoint best_ck = load_checkpoint(best_path);
      for (const auto& e : best_ck.arrays) {
        best_weights[static_cast<std::size_t>(
            model_.params().require(e.name))] = e.value;
      }
    }
  }

  GradBuffer grads(model_.params());
  for (int epoch = start_epoch; epoch <= max_epochs; ++epoch) {
    auto sup_batches = make_batches(labeled, cfg_.batch_size, rng);
    std::vector<std::vector<const Dialog*>> un_batches;
    if (phase2 && mode != TrainMode::supervised) {
      un_batches = make_batches(unlabeled, cfg_.batch_size, rng);
    }

    double loss_sum = 0.0, kl_sum = 0.0;
    long steps = 0;
    auto do_batch = [&](const std::vector<const Dialog*>& b, Objective obj) {
      grads.zero();
      std::uint64_t bseed = mix_seed(
          cfg_.seed, (static_cast<std::uint64_t>(epoch) << 32) ^
                         (static_cast<std::uint64_t>(steps) << 2) ^
                         static_cast<std::uint64_t>(obj));
      std::span<const Dialog* const> sp(b.data(), b.size());
      LossStats s;
      switch (obj) {
        case Objective::sup:
          s = j_sup(model_, sp, db_, &grads, bseed, cfg_.threads);
          break;
        case Objective::un:
          s = j_un(model_, sp, db_, cfg_.alpha, &grads, bseed, cfg_.threads);
          break;
        case Objective::self:
          s = j_self(model_, sp, db_, &grads, bseed, cfg_.threads);
          break;
      }
      step_optimizer(model_.params(), grads, adam_, lr, cfg_.clip_norm);
      loss_sum += s.loss;
      kl_sum += s.kl;
      ++steps;
    };

    if (!phase2 || un_batches.empty()) {
      for (const auto& b : sup_batches) do_batch(b, Objective::sup);
    } else {
      const Objective un_obj =
          mode == TrainMode::self_train ? Objective::self : Objective::un;
      std::size_t si = 0;
      for (const auto& ub : un_batches) {
        for (int k = 0; k < cfg_.sup_per_unsup && !sup_batches.empty(); ++k) {
          do_batch(sup_batches[si % sup_batches.size()], Objective::sup);
          ++si;
        }
        do_batch(ub, un_obj);
      }
    }

    const double dev_score = dev_joint_goal(dev);
    auto decision = sched.observe(dev_score);
    if (decision.improved) snapshot();
    if (decision.decay) lr *= cfg_.decay_factor;

    EpochLog log;
    log.epoch = epoch;
    log.phase = phase;
    log.train_loss = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
    log.kl = steps > 0 ? kl_sum / static_cast<double>(steps) : 0.0;
    log.dev_joint_goal = dev_score;
    log.lr = lr;
    result.log.push_back(log);

    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      TrainStateBlob blob;
      blob.epoch = epoch;
      blob.phase = phase;
      blob.lr = lr;
      blob.best_dev = sched.best();
      blob.best_epoch = sched.best_epoch();
      blob.bad_epochs = sched.bad_epochs();
      blob.adam_step = adam_.step;
      blob.rng_state = rng_to_string(rng);
      save_checkpoint(out_dir + "/last.ckpt", model_, &blob, &adam_.m,
                      &adam_.v);
      if (decision.improved) {
        save_checkpoint(out_dir + "/best_" + phase + ".ckpt", model_, &blob);
      }
    }
    if (decision.stop) break;
  }

  for (int i = 0; i < model_.params().count(); ++i) {
    model_.params().value(i) = best_weights[static_cast<std::size_t>(i)];
  }
  return sched.best();
}

TrainResult Trainer::run(TrainMode mode, const DialogCorpus& labeled,
                         const DialogCorpus& unlabeled,
                         const DialogCorpus& dev, const std::string& out_dir,
                         const TrainStateBlob* resume,
                         const GradBuffer* resume_m,
                         const GradBuffer* resume_v) {
  if (labeled.dialogs.empty()) throw DataError("no labeled dialogs");
  TrainStateBlob resume_copy;
  TrainStateBlob* rs = nullptr;
  if (resume) {
    resume_copy = *resume;
    rs = &resume_copy;
    if ((resume_m == nullptr) != (resume_v == nullptr)) {
      throw ConfigError("resume requires both Adam moments or neither");
    }
    if (resume_m) {
      adam_.m = *resume_m;
      adam_.v = *resume_v;
    }
  }

  TrainResult result;
  const bool skip_phase1 = rs && rs->phase != "supervised-pretrain";
  double best = 0.0;
  if (!skip_phase1) {
    best = run_phase("supervised-pretrain", mode, labeled, unlabeled, dev,
                     out_dir, result, rs);
    result.best_dev_joint_goal = best;
    rs = nullptr;  // consumed by phase 1
  }

  if (mode != TrainMode::supervised && !unlabeled.dialogs.empty()) {
    const std::string phase =
        mode == TrainMode::self_train ? "self-train" : "semi";
    best = run_phase(phase, mode, labeled, unlabeled, dev, out_dir, result,
                     rs);
    result.best_dev_joint_goal = std::max(result.best_dev_joint_goal, best);
  }
  for (const EpochLog& l : result.log) {
    if (l.dev_joint_goal >= result.best_dev_joint_goal) {
      result.best_epoch = l.epoch;
      break;
    }
  }
  return result;
}

}  // namespace labes
