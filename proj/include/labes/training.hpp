// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "labes/checkpoint.hpp"
#include "labes/kb.hpp"
#include "labes/model.hpp"

namespace labes {

struct TrainConfig {
  double lr = 3e-3;
  int batch_size = 32;  // whole dialogs
  double alpha = 0.5;
  double label_fraction = 1.0;
  std::uint64_t seed = 1;
  int patience = 4;        // non-improving epochs before stopping
  int decay_trigger = 2;   // non-improving epochs before halving lr
  double decay_factor = 0.5;
  int max_epochs = 100;
  int phase2_max_epochs = 100;
  double clip_norm = 5.0;
  int threads = 1;
  int sup_per_unsup = 1;   // phase-2 alternation ratio

  std::string to_json_text() const;
  static TrainConfig from_json_text(const std::string& text);
};

// ---------------------------------------------------------------------------
// Objectives. Each returns the mean per-turn loss over the batch and, when
// `grads` is non-null, accumulates analytic gradients.

struct LossStats {
  double loss = 0.0;
  double kl = 0.0;  // mean KL portion (j_un only)
  long turns = 0;
};

// Negated supervised likelihood: belief under p_theta and q_phi plus the
// response term, teacher-forced with gold b_{t-1} and d_t from gold b_t.
LossStats j_sup(const LabesModel& model, std::span<const Dialog* const> batch,
                const EntityDb& db, GradBuffer* grads, std::uint64_t seed,
                int threads = 1, bool relaxed_st = false);

// Negated ELBO with one sequentially-chained straight-through posterior
// sample per turn; KL weighted by alpha.
LossStats j_un(const LabesModel& model, std::span<const Dialog* const> batch,
               const EntityDb& db, double alpha, GradBuffer* grads,
               std::uint64_t seed, int threads = 1, bool relaxed_st = false);

// Self-training objective: response reconstruction under greedy prior
// pseudo-beliefs, gradients flowing through straight-through tokens.
LossStats j_self(const LabesModel& model, std::span<const Dialog* const> batch,
                 const EntityDb& db, GradBuffer* grads, std::uint64_t seed,
                 int threads = 1, bool relaxed_st = false);

// ---------------------------------------------------------------------------
// Optimization

struct AdamState {
  GradBuffer m, v;
  long step = 0;
  void reset(const ParameterSet& ps);
};

// Global-norm clip then adaptive-moment update. Throws NumericError naming
// the first offending parameter on non-finite gradients or weights.
void step_optimizer(ParameterSet& params, GradBuffer& grads, AdamState& adam,
                    double lr, double clip_norm);

// Dev-driven schedule: lr halves after every `decay_trigger` consecutive
// non-improving dev epochs, training stops after `patience`.
class ScheduleTracker {
 public:
  ScheduleTracker(int decay_trigger, int patience)
      : decay_trigger_(decay_trigger), patience_(patience) {}
  struct Decision {
    bool improved = false;
    bool decay = false;
    bool stop = false;
  };
  Decision observe(double dev_score);
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int bad_epochs() const { return bad_; }
  void restore(double best, int best_epoch, int bad);

 private:
  int decay_trigger_, patience_;
  double best_ = -1e300;
  int best_epoch_ = -1;
  int bad_ = 0;
  int epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Training driver

enum class TrainMode { supervised, semi, self_train };

struct EpochLog {
  int epoch = 0;
  std::string phase;
  double train_loss = 0.0;
  double kl = 0.0;
  double dev_joint_goal = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  double best_dev_joint_goal = 0.0;
  int best_epoch = -1;
  std::vector<EpochLog> log;
};

class Trainer {
 public:
  Trainer(LabesModel& model, const EntityDb& db, TrainConfig cfg);

  // Phase 1 supervised pretraining (all modes), then for semi/self-train the
  // phase-2 alternation. Writes per-epoch checkpoints and `best.ckpt` under
  // out_dir (no files written when out_dir is empty). Resumes from a saved
  // train state when `resume` is given.
  TrainResult run(TrainMode mode, const DialogCorpus& labeled,
                  const DialogCorpus& unlabeled, const DialogCorpus& dev,
                  const std::string& out_dir,
                  const TrainStateBlob* resume = nullptr,
                  const GradBuffer* resume_m = nullptr,
                  const GradBuffer* resume_v = nullptr);

  // Dev-set joint goal accuracy from eval-mode unrolls.
  double dev_joint_goal(const DialogCorpus& dev) const;

 private:
  double run_phase(const std::string& phase, TrainMode mode,
                   const DialogCorpus& labeled, const DialogCorpus& unlabeled,
                   const DialogCorpus& dev, const std::string& out_dir,
                   TrainResult& result, TrainStateBlob* resume_state);

  LabesModel& model_;
  const EntityDb& db_;
  TrainConfig cfg_;
  AdamState adam_;
};

}  // namespace labes
