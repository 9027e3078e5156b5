// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: one pass/fail line per criterion, nonzero exit when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "labes/adapters.hpp"
#include "labes/checkpoint.hpp"
#include "labes/eval.hpp"
#include "labes/synth.hpp"
#include "labes/training.hpp"

using namespace labes;

namespace {

int failures = 0;

void report(int num, const char* name, bool ok, const std::string& detail) {
  std::printf("criterion %d (%s): %s%s%s\n", num, name, ok ? "PASS" : "FAIL",
              detail.empty() ? "" : " — ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void report_skip(int num, const char* name, const std::string& why) {
  std::printf("criterion %d (%s): SKIP — %s\n", num, name, why.c_str());
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Setup {
  SynthData data;
  LabesModel model;
};

Setup make_setup(SynthSpec spec, ModelConfig cfg, int vocab_size,
                 std::uint64_t init_seed) {
  SynthData data = generate(spec);
  Vocabulary vocab = Vocabulary::build(data.corpus, data.schema, vocab_size);
  LabesModel model(cfg, data.schema, vocab, init_seed);
  return {std::move(data), std::move(model)};
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients vs central finite differences.

void criterion_gradients() {
  auto t0 = std::chrono::steady_clock::now();
  SynthSpec spec;
  spec.slots = 1;
  spec.values_per_slot = 3;
  spec.dialogs = 2;
  spec.turns_per_dialog = 2;
  spec.db_size = 5;
  ModelConfig cfg;
  cfg.hidden = 8;
  cfg.embedding = 6;
  cfg.dropout = 0.0;
  cfg.max_value_len = 3;
  cfg.max_resp_len = 12;
  Setup s = make_setup(spec, cfg, 64, 11);

  std::vector<const Dialog*> batch;
  for (const Dialog& d : s.data.corpus.dialogs) batch.push_back(&d);
  std::span<const Dialog* const> sp(batch.data(), batch.size());

  auto worst = [&](bool unsupervised) {
    LossFn loss = [&](const ParameterSet&, GradBuffer* grads) {
      LossStats st =
          unsupervised
              ? j_un(s.model, sp, s.data.db, cfg.alpha, grads, 5, 1, true)
              : j_sup(s.model, sp, s.data.db, grads, 5, 1, false);
      return st.loss;
    };
    return grad_check(loss, s.model.params(), 1e-5);
  };
  GradCheckResult sup = worst(false);
  GradCheckResult un = worst(true);
  double err = std::max(sup.max_rel_error, un.max_rel_error);
  double secs = seconds_since(t0);
  report(1, "gradient check", err < 1e-5 && secs < 60.0,
         fmt("max rel error %.3e (sup %.3e at %s, unsup %.3e at %s), %.1fs",
             err, sup.max_rel_error, sup.worst_param.c_str(),
             un.max_rel_error, un.worst_param.c_str(), secs));
}

// ---------------------------------------------------------------------------
// 2. ELBO lower-bounds the exact marginal; exact posterior closes the gap.

void criterion_elbo() {
  auto t0 = std::chrono::steady_clock::now();
  SynthSpec spec;
  spec.slots = 1;
  spec.values_per_slot = 3;
  spec.dialogs = 2;
  spec.turns_per_dialog = 2;
  spec.db_size = 5;
  ModelConfig cfg;
  cfg.hidden = 6;
  cfg.embedding = 5;
  cfg.dropout = 0.0;
  cfg.max_value_len = 2;
  cfg.max_resp_len = 12;
  Setup s = make_setup(spec, cfg, 48, 23);
  const Dialog& d = s.data.corpus.dialogs[0];
  const Vocabulary& vocab = s.model.vocab();

  std::vector<double> lm = exact_marginal(s.model, d, s.data.db, 2);
  EnumeratedPosterior e =
      enumerate_posterior(s.model, d, 0, BeliefState{}, s.data.db, 2);
  const double log_p = e.log_marginal;

  // 256-sample ELBO estimate from the learned posterior, first turn
  std::vector<int> ctx =
      LabesModel::make_context(vocab, {}, vocab.encode(d.turns[0].user));
  std::vector<int> resp = vocab.encode(d.turns[0].response_delex);
  double elbo_sum = 0.0;
  for (int k = 0; k < 256; ++k) {
    Graph g(s.model.params(), false, 1000 + static_cast<std::uint64_t>(k));
    auto post = s.model.encode_turn(g, Net::posterior, ctx,
                                    s.model.empty_belief_tokens(), &resp);
    auto prior = s.model.encode_turn(g, Net::prior, ctx,
                                     s.model.empty_belief_tokens(), nullptr);
    auto ps = s.model.sample_posterior(g, post, prior);
    DbMatchVector dv =
        s.model.db_vector(ps.sample.belief, s.data.db, d.active_domains);
    auto rc = s.model.encode_for_response(
        g, ctx, s.model.belief_to_tokens(ps.sample.belief), dv);
    auto forced = s.model.decode_response(g, rc, true, &resp);
    elbo_sum += g.scalar(ps.prior_log_prob) + forced.log_prob_value -
                ps.sample.log_prob_value;
  }
  const double elbo = elbo_sum / 256.0;

  // exact-posterior identity: log p == E_post[log p(r|b)] - KL[post || prior]
  double recon = 0.0, kl = 0.0;
  for (std::size_t i = 0; i < e.beliefs.size(); ++i) {
    const double q = std::exp(e.log_posterior[i]);
    recon += q * e.log_resp[i];
    kl += q * (e.log_posterior[i] - e.log_prior[i]);
  }
  const double gap = std::abs(log_p - (recon - kl));
  const double marg_diff = std::abs(lm[0] - log_p);
  double secs = seconds_since(t0);
  report(2, "evidence lower bound vs enumeration",
         elbo <= log_p && gap < 1e-6 && marg_diff < 1e-9 && secs < 60.0,
         fmt("ELBO %.6f <= log p %.6f, exact-posterior gap %.2e, %.1fs", elbo,
             log_p, gap, secs));
}

// ---------------------------------------------------------------------------
// 3. Copy-augmented distribution normalization.

void criterion_copy_normalization() {
  std::mt19937_64 seeds(41);
  double worst_mass = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    ParameterSet ps;
    const int V = 9, H = 5, W = 6;
    ps.add("wgen", V, H);
    ps.add("wcp", W, H);
    ps.add("hhat", H, 1);
    ps.add("enc", W, 4);
    init_uniform(ps, 2.0, seeds());
    Graph g(ps, false, 0);
    Graph::Ref lp = g.copy_log_dist(
        ps.require("wgen"), ps.require("wcp"), g.param(ps.require("hhat")),
        g.param(ps.require("enc")), {3, 7, 3, 7});  // duplicated sources
    double mass = 0.0;
    for (int i = 0; i < V; ++i) mass += std::exp(g.value(lp)(i, 0));
    worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
  }

  // duplicated source token against the hand-expanded formula
  ParameterSet ps;
  ps.add("wgen", 3, 2);
  ps.add("wcp", 2, 2);
  ps.add("hhat", 2, 1);
  ps.add("enc", 2, 2);
  ps.value(ps.require("wgen")) << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6;
  ps.value(ps.require("wcp")) << 0.2, 0.1, -0.3, 0.5;
  ps.value(ps.require("hhat")) << 0.7, -0.4;
  ps.value(ps.require("enc")) << 0.3, -0.6, 0.9, 0.2;
  Graph g(ps, false, 0);
  Graph::Ref lp =
      g.copy_log_dist(ps.require("wgen"), ps.require("wcp"),
                      g.param(ps.require("hhat")), g.param(ps.require("enc")),
                      {2, 2});
  Vec h(2);
  h << 0.7, -0.4;
  Mat wgen(3, 2), wcp(2, 2), encm(2, 2);
  wgen << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6;
  wcp << 0.2, 0.1, -0.3, 0.5;
  encm << 0.3, -0.6, 0.9, 0.2;
  Vec gen = wgen * h;
  Vec cph = wcp * h;
  Vec mass = gen.array().exp().matrix();
  mass[2] += std::exp(encm.col(0).dot(cph)) + std::exp(encm.col(1).dot(cph));
  const double expect = std::log(mass[2] / mass.sum());
  const double dup_err = std::abs(g.value(lp)(2, 0) - expect);

  report(3, "copy distribution normalization",
         worst_mass < 1e-6 && dup_err < 1e-8,
         fmt("worst |mass-1| %.2e over 1000 draws, duplicate-source error "
             "%.2e",
             worst_mass, dup_err));
}

// ---------------------------------------------------------------------------
// 4. Match buckets and the combined-score arithmetic.

void criterion_arithmetic() {
  bool ok = true;
  for (long c = 0; c <= 10; ++c) {
    DbMatchVector v = match_vector(c);
    int expect = c > 3 ? 4 : static_cast<int>(c);
    double sum = 0.0;
    for (double x : v.one_hot) sum += x;
    ok = ok && v.bucket() == expect && sum == 1.0 &&
         v.one_hot[static_cast<std::size_t>(expect)] == 1.0;
  }
  const double comb = combined(78.07, 67.06, 18.13);
  ok = ok && std::abs(comb - 90.69) <= 0.005;
  report(4, "db buckets and combined score", ok,
         fmt("buckets 0..10 ok, combined(78.07, 67.06, 18.13) = %.4f", comb));
}

// ---------------------------------------------------------------------------
// 5. Desk-scale learning on the synthetic corpus.

struct SynthSplits {
  SynthData data;
  DialogCorpus train, dev;
};

SynthSplits desk_corpus() {
  SynthSpec spec;  // defaults: 500 dialogs, 2 slots x 20 values
  SynthSplits s{generate(spec), {}, {}};
  const auto& all = s.data.corpus.dialogs;
  s.train.dialogs.assign(all.begin(), all.end() - 60);
  s.dev.dialogs.assign(all.end() - 60, all.end());
  return s;
}

ModelConfig desk_model_config() {
  ModelConfig cfg;
  cfg.hidden = 32;
  cfg.embedding = 24;
  cfg.dropout = 0.0;
  cfg.max_value_len = 2;
  cfg.max_resp_len = 24;
  return cfg;
}

double desk_run(const SynthSplits& s, TrainMode mode,
                const DialogCorpus& labeled, const DialogCorpus& unlabeled,
                std::uint64_t seed, int max_epochs, int phase2_epochs) {
  ModelConfig cfg = desk_model_config();
  Vocabulary vocab = Vocabulary::build(s.data.corpus, s.data.schema, 160);
  LabesModel model(cfg, s.data.schema, vocab, seed);
  TrainConfig tcfg;
  tcfg.lr = 3e-3;
  tcfg.batch_size = 32;
  tcfg.seed = seed;
  tcfg.max_epochs = max_epochs;
  tcfg.phase2_max_epochs = phase2_epochs;
  tcfg.patience = 3;
  tcfg.decay_trigger = 2;
  Trainer trainer(model, s.data.db, tcfg);
  TrainResult r = trainer.run(mode, labeled, unlabeled, s.dev, "");
  return r.best_dev_joint_goal;
}

void criterion_learning() {
  auto t0 = std::chrono::steady_clock::now();
  SynthSplits s = desk_corpus();

  const double full = desk_run(s, TrainMode::supervised, s.train, {}, 1, 12, 0);

  double sup_sum = 0.0, vl_sum = 0.0, st_sum = 0.0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto [labeled, unlabeled] = split_labels(s.train, 0.25, seed);
    sup_sum +=
        desk_run(s, TrainMode::supervised, labeled, {}, seed, 12, 0);
    vl_sum += desk_run(s, TrainMode::semi, labeled, unlabeled, seed, 12, 8);
    st_sum +=
        desk_run(s, TrainMode::self_train, labeled, unlabeled, seed, 12, 8);
  }
  const double sup = sup_sum / 3.0, vl = vl_sum / 3.0, st = st_sum / 3.0;
  double secs = seconds_since(t0);
  const bool ok =
      full >= 0.95 && vl >= sup + 0.03 && vl >= st && secs <= 900.0;
  report(5, "desk-scale learning", ok,
         fmt("full-label joint goal %.4f; 25%% labels: sup-only %.4f, "
             "semi-vl %.4f, semi-st %.4f (3-seed means), %.0fs",
             full, sup, vl, st, secs));
}

// ---------------------------------------------------------------------------
// 6. CamRest676 reproduction, only when the dataset is available.

void criterion_camrest() {
  const char* root = std::getenv("LABES_DATA_ROOT");
  std::vector<std::filesystem::path> candidates = {"data/camrest",
                                                   "CamRest676"};
  if (root) {
    candidates.push_back(std::filesystem::path(root) / "camrest");
    candidates.push_back(std::filesystem::path(root) / "CamRest676");
  }
  std::filesystem::path found;
  for (const auto& dir : candidates) {
    if (std::filesystem::exists(dir / "CamRest676_v2.json") ||
        std::filesystem::exists(dir / "CamRest676.json")) {
      found = dir;
      break;
    }
  }
  if (found.empty()) {
    report_skip(6, "camrest676 reproduction",
                "dataset not provided (set LABES_DATA_ROOT or place "
                "CamRest676 under data/camrest)");
    return;
  }
  // Full supervision run with the default model configuration.
  auto t0 = std::chrono::steady_clock::now();
  AdaptedData data = adapt_dataset(DatasetKind::camrest, found.string());
  DialogCorpus both = data.train;
  for (const Dialog& d : data.dev.dialogs) both.dialogs.push_back(d);
  Vocabulary vocab = Vocabulary::build(both, data.schema, 800);
  ModelConfig cfg;
  cfg.dropout = 0.35;
  LabesModel model(cfg, data.schema, vocab, 1);
  TrainConfig tcfg;
  tcfg.lr = 3e-3;
  tcfg.batch_size = 32;
  tcfg.max_epochs = 60;
  Trainer trainer(model, data.db, tcfg);
  TrainResult r =
      trainer.run(TrainMode::supervised, data.train, {}, data.dev, "");
  MetricsReport rep = evaluate_corpus(model, data.test, data.db);
  double secs = seconds_since(t0);
  report(6, "camrest676 reproduction",
         rep.joint_goal >= 0.88 && secs <= 3600.0 * 3,
         fmt("test joint goal %.4f (dev %.4f), %.0fs", rep.joint_goal,
             r.best_dev_joint_goal, secs));
}

// ---------------------------------------------------------------------------
// 7. Learning-rate schedule semantics.

void criterion_schedule() {
  ScheduleTracker sched(2, 4);
  double lr = 1.0;
  std::vector<double> scripted = {0.50, 0.40, 0.40, 0.45, 0.30};
  std::vector<double> lr_after;
  bool stopped = false;
  int stop_epoch = -1;
  for (std::size_t i = 0; i < scripted.size(); ++i) {
    auto d = sched.observe(scripted[i]);
    if (d.decay) lr *= 0.5;
    lr_after.push_back(lr);
    if (d.stop) {
      stopped = true;
      stop_epoch = static_cast<int>(i) + 1;
      break;
    }
  }
  // lr must halve exactly at the 2nd and 4th consecutive bad epochs, and
  // training stops at the 4th
  const bool ok = lr_after.size() == 5 && lr_after[0] == 1.0 &&
                  lr_after[1] == 1.0 && lr_after[2] == 0.5 &&
                  lr_after[3] == 0.5 && lr_after[4] == 0.25 && stopped &&
                  stop_epoch == 5;
  report(7, "learning-rate schedule", ok,
         fmt("halved after 2 consecutive bad epochs, stopped after 4 "
             "(epoch %d)",
             stop_epoch));
}

// ---------------------------------------------------------------------------
// 8. Bitwise determinism and resume equivalence.

void criterion_determinism() {
  SynthSpec spec;
  spec.slots = 2;
  spec.values_per_slot = 4;
  spec.dialogs = 24;
  spec.turns_per_dialog = 2;
  spec.db_size = 10;
  SynthData data = generate(spec);
  DialogCorpus train, dev;
  train.dialogs.assign(data.corpus.dialogs.begin(),
                       data.corpus.dialogs.begin() + 18);
  dev.dialogs.assign(data.corpus.dialogs.begin() + 18,
                     data.corpus.dialogs.end());
  ModelConfig cfg;
  cfg.hidden = 8;
  cfg.embedding = 6;
  cfg.dropout = 0.2;
  cfg.max_value_len = 2;
  cfg.max_resp_len = 16;
  TrainConfig tcfg;
  tcfg.lr = 3e-3;
  tcfg.batch_size = 4;
  tcfg.max_epochs = 3;
  tcfg.patience = 100;
  tcfg.decay_trigger = 100;
  tcfg.seed = 9;

  auto fresh_model = [&] {
    Vocabulary vocab = Vocabulary::build(data.corpus, data.schema, 96);
    return LabesModel(cfg, data.schema, vocab, 9);
  };
  auto run_to = [&](const std::string& dir, int epochs) {
    std::filesystem::remove_all(dir);
    LabesModel model = fresh_model();
    TrainConfig c = tcfg;
    c.max_epochs = epochs;
    Trainer t(model, data.db, c);
    t.run(TrainMode::supervised, train, {}, dev, dir);
    save_checkpoint(dir + "/final.ckpt", model);
    return evaluate_corpus(model, dev, data.db).to_json_text(true);
  };

  const std::string rep_a = run_to("acc_det_a", 3);
  const std::string rep_b = run_to("acc_det_b", 3);
  const bool identical =
      read_file("acc_det_a/last.ckpt") == read_file("acc_det_b/last.ckpt") &&
      read_file("acc_det_a/final.ckpt") ==
          read_file("acc_det_b/final.ckpt") &&
      rep_a == rep_b && !rep_a.empty();

  // resume: two epochs, then a third from last.ckpt
  run_to("acc_det_c", 2);
  LoadedCheckpoint last = load_checkpoint("acc_det_c/last.ckpt");
  LabesModel resumed = model_from_checkpoint(last);
  GradBuffer m(resumed.params()), v(resumed.params());
  for (int i = 0; i < resumed.params().count(); ++i) {
    m[i] = last.adam_m[static_cast<std::size_t>(i)];
    v[i] = last.adam_v[static_cast<std::size_t>(i)];
  }
  Trainer tr(resumed, data.db, tcfg);
  tr.run(TrainMode::supervised, train, {}, dev, "acc_det_c",
         &*last.train_state, &m, &v);
  save_checkpoint("acc_det_c/final.ckpt", resumed);
  const bool resume_ok =
      read_file("acc_det_a/final.ckpt") == read_file("acc_det_c/final.ckpt");

  for (const char* d : {"acc_det_a", "acc_det_b", "acc_det_c"}) {
    std::filesystem::remove_all(d);
  }
  report(8, "determinism and resume", identical && resume_ok,
         fmt("repeat runs bitwise identical: %s; resumed == uninterrupted: "
             "%s",
             identical ? "yes" : "no", resume_ok ? "yes" : "no"));
}

}  // namespace

int main() {
  criterion_gradients();
  criterion_elbo();
  criterion_copy_normalization();
  criterion_arithmetic();
  criterion_learning();
  criterion_camrest();
  criterion_schedule();
  criterion_determinism();
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
