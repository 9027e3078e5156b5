// SPDX-License-Identifier: Apache-2.0
//
// Operator entry point: data preparation, training, evaluation, gradient
// checking, synthetic data generation, and an interactive chat loop.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "labes/adapters.hpp"
#include "labes/checkpoint.hpp"
#include "labes/corpus.hpp"
#include "labes/eval.hpp"
#include "labes/kb.hpp"
#include "labes/model.hpp"
#include "labes/synth.hpp"
#include "labes/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace labes;

namespace {

// Paths may be given relative to $LABES_DATA_ROOT.
std::string resolve_path(const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute() || fs::exists(p)) return p;
  const char* root = std::getenv("LABES_DATA_ROOT");
  if (root && *root) {
    fs::path candidate = fs::path(root) / p;
    if (fs::exists(candidate)) return candidate.string();
  }
  return p;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
}

std::string fnv1a_digest(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& resolved_config, std::uint64_t seed,
                    const std::vector<std::string>& inputs) {
  fs::create_directories(out_dir);
  json m;
  m["command"] = command;
  m["config"] = resolved_config;
  m["seed"] = seed;
  const auto now = std::chrono::system_clock::now();
  m["timestamp_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch())
          .count();
  json digests = json::object();
  for (const std::string& p : inputs) {
    if (fs::exists(p)) digests[p] = fnv1a_digest(read_file(p));
  }
  m["input_digests"] = digests;
  write_file(out_dir + "/manifest.json", m.dump(2) + "\n");
}

void print_corpus_stats(const std::string& name, const DialogCorpus& c) {
  const std::size_t n = c.dialogs.size();
  const double avg =
      n == 0 ? 0.0
             : static_cast<double>(c.total_turns()) / static_cast<double>(n);
  std::printf("%s: #Dialog %zu, avg turns %.1f\n", name.c_str(), n, avg);
}

struct LoadedData {
  Schema schema;
  EntityDb db;
};

LoadedData load_schema_db(const std::string& schema_path,
                          const std::string& db_path) {
  LoadedData d;
  d.schema = Schema::from_json_file(resolve_path(schema_path));
  d.db = EntityDb::from_json_file(resolve_path(db_path), d.schema);
  return d;
}

// ---------------------------------------------------------------------------
// prepare / synth

void write_dataset(const std::string& out_dir, const Schema& schema,
                   const EntityDb& db, const DialogCorpus& train,
                   const DialogCorpus& dev, const DialogCorpus& test) {
  fs::create_directories(out_dir);
  write_file(out_dir + "/schema.json", schema.to_json_text());
  write_file(out_dir + "/db.json", db.to_json_text());
  save_corpus(train, schema, out_dir + "/train.json");
  save_corpus(dev, schema, out_dir + "/dev.json");
  save_corpus(test, schema, out_dir + "/test.json");
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  SynthSpec spec;
  if (!spec_path.empty()) {
    spec = SynthSpec::from_json_text(read_file(resolve_path(spec_path)));
  }
  SynthData data = generate(spec);
  // 3:1:1 split in generation order
  DialogCorpus train, dev, test;
  const std::size_t n = data.corpus.dialogs.size();
  for (std::size_t i = 0; i < n; ++i) {
    Dialog& d = data.corpus.dialogs[i];
    if (i < n * 3 / 5) {
      train.dialogs.push_back(std::move(d));
    } else if (i < n * 4 / 5) {
      dev.dialogs.push_back(std::move(d));
    } else {
      test.dialogs.push_back(std::move(d));
    }
  }
  write_dataset(out_dir, data.schema, data.db, train, dev, test);
  write_manifest(out_dir, "synth", json::parse(spec.to_json_text()), spec.seed,
                 spec_path.empty() ? std::vector<std::string>{}
                                   : std::vector<std::string>{spec_path});
  print_corpus_stats("train", train);
  print_corpus_stats("dev", dev);
  print_corpus_stats("test", test);
  return 0;
}

int cmd_prepare(const std::string& dataset, const std::string& source,
                const std::string& out_dir, const std::string& spec_path) {
  if (dataset == "synth") return cmd_synth(spec_path, out_dir);
  AdaptedData data =
      adapt_dataset(dataset_kind_from_name(dataset), resolve_path(source));
  write_dataset(out_dir, data.schema, data.db, data.train, data.dev,
                data.test);
  write_manifest(out_dir, "prepare " + dataset, json::object(), 0,
                 {resolve_path(source)});
  DialogCorpus all;
  for (const auto* c : {&data.train, &data.dev, &data.test}) {
    for (const Dialog& d : c->dialogs) all.dialogs.push_back(d);
  }
  print_corpus_stats("total", all);
  print_corpus_stats("train", data.train);
  print_corpus_stats("dev", data.dev);
  print_corpus_stats("test", data.test);
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string mode = "sup";
  std::string schema_path, db_path, train_path, dev_path, unlabeled_path;
  std::string model_config_path, train_config_path;
  std::string out_dir = "run";
  std::string resume_path;
  std::string glove_path;
  double label_fraction = 1.0;
  int vocab_size = 800;
  std::uint64_t seed = 1;
  bool seed_set = false;
};

int cmd_train(const TrainArgs& args) {
  LoadedData data = load_schema_db(args.schema_path, args.db_path);
  DialogCorpus train_corpus =
      load_corpus(resolve_path(args.train_path), data.schema, &data.db);
  DialogCorpus dev_corpus =
      load_corpus(resolve_path(args.dev_path), data.schema, &data.db);
  if (train_corpus.dialogs.empty()) throw DataError("training corpus empty");

  ModelConfig mcfg;
  if (!args.model_config_path.empty()) {
    mcfg = ModelConfig::from_json_text(
        read_file(resolve_path(args.model_config_path)));
  }
  TrainConfig tcfg;
  if (!args.train_config_path.empty()) {
    tcfg = TrainConfig::from_json_text(
        read_file(resolve_path(args.train_config_path)));
  }
  if (args.seed_set) tcfg.seed = args.seed;
  tcfg.label_fraction = args.label_fraction;
  mcfg.alpha = tcfg.alpha;

  TrainMode mode;
  if (args.mode == "sup") {
    mode = TrainMode::supervised;
  } else if (args.mode == "semi") {
    mode = TrainMode::semi;
  } else if (args.mode == "self") {
    mode = TrainMode::self_train;
  } else {
    throw ConfigError("unknown train mode: " + args.mode +
                      " (expected sup, semi, or self)");
  }

  DialogCorpus labeled, unlabeled;
  if (!args.unlabeled_path.empty()) {
    labeled = std::move(train_corpus);
    unlabeled =
        load_corpus(resolve_path(args.unlabeled_path), data.schema, &data.db);
  } else if (tcfg.label_fraction < 1.0) {
    std::tie(labeled, unlabeled) =
        split_labels(train_corpus, tcfg.label_fraction, tcfg.seed);
  } else {
    labeled = std::move(train_corpus);
  }

  LabesModel model = [&]() {
    if (!args.resume_path.empty()) {
      return model_from_checkpoint(
          load_checkpoint(resolve_path(args.resume_path)));
    }
    DialogCorpus vocab_src = labeled;
    for (const Dialog& d : unlabeled.dialogs) vocab_src.dialogs.push_back(d);
    Vocabulary vocab = Vocabulary::build(vocab_src, data.schema,
                                         args.vocab_size);
    LabesModel m(mcfg, data.schema, vocab, tcfg.seed);
    if (!args.glove_path.empty()) {
      m.init_embeddings_from_glove(resolve_path(args.glove_path));
    }
    return m;
  }();

  json resolved;
  resolved["mode"] = args.mode;
  resolved["model"] = json::parse(model.config().to_json_text());
  resolved["train"] = json::parse(tcfg.to_json_text());
  write_manifest(args.out_dir, "train", resolved, tcfg.seed,
                 {resolve_path(args.schema_path), resolve_path(args.db_path),
                  resolve_path(args.train_path), resolve_path(args.dev_path)});

  Trainer trainer(model, data.db, tcfg);
  TrainResult result;
  if (!args.resume_path.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resolve_path(args.resume_path));
    if (!ck.train_state) {
      throw DataError("checkpoint has no training state to resume from: " +
                      args.resume_path);
    }
    GradBuffer m_buf(model.params()), v_buf(model.params());
    const GradBuffer* mp = nullptr;
    const GradBuffer* vp = nullptr;
    if (ck.has_adam) {
      for (int i = 0; i < model.params().count(); ++i) {
        m_buf[i] = ck.adam_m[static_cast<std::size_t>(i)];
        v_buf[i] = ck.adam_v[static_cast<std::size_t>(i)];
      }
      mp = &m_buf;
      vp = &v_buf;
    }
    result = trainer.run(mode, labeled, unlabeled, dev_corpus, args.out_dir,
                         &*ck.train_state, mp, vp);
  } else {
    result = trainer.run(mode, labeled, unlabeled, dev_corpus, args.out_dir);
  }

  // JSON-lines training log and the final best checkpoint
  std::ostringstream log;
  for (const EpochLog& l : result.log) {
    json e;
    e["epoch"] = l.epoch;
    e["phase"] = l.phase;
    e["train_loss"] = l.train_loss;
    e["kl"] = l.kl;
    e["dev_joint_goal"] = l.dev_joint_goal;
    e["lr"] = l.lr;
    log << e.dump() << "\n";
  }
  write_file(args.out_dir + "/train_log.jsonl", log.str());
  save_checkpoint(args.out_dir + "/best.ckpt", model);
  std::printf("best dev joint goal %.4f (epoch %d)\n",
              result.best_dev_joint_goal, result.best_epoch);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path,
             const std::string& db_path, int beam, int threads,
             const std::string& out_path) {
  LoadedCheckpoint ck = load_checkpoint(resolve_path(ckpt_path));
  LabesModel model = model_from_checkpoint(ck);
  EntityDb db = EntityDb::from_json_file(resolve_path(db_path), model.schema());
  DialogCorpus corpus =
      load_corpus(resolve_path(corpus_path), model.schema(), &db);
  MetricsReport rep = evaluate_corpus(model, corpus, db, beam, threads);
  std::fputs(rep.to_table_text().c_str(), stdout);
  if (!out_path.empty()) {
    write_file(out_path, rep.to_json_text(true) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// chat

int cmd_chat(const std::string& ckpt_path, const std::string& db_path,
             bool show_belief, int beam) {
  LoadedCheckpoint ck = load_checkpoint(resolve_path(ckpt_path));
  LabesModel model = model_from_checkpoint(ck);
  EntityDb db = EntityDb::from_json_file(resolve_path(db_path), model.schema());
  const Vocabulary& vocab = model.vocab();
  std::vector<std::string> domains;
  for (const DomainDef& d : model.schema().domains()) {
    domains.push_back(d.name);
  }

  BeliefState belief;
  std::vector<int> prev_resp;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line == "/reset") {
      belief = BeliefState{};
      prev_resp.clear();
      std::puts("(reset)");
      continue;
    }
    if (line.empty()) continue;

    Graph g(model.params(), false, 0);
    std::vector<int> ctx = LabesModel::make_context(
        vocab, prev_resp, vocab.encode(tokenize(line)));
    auto enc = model.encode_turn(g, Net::prior, ctx,
                                 model.belief_to_tokens(belief), nullptr);
    auto bd = model.decode_belief(g, Net::prior, enc, BeliefMode::greedy);
    belief = bd.belief;

    auto hits = db.query(model.schema(), belief, domains);
    DbMatchVector d = match_vector(static_cast<long>(hits.size()));
    auto rc = model.encode_for_response(g, ctx,
                                        model.belief_to_tokens(belief), d);
    auto rd = model.decode_response(g, rc, false, nullptr, beam);
    Tokens delex = vocab.decode(rd.tokens);

    // fill placeholders from the first matching entity (sorted by id)
    Tokens surfaced;
    for (const std::string& tok : delex) {
      bool replaced = false;
      if (!hits.empty()) {
        for (const std::string& slot : model.schema().requestable_slots()) {
          if (tok == Schema::placeholder(slot) &&
              hits[0]->slots.count(slot)) {
            Tokens val = tokenize(hits[0]->slots.at(slot));
            surfaced.insert(surfaced.end(), val.begin(), val.end());
            replaced = true;
            break;
          }
        }
      }
      if (!replaced) surfaced.push_back(tok);
    }

    if (show_belief) {
      std::printf("belief: %s\n",
                  join_tokens(serialize_belief(belief, model.schema()))
                      .c_str());
    }
    std::printf("system: %s\n", join_tokens(surfaced).c_str());
    prev_resp = vocab.encode(delex);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(double threshold) {
  SynthSpec spec;
  spec.slots = 1;
  spec.values_per_slot = 3;
  spec.dialogs = 2;
  spec.turns_per_dialog = 2;
  spec.db_size = 5;
  SynthData data = generate(spec);

  ModelConfig mcfg;
  mcfg.hidden = 8;
  mcfg.embedding = 6;
  mcfg.dropout = 0.0;
  mcfg.max_value_len = 3;
  mcfg.max_resp_len = 12;
  Vocabulary vocab = Vocabulary::build(data.corpus, data.schema, 64);
  LabesModel model(mcfg, data.schema, vocab, 11);

  std::vector<const Dialog*> batch;
  for (const Dialog& d : data.corpus.dialogs) batch.push_back(&d);
  std::span<const Dialog* const> sp(batch.data(), batch.size());

  auto check = [&](const char* name, bool unsupervised) {
    LossFn loss = [&](const ParameterSet&, GradBuffer* grads) {
      LossStats s =
          unsupervised
              ? j_un(model, sp, data.db, mcfg.alpha, grads, 5, 1, true)
              : j_sup(model, sp, data.db, grads, 5, 1, false);
      return s.loss;
    };
    GradCheckResult r = grad_check(loss, model.params(), 1e-5);
    const bool ok = r.max_rel_error < threshold;
    std::printf("%s: max relative error %.3e at %s(%d,%d) [%s]\n", name,
                r.max_rel_error, r.worst_param.c_str(), r.worst_row,
                r.worst_col, ok ? "ok" : "FAIL");
    return ok;
  };

  bool ok = check("J_sup", false);
  ok = check("J_un (relaxed)", true) && ok;
  if (!ok) throw NumericError("gradient check exceeded threshold");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent-belief task-oriented dialog toolkit"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "normalize a source dataset");
  std::string p_dataset, p_source, p_out = "data", p_spec;
  prepare->add_option("--dataset", p_dataset,
                      "camrest | incar | multiwoz | synth")
      ->required();
  prepare->add_option("--source", p_source, "source directory");
  prepare->add_option("--out", p_out, "output directory");
  prepare->add_option("--spec", p_spec, "synthetic spec JSON (dataset=synth)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string s_spec, s_out = "data";
  synth->add_option("--spec", s_spec, "spec JSON file (defaults when absent)");
  synth->add_option("--out", s_out, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  TrainArgs targs;
  train->add_option("--mode", targs.mode, "sup | semi | self");
  train->add_option("--schema", targs.schema_path)->required();
  train->add_option("--db", targs.db_path)->required();
  train->add_option("--train", targs.train_path)->required();
  train->add_option("--dev", targs.dev_path)->required();
  train->add_option("--unlabeled", targs.unlabeled_path,
                    "separate unlabeled corpus (else split by fraction)");
  train->add_option("--model-config", targs.model_config_path);
  train->add_option("--train-config", targs.train_config_path);
  train->add_option("--label-fraction", targs.label_fraction);
  train->add_option("--vocab-size", targs.vocab_size);
  train->add_option("--glove", targs.glove_path, "GloVe vectors file");
  train->add_option("--out", targs.out_dir);
  train->add_option("--resume", targs.resume_path, "checkpoint to resume");
  auto* seed_opt = train->add_option("--seed", targs.seed);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_corpus, e_db, e_out;
  int e_beam = 1, e_threads = 1;
  eval->add_option("--ckpt", e_ckpt)->required();
  eval->add_option("--corpus", e_corpus)->required();
  eval->add_option("--db", e_db)->required();
  eval->add_option("--beam", e_beam);
  eval->add_option("--threads", e_threads);
  eval->add_option("--out", e_out, "report JSON path");

  // chat
  auto* chat = app.add_subcommand("chat", "interactive session");
  std::string c_ckpt, c_db;
  bool c_show_belief = false;
  int c_beam = 1;
  chat->add_option("--ckpt", c_ckpt)->required();
  chat->add_option("--db", c_db)->required();
  chat->add_flag("--show-belief", c_show_belief);
  chat->add_option("--beam", c_beam);

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "verify gradients");
  double g_threshold = 1e-5;
  gradcheck->add_option("--threshold", g_threshold);

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) return cmd_prepare(p_dataset, p_source, p_out,
                                              p_spec);
    if (synth->parsed()) return cmd_synth(s_spec, s_out);
    if (train->parsed()) {
      targs.seed_set = seed_opt->count() > 0;
      return cmd_train(targs);
    }
    if (eval->parsed()) {
      return cmd_eval(e_ckpt, e_corpus, e_db, e_beam, e_threads, e_out);
    }
    if (chat->parsed()) return cmd_chat(c_ckpt, c_db, c_show_belief, c_beam);
    if (gradcheck->parsed()) return cmd_gradcheck(g_threshold);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
