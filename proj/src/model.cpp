// SPDX-License-Identifier: Apache-2.0
#include "labes/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace labes {

using nlohmann::json;

std::string ModelConfig::to_json_text() const {
  json j;
  j["hidden"] = hidden;
  j["embedding"] = embedding;
  j["attn_size"] = attn_size;
  j["dropout"] = dropout;
  j["alpha"] = alpha;
  j["max_value_len"] = max_value_len;
  j["max_resp_len"] = max_resp_len;
  j["beam_width"] = beam_width;
  j["share_embeddings"] = share_embeddings;
  j["token_level_kl"] = token_level_kl;
  return j.dump();
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.embedding = j.value("embedding", c.embedding);
  c.attn_size = j.value("attn_size", c.attn_size);
  c.dropout = j.value("dropout", c.dropout);
  c.alpha = j.value("alpha", c.alpha);
  c.max_value_len = j.value("max_value_len", c.max_value_len);
  c.max_resp_len = j.value("max_resp_len", c.max_resp_len);
  c.beam_width = j.value("beam_width", c.beam_width);
  c.share_embeddings = j.value("share_embeddings", c.share_embeddings);
  c.token_level_kl = j.value("token_level_kl", c.token_level_kl);
  if (c.hidden <= 0) throw ConfigError("hidden size must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0)
    throw ConfigError("dropout must be in [0,1)");
  if (c.alpha < 0.0) throw ConfigError("alpha must be non-negative");
  return c;
}

StTokens plain_tokens(const std::vector<int>& ids) {
  StTokens out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back({id, Graph::kNone, false});
  return out;
}

StToken straight_through(Graph& g, Graph::Ref log_probs, bool argmax,
                         bool relaxed) {
  const Vec& lp = g.value(log_probs).col(0);
  int tok = 0;
  if (argmax) {
    lp.maxCoeff(&tok);
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(g.rng());
    double acc = 0.0;
    tok = static_cast<int>(lp.size()) - 1;
    for (long i = 0; i < lp.size(); ++i) {
      acc += std::exp(lp[i]);
      if (u < acc) {
        tok = static_cast<int>(i);
        break;
      }
    }
  }
  return StToken{tok, log_probs, relaxed};
}

Graph::Ref embed_token(Graph& g, int emb_param, const StToken& t) {
  if (t.dist == Graph::kNone) return g.embed(emb_param, t.id);
  return g.st_embed(emb_param, t.id, t.dist, t.relaxed);
}

// ---------------------------------------------------------------------------
// Construction

LabesModel::LabesModel(ModelConfig cfg, Schema schema, Vocabulary vocab,
                       std::uint64_t init_seed)
    : cfg_(cfg), schema_(std::move(schema)), vocab_(std::move(vocab)) {
  const int V = vocab_.size();
  const int H = cfg_.hidden;
  const int E = cfg_.embedding;
  const int A = cfg_.attn_size > 0 ? cfg_.attn_size : H;
  const int enc_w = 2 * H;       // bidirectional state width
  const int dec_h = 2 * H;       // decoders start from the encoder last state
  const int bel_in = enc_w + 2 * E;   // attn ∘ (prev-token emb ∘ slot emb)
  const int bel_hhat = dec_h + 2 * E;
  const int resp_in = enc_w + E + 5;  // attn ∘ prev emb ∘ d_t
  const int resp_hhat = dec_h + enc_w + 5;

  auto build_net = [&](const std::string& pre, NetParams& np, int emb_idx) {
    np.emb = emb_idx >= 0 ? emb_idx : params_.add(pre + "/emb", V, E);
    np.ctx_enc = add_bigru(params_, pre + "/ctx_enc", E, H);
    np.belief_enc = add_bigru(params_, pre + "/belief_enc", E, H);
    np.dec = add_gru(params_, pre + "/belief_dec", bel_in, dec_h);
    np.attn = add_attention(params_, pre + "/attn", enc_w, dec_h, A);
    np.wgen = params_.add(pre + "/wgen", V, bel_hhat);
    np.wcp = params_.add(pre + "/wcp", enc_w, bel_hhat);
  };
  build_net("theta", theta_, -1);
  build_net("phi", phi_, cfg_.share_embeddings ? theta_.emb : -1);

  resp_dec_ = add_gru(params_, "theta/resp_dec", resp_in, dec_h);
  resp_attn_ = add_attention(params_, "theta/resp_attn", enc_w, dec_h, A);
  resp_wgen_ = params_.add("theta/resp_wgen", V, resp_hhat);
  resp_wcp_ = params_.add("theta/resp_wcp", enc_w, resp_hhat);

  init_uniform(params_, 0.08, init_seed);

  slot_name_ids_.reserve(
      static_cast<std::size_t>(schema_.num_informable()));
  for (const auto& [dom, slot] : schema_.informable_pairs()) {
    Tokens dt = tokenize(dom), st = tokenize(slot);
    slot_name_ids_.emplace_back(vocab_.id(dt.empty() ? "<unk>" : dt[0]),
                                vocab_.id(st.empty() ? "<unk>" : st[0]));
  }
}

void LabesModel::init_embeddings_from_glove(const std::string& glove_path) {
  std::ifstream in(glove_path);
  if (!in) throw DataError("cannot open GloVe file: " + glove_path);
  Mat& E = params_.value(theta_.emb);
  std::string line;
  long loaded = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (!vocab_.contains(word)) continue;
    const int row = vocab_.id(word);
    for (int c = 0; c < cfg_.embedding; ++c) {
      double v;
      if (!(ss >> v)) {
        throw DataError("GloVe vector for '" + word + "' shorter than " +
                        std::to_string(cfg_.embedding));
      }
      E(row, c) = v;
    }
    ++loaded;
  }
  if (!cfg_.share_embeddings) {
    params_.value(phi_.emb) = E;
  }
  (void)loaded;
}

// ---------------------------------------------------------------------------
// Encoding

std::vector<int> LabesModel::make_context(const Vocabulary& v,
                                          const std::vector<int>& prev_resp,
                                          const std::vector<int>& user) {
  std::vector<int> ctx = prev_resp;
  ctx.push_back(Vocabulary::kSep);
  ctx.insert(ctx.end(), user.begin(), user.end());
  (void)v;
  return ctx;
}

LabesModel::EncodedTurn LabesModel::encode_turn(
    Graph& g, Net net, const std::vector<int>& ctx, const StTokens& b_prev,
    const std::vector<int>* resp) const {
  const NetParams& np = this->net(net);
  if (net == Net::prior && resp != nullptr) {
    throw ConfigError("prior network does not condition on the response");
  }
  if (net == Net::posterior && resp == nullptr) {
    throw ConfigError("posterior network requires the response");
  }

  std::vector<Graph::Ref> ctx_in;
  ctx_in.reserve(ctx.size());
  for (int id : ctx) ctx_in.push_back(g.embed(np.emb, id));
  BiGruOut ctx_out = bigru_encode(g, np.ctx_enc, ctx_in);

  std::vector<Graph::Ref> bel_in;
  bel_in.reserve(b_prev.size());
  for (const auto& t : b_prev) bel_in.push_back(embed_token(g, np.emb, t));
  BiGruOut bel_out = bigru_encode(g, np.belief_enc, bel_in);

  EncodedTurn enc;
  enc.src_tokens = ctx;
  for (const auto& t : b_prev) enc.src_tokens.push_back(t.id);
  std::vector<Graph::Ref> state_parts{ctx_out.states, bel_out.states};

  if (resp) {
    std::vector<Graph::Ref> r_in;
    r_in.reserve(resp->size());
    std::vector<int> r_ids = *resp;
    if (r_ids.empty()) r_ids.push_back(Vocabulary::kEosResp);
    for (int id : r_ids) r_in.push_back(g.embed(np.emb, id));
    BiGruOut r_out = bigru_encode(g, np.ctx_enc, r_in);
    enc.src_tokens.insert(enc.src_tokens.end(), r_ids.begin(), r_ids.end());
    state_parts.push_back(r_out.states);
  }
  enc.src_states = g.hconcat(state_parts);
  enc.init_state = ctx_out.last;
  return enc;
}

// ---------------------------------------------------------------------------
// Belief decoding

LabesModel::SlotDecode LabesModel::decode_slot(
    Graph& g, const NetParams& np, const EncodedTurn& enc, int pair_idx,
    BeliefMode mode, const Tokens* gold_value, bool relaxed_st, bool attach_st,
    const NetParams* prior_np, const EncodedTurn* prior_enc,
    Graph::Ref* kl_out, Graph::Ref* prior_lp_out) const {
  const int eov = vocab_.eov_id(pair_idx);
  const auto [dom_id, slot_id] = slot_name_ids_[pair_idx];
  const bool attach = attach_st || mode == BeliefMode::sample;

  Graph::Ref slot_emb = g.embed(np.emb, slot_id);
  Graph::Ref prev_in = g.vconcat({g.embed(np.emb, dom_id), slot_emb});
  Graph::Ref h = enc.init_state;

  Graph::Ref p_slot_emb = Graph::kNone, p_prev_in = Graph::kNone,
             p_h = Graph::kNone;
  if (prior_np) {
    p_slot_emb = g.embed(prior_np->emb, slot_id);
    p_prev_in = g.vconcat({g.embed(prior_np->emb, dom_id), p_slot_emb});
    p_h = prior_enc->init_state;
  }

  SlotDecode out;
  std::vector<Graph::Ref> lp_terms, prior_lp_terms, kl_terms;

  for (int step = 0;; ++step) {
    if (step >= cfg_.max_value_len) {
      // length cap: end symbol forced with probability one
      out.with_eov.push_back({eov, Graph::kNone, false});
      break;
    }
    Graph::Ref a = g.attention(np.attn.we, np.attn.wq, np.attn.v, np.attn.b,
                               enc.src_states, h);
    h = g.gru(np.dec.wx, np.dec.wh, np.dec.b, g.vconcat({a, prev_in}), h);
    Graph::Ref hhat = g.dropout(g.vconcat({h, prev_in}), cfg_.dropout);
    Graph::Ref logp =
        g.copy_log_dist(np.wgen, np.wcp, hhat, enc.src_states, enc.src_tokens);

    Graph::Ref p_logp = Graph::kNone;
    if (prior_np) {
      Graph::Ref pa =
          g.attention(prior_np->attn.we, prior_np->attn.wq, prior_np->attn.v,
                      prior_np->attn.b, prior_enc->src_states, p_h);
      p_h = g.gru(prior_np->dec.wx, prior_np->dec.wh, prior_np->dec.b,
                  g.vconcat({pa, p_prev_in}), p_h);
      Graph::Ref p_hhat = g.dropout(g.vconcat({p_h, p_prev_in}), cfg_.dropout);
      p_logp = g.copy_log_dist(prior_np->wgen, prior_np->wcp, p_hhat,
                               prior_enc->src_states, prior_enc->src_tokens);
      kl_terms.push_back(g.kl_divergence(logp, p_logp));
    }

    StToken tok;
    switch (mode) {
      case BeliefMode::force: {
        const std::size_t i = static_cast<std::size_t>(step);
        int id = (gold_value && i < gold_value->size())
                     ? vocab_.id((*gold_value)[i])
                     : eov;
        tok = {id, attach ? logp : Graph::kNone, relaxed_st};
        break;
      }
      case BeliefMode::greedy: {
        int best = 0;
        g.value(logp).col(0).maxCoeff(&best);
        tok = {best, attach ? logp : Graph::kNone, relaxed_st};
        break;
      }
      case BeliefMode::sample:
        tok = straight_through(g, logp, false, relaxed_st);
        break;
    }
    lp_terms.push_back(g.pick(logp, tok.id));
    if (prior_np) prior_lp_terms.push_back(g.pick(p_logp, tok.id));

    out.with_eov.push_back(tok);
    if (tok.id == eov) break;

    prev_in = g.vconcat({embed_token(g, np.emb, tok), slot_emb});
    if (prior_np) {
      p_prev_in = g.vconcat({embed_token(g, prior_np->emb, tok), p_slot_emb});
    }
  }

  out.log_prob = lp_terms.empty() ? g.scalar_leaf(0.0) : g.sum(lp_terms);
  if (prior_lp_out) {
    *prior_lp_out = prior_lp_terms.empty() ? g.scalar_leaf(0.0)
                                           : g.sum(prior_lp_terms);
  }
  if (kl_out) {
    *kl_out = kl_terms.empty() ? g.scalar_leaf(0.0) : g.sum(kl_terms);
  }
  return out;
}

BeliefDecodeOut LabesModel::decode_belief(Graph& g, Net net,
                                          const EncodedTurn& enc,
                                          BeliefMode mode,
                                          const BeliefState* gold,
                                          bool relaxed_st) const {
  if (mode == BeliefMode::force && gold == nullptr) {
    throw ConfigError("decode_belief: force mode requires a gold belief");
  }
  const NetParams& np = this->net(net);
  BeliefDecodeOut out;
  std::vector<Graph::Ref> lp_terms;
  for (int pi = 0; pi < schema_.num_informable(); ++pi) {
    const Tokens* gv = nullptr;
    if (mode == BeliefMode::force) gv = gold->value(pi);
    SlotDecode sd =
        decode_slot(g, np, enc, pi, mode, gv, relaxed_st, false);
    lp_terms.push_back(sd.log_prob);
    if (sd.with_eov.size() > 1) {
      Tokens value;
      for (std::size_t i = 0; i + 1 < sd.with_eov.size(); ++i) {
        value.push_back(vocab_.token(sd.with_eov[i].id));
      }
      out.belief.set(pi, std::move(value));
    }
    out.serialized.insert(out.serialized.end(), sd.with_eov.begin(),
                          sd.with_eov.end());
  }
  out.log_prob = g.sum(lp_terms);
  out.log_prob_value = g.scalar(out.log_prob);
  return out;
}

PosteriorSampleOut LabesModel::sample_posterior(Graph& g,
                                                const EncodedTurn& post_enc,
                                                const EncodedTurn& prior_enc,
                                                bool argmax,
                                                bool relaxed_st) const {
  PosteriorSampleOut out;
  std::vector<Graph::Ref> lp_terms, kl_terms, plp_terms;
  const BeliefMode mode = argmax ? BeliefMode::greedy : BeliefMode::sample;
  for (int pi = 0; pi < schema_.num_informable(); ++pi) {
    Graph::Ref kl = Graph::kNone, plp = Graph::kNone;
    SlotDecode sd =
        decode_slot(g, phi_, post_enc, pi, mode, nullptr, relaxed_st,
                    argmax, &theta_, &prior_enc, &kl, &plp);
    lp_terms.push_back(sd.log_prob);
    kl_terms.push_back(kl);
    plp_terms.push_back(plp);
    if (sd.with_eov.size() > 1) {
      Tokens value;
      for (std::size_t i = 0; i + 1 < sd.with_eov.size(); ++i) {
        value.push_back(vocab_.token(sd.with_eov[i].id));
      }
      out.sample.belief.set(pi, std::move(value));
    }
    out.sample.serialized.insert(out.sample.serialized.end(),
                                 sd.with_eov.begin(), sd.with_eov.end());
  }
  out.sample.log_prob = g.sum(lp_terms);
  out.sample.log_prob_value = g.scalar(out.sample.log_prob);
  out.prior_log_prob = g.sum(plp_terms);
  if (cfg_.token_level_kl) {
    out.kl = g.sum(kl_terms);
  } else {
    // single-sample log-ratio estimate: log q(b) - log p(b)
    out.kl = g.add(out.sample.log_prob, g.scale(out.prior_log_prob, -1.0));
  }
  return out;
}

BeliefDecodeOut LabesModel::decode_belief_st_greedy(Graph& g,
                                                    const EncodedTurn& enc,
                                                    bool relaxed_st) const {
  BeliefDecodeOut out;
  std::vector<Graph::Ref> lp_terms;
  for (int pi = 0; pi < schema_.num_informable(); ++pi) {
    SlotDecode sd = decode_slot(g, theta_, enc, pi, BeliefMode::greedy,
                                nullptr, relaxed_st, true);
    lp_terms.push_back(sd.log_prob);
    if (sd.with_eov.size() > 1) {
      Tokens value;
      for (std::size_t i = 0; i + 1 < sd.with_eov.size(); ++i) {
        value.push_back(vocab_.token(sd.with_eov[i].id));
      }
      out.belief.set(pi, std::move(value));
    }
    out.serialized.insert(out.serialized.end(), sd.with_eov.begin(),
                          sd.with_eov.end());
  }
  out.log_prob = g.sum(lp_terms);
  out.log_prob_value = g.scalar(out.log_prob);
  return out;
}

// ---------------------------------------------------------------------------
// Response decoding

LabesModel::RespContext LabesModel::encode_for_response(
    Graph& g, const std::vector<int>& ctx, const StTokens& b_t,
    const DbMatchVector& d) const {
  std::vector<Graph::Ref> ctx_in;
  ctx_in.reserve(ctx.size());
  for (int id : ctx) ctx_in.push_back(g.embed(theta_.emb, id));
  BiGruOut ctx_out = bigru_encode(g, theta_.ctx_enc, ctx_in);

  std::vector<Graph::Ref> bel_in;
  bel_in.reserve(b_t.size());
  for (const auto& t : b_t) bel_in.push_back(embed_token(g, theta_.emb, t));
  BiGruOut bel_out = bigru_encode(g, theta_.belief_enc, bel_in);

  RespContext rc;
  rc.src_tokens = ctx;
  for (const auto& t : b_t) rc.src_tokens.push_back(t.id);
  rc.src_states = g.hconcat({ctx_out.states, bel_out.states});
  rc.init_state = ctx_out.last;
  rc.d = Eigen::Map<const Vec>(d.one_hot.data(), 5);
  return rc;
}

ResponseDecodeOut LabesModel::decode_response(Graph& g, const RespContext& rc,
                                              bool force,
                                              const std::vector<int>* gold,
                                              int beam_width) const {
  if (force && gold == nullptr) {
    throw ConfigError("decode_response: force mode requires a response");
  }
  Graph::Ref d_leaf = g.leaf(rc.d);

  auto step = [&](Graph::Ref h, Graph::Ref prev_emb) {
    Graph::Ref a = g.attention(resp_attn_.we, resp_attn_.wq, resp_attn_.v,
                               resp_attn_.b, rc.src_states, h);
    Graph::Ref nh = g.gru(resp_dec_.wx, resp_dec_.wh, resp_dec_.b,
                          g.vconcat({a, prev_emb, d_leaf}), h);
    // dropout deliberately absent from the response hhat
    Graph::Ref hhat = g.vconcat({nh, a, d_leaf});
    Graph::Ref logp = g.copy_log_dist(resp_wgen_, resp_wcp_, hhat,
                                      rc.src_states, rc.src_tokens);
    return std::make_pair(nh, logp);
  };

  ResponseDecodeOut out;
  if (force || beam_width <= 1) {
    Graph::Ref h = rc.init_state;
    Graph::Ref prev = g.embed(theta_.emb, Vocabulary::kGoResp);
    std::vector<Graph::Ref> lp_terms;
    const std::size_t cap = static_cast<std::size_t>(cfg_.max_resp_len);
    for (std::size_t i = 0;; ++i) {
      if (i >= cap) break;  // truncated with forced end symbol
      auto [nh, logp] = step(h, prev);
      h = nh;
      int tok;
      if (force) {
        tok = i < gold->size() ? (*gold)[i] : Vocabulary::kEosResp;
      } else {
        int best = 0;
        g.value(logp).col(0).maxCoeff(&best);
        tok = best;
      }
      lp_terms.push_back(g.pick(logp, tok));
      if (tok == Vocabulary::kEosResp) break;
      out.tokens.push_back(tok);
      prev = g.embed(theta_.emb, tok);
    }
    out.log_prob = lp_terms.empty() ? g.scalar_leaf(0.0) : g.sum(lp_terms);
    out.log_prob_value = g.scalar(out.log_prob);
    return out;
  }

  // Beam search (decode-only). The greedy rollout stays in the candidate
  // pool, so the returned sequence never scores below greedy.
  struct Hyp {
    std::vector<int> tokens;
    Graph::Ref h;
    Graph::Ref prev;
    double lp = 0.0;
    bool done = false;
  };
  std::vector<Hyp> live{{{},
                         rc.init_state,
                         g.embed(theta_.emb, Vocabulary::kGoResp),
                         0.0,
                         false}};
  std::vector<Hyp> done;
  const int W = beam_width;
  for (int i = 0; i < cfg_.max_resp_len && !live.empty(); ++i) {
    std::vector<Hyp> next;
    for (const auto& hyp : live) {
      auto [nh, logp] = step(hyp.h, hyp.prev);
      const Vec& lp = g.value(logp).col(0);
      std::vector<int> idx(static_cast<std::size_t>(lp.size()));
      for (std::size_t k = 0; k < idx.size(); ++k)
        idx[k] = static_cast<int>(k);
      std::partial_sort(idx.begin(),
                        idx.begin() + std::min<std::size_t>(idx.size(),
                                                            static_cast<std::size_t>(W)),
                        idx.end(),
                        [&](int a, int b) { return lp[a] > lp[b]; });
      for (int k = 0; k < W && k < static_cast<int>(idx.size()); ++k) {
        Hyp h2 = hyp;
        h2.h = nh;
        h2.lp += lp[idx[static_cast<std::size_t>(k)]];
        int tok = idx[static_cast<std::size_t>(k)];
        if (tok == Vocabulary::kEosResp) {
          h2.done = true;
          done.push_back(std::move(h2));
        } else {
          h2.tokens.push_back(tok);
          h2.prev = g.embed(theta_.emb, tok);
          next.push_back(std::move(h2));
        }
      }
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Hyp& a, const Hyp& b) { return a.lp > b.lp; });
    if (static_cast<int>(next.size()) > W) next.resize(static_cast<std::size_t>(W));
    live = std::move(next);
  }
  for (auto& h : live) done.push_back(std::move(h));  // capped hypotheses

  // greedy fallback candidate
  {
    ResponseDecodeOut greedy = decode_response(g, rc, false, nullptr, 1);
    Hyp gh;
    gh.tokens = greedy.tokens;
    gh.lp = greedy.log_prob_value;
    done.push_back(std::move(gh));
  }
  const Hyp* best = nullptr;
  for (const auto& h : done) {
    if (!best || h.lp > best->lp) best = &h;
  }
  out.tokens = best->tokens;
  out.log_prob = Graph::kNone;
  out.log_prob_value = best->lp;
  return out;
}

// ---------------------------------------------------------------------------
// Dialog unrolling

DbMatchVector LabesModel::db_vector(
    const BeliefState& b, const EntityDb& db,
    const std::vector<std::string>& domains) const {
  return match_vector(
      static_cast<long>(db.query(schema_, b, domains).size()));
}

StTokens LabesModel::empty_belief_tokens() const {
  return belief_to_tokens(BeliefState{});
}

StTokens LabesModel::belief_to_tokens(const BeliefState& b) const {
  return plain_tokens(vocab_.encode(serialize_belief(b, schema_)));
}

std::vector<TurnOutput> LabesModel::unroll_dialog(const Dialog& dialog,
                                                  const EntityDb& db,
                                                  UnrollMode mode,
                                                  std::uint64_t seed,
                                                  int beam_width) const {
  if (dialog.turns.empty()) throw DataError("unroll_dialog: empty dialog");
  std::vector<TurnOutput> outputs;
  BeliefState b_prev;
  std::vector<int> prev_resp;  // previous observed (delexicalized) response
  for (std::size_t t = 0; t < dialog.turns.size(); ++t) {
    const Turn& turn = dialog.turns[t];
    Graph g(params_, false, seed * 7919 + t);
    std::vector<int> ctx =
        make_context(vocab_, prev_resp, vocab_.encode(turn.user));
    StTokens b_prev_tok = belief_to_tokens(b_prev);

    TurnOutput out;
    if (mode == UnrollMode::eval) {
      EncodedTurn enc = encode_turn(g, Net::prior, ctx, b_prev_tok, nullptr);
      BeliefDecodeOut bd = decode_belief(g, Net::prior, enc,
                                         BeliefMode::greedy);
      out.belief = bd.belief;
      out.belief_log_prob = bd.log_prob_value;
    } else if (mode == UnrollMode::posterior_sample) {
      std::vector<int> resp = vocab_.encode(turn.response_delex);
      EncodedTurn penc =
          encode_turn(g, Net::posterior, ctx, b_prev_tok, &resp);
      EncodedTurn prenc = encode_turn(g, Net::prior, ctx, b_prev_tok, nullptr);
      PosteriorSampleOut ps = sample_posterior(g, penc, prenc);
      out.belief = ps.sample.belief;
      out.belief_log_prob = ps.sample.log_prob_value;
    } else {  // teacher_forced
      if (!turn.gold_belief) {
        throw DataError("unroll_dialog: teacher_forced on unlabeled dialog " +
                        dialog.id);
      }
      EncodedTurn enc = encode_turn(g, Net::prior, ctx, b_prev_tok, nullptr);
      BeliefDecodeOut bd = decode_belief(g, Net::prior, enc, BeliefMode::force,
                                         &*turn.gold_belief);
      out.belief = *turn.gold_belief;
      out.belief_log_prob = bd.log_prob_value;
    }

    DbMatchVector d = db_vector(out.belief, db, dialog.active_domains);
    out.db_bucket = d.bucket();
    RespContext rc =
        encode_for_response(g, ctx, belief_to_tokens(out.belief), d);
    if (mode == UnrollMode::teacher_forced) {
      std::vector<int> gold = vocab_.encode(turn.response_delex);
      ResponseDecodeOut rd = decode_response(g, rc, true, &gold);
      out.response = gold;
      out.response_log_prob = rd.log_prob_value;
    } else {
      ResponseDecodeOut rd =
          decode_response(g, rc, false, nullptr, beam_width);
      out.response = rd.tokens;
      out.response_log_prob = rd.log_prob_value;
    }

    b_prev = out.belief;
    prev_resp = vocab_.encode(turn.response_delex);
    outputs.push_back(std::move(out));
  }
  return outputs;
}

}  // namespace labes
