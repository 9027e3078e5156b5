// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "labes/corpus.hpp"
#include "labes/graph.hpp"
#include "labes/kb.hpp"
#include "labes/nn.hpp"

namespace labes {

struct ModelConfig {
  int hidden = 100;
  int embedding = 50;
  int attn_size = 0;  // defaults to hidden when 0
  double dropout = 0.35;
  double alpha = 0.5;  // KL weight in the unsupervised objective
  int max_value_len = 8;
  int max_resp_len = 40;
  int beam_width = 1;  // response decoding; 1 = greedy
  bool share_embeddings = false;  // posterior reuses prior embeddings
  // Sequence KL as summed token-level KL along the posterior sample path
  // (default), or a single-sample log-ratio estimate.
  bool token_level_kl = true;

  std::string to_json_text() const;
  static ModelConfig from_json_text(const std::string& text);
};

// A token with an optional straight-through attachment: `dist` is the
// log-probability node it was sampled from (kNone for plain tokens).
struct StToken {
  int id = 0;
  Graph::Ref dist = Graph::kNone;
  bool relaxed = false;
};

using StTokens = std::vector<StToken>;
StTokens plain_tokens(const std::vector<int>& ids);

// Forward value is a discrete token drawn from exp(log_probs) (or its
// argmax); the gradient path of any embedding built from the returned
// StToken treats the output as the distribution's probability vector.
StToken straight_through(Graph& g, Graph::Ref log_probs, bool argmax,
                         bool relaxed = false);

// Embedding of a token, routing through the straight-through attachment
// when present.
Graph::Ref embed_token(Graph& g, int emb_param, const StToken& t);

enum class Net { prior, posterior };
enum class BeliefMode { greedy, sample, force };
enum class UnrollMode { eval, posterior_sample, teacher_forced };

struct BeliefDecodeOut {
  BeliefState belief;
  StTokens serialized;      // canonical token span incl. end symbols
  Graph::Ref log_prob = Graph::kNone;  // scalar, total over all slots
  double log_prob_value = 0.0;
};

struct ResponseDecodeOut {
  std::vector<int> tokens;  // excludes <eos_r>
  Graph::Ref log_prob = Graph::kNone;
  double log_prob_value = 0.0;
};

struct PosteriorSampleOut {
  BeliefDecodeOut sample;          // log_prob is under q_phi
  Graph::Ref kl = Graph::kNone;    // KL[q || p] for this turn, scalar
  Graph::Ref prior_log_prob = Graph::kNone;  // log p_theta of the sample
};

struct TurnOutput {
  BeliefState belief;
  int db_bucket = 0;
  std::vector<int> response;
  double belief_log_prob = 0.0;
  double response_log_prob = 0.0;
};

// LABES-S2S: belief prior decoder, posterior network, response decoder and
// straight-through sampling, unrolled sequentially over a dialog.
class LabesModel {
 public:
  LabesModel(ModelConfig cfg, Schema schema, Vocabulary vocab,
             std::uint64_t init_seed = 1);

  const ModelConfig& config() const { return cfg_; }
  const Schema& schema() const { return schema_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Loads 50-d GloVe vectors for in-vocabulary tokens (prior and, unless
  // shared, posterior embeddings).
  void init_embeddings_from_glove(const std::string& glove_path);

  // Encoded copy sources for one turn.
  struct EncodedTurn {
    std::vector<int> src_tokens;       // c_t ∪ b_prev (∪ r_t for posterior)
    Graph::Ref src_states = Graph::kNone;  // (2H x n)
    Graph::Ref init_state = Graph::kNone;  // last context-encoder state
  };

  // c_t = {r_{t-1}, <sep>, u_t}; empty previous response on the first turn.
  static std::vector<int> make_context(const Vocabulary& v,
                                       const std::vector<int>& prev_resp,
                                       const std::vector<int>& user);

  EncodedTurn encode_turn(Graph& g, Net net, const std::vector<int>& ctx,
                          const StTokens& b_prev,
                          const std::vector<int>* resp) const;

  // Per-slot weight-tied decode of all informable slots. `gold` required in
  // force mode; `relaxed_st` makes sample/greedy modes attach soft forward
  // values (the gradient-check surrogate).
  BeliefDecodeOut decode_belief(Graph& g, Net net, const EncodedTurn& enc,
                                BeliefMode mode,
                                const BeliefState* gold = nullptr,
                                bool relaxed_st = false) const;

  // Posterior sampling (or argmax) with the per-step prior distribution
  // computed along the same path; returns the turn KL.
  PosteriorSampleOut sample_posterior(Graph& g, const EncodedTurn& post_enc,
                                      const EncodedTurn& prior_enc,
                                      bool argmax = false,
                                      bool relaxed_st = false) const;

  // Greedy decode from the prior with straight-through attachments on every
  // sampled token (the self-training pseudo-label path).
  BeliefDecodeOut decode_belief_st_greedy(Graph& g, const EncodedTurn& enc,
                                          bool relaxed_st = false) const;

  struct RespContext {
    std::vector<int> src_tokens;        // c_t ∪ b_t
    Graph::Ref src_states = Graph::kNone;
    Graph::Ref init_state = Graph::kNone;
    Vec d;  // 5-dim match vector
  };
  // Re-encodes b_t with the prior belief encoder and bundles d_t.
  RespContext encode_for_response(Graph& g, const std::vector<int>& ctx,
                                  const StTokens& b_t,
                                  const DbMatchVector& d) const;

  ResponseDecodeOut decode_response(Graph& g, const RespContext& rc,
                                    bool force,
                                    const std::vector<int>* gold = nullptr,
                                    int beam_width = 1) const;

  // Sequential unroll over a whole dialog. eval chains the model's own
  // greedy beliefs; posterior_sample chains posterior samples;
  // teacher_forced chains gold beliefs (error when labels are missing).
  std::vector<TurnOutput> unroll_dialog(const Dialog& dialog,
                                        const EntityDb& db, UnrollMode mode,
                                        std::uint64_t seed = 0,
                                        int beam_width = 1) const;

  // d_t from the belief actually used at this turn.
  DbMatchVector db_vector(const BeliefState& b, const EntityDb& db,
                          const std::vector<std::string>& domains) const;

  StTokens empty_belief_tokens() const;  // b_0: bare end symbols
  StTokens belief_to_tokens(const BeliefState& b) const;

  // Parameter handles, exposed for tests.
  struct NetParams {
    int emb = -1;
    BiGruParams ctx_enc;
    BiGruParams belief_enc;
    GruParams dec;
    AttentionParams attn;
    int wgen = -1, wcp = -1;
  };
  const NetParams& net(Net n) const {
    return n == Net::prior ? theta_ : phi_;
  }
  GruParams resp_dec() const { return resp_dec_; }
  AttentionParams resp_attn() const { return resp_attn_; }
  int resp_wgen() const { return resp_wgen_; }
  int resp_wcp() const { return resp_wcp_; }

 private:
  struct SlotDecode {
    std::vector<StToken> with_eov;  // value tokens plus the end symbol
    Graph::Ref log_prob = Graph::kNone;
  };
  SlotDecode decode_slot(Graph& g, const NetParams& np,
                         const EncodedTurn& enc, int pair_idx,
                         BeliefMode mode, const Tokens* gold_value,
                         bool relaxed_st, bool attach_st,
                         // When non-null, the prior net decodes along the
                         // same token path and token-level KLs accumulate.
                         const NetParams* prior_np = nullptr,
                         const EncodedTurn* prior_enc = nullptr,
                         Graph::Ref* kl_out = nullptr,
                         Graph::Ref* prior_lp_out = nullptr) const;

  ModelConfig cfg_;
  Schema schema_;
  Vocabulary vocab_;
  ParameterSet params_;
  NetParams theta_, phi_;
  GruParams resp_dec_;
  AttentionParams resp_attn_;
  int resp_wgen_ = -1, resp_wcp_ = -1;
  // Embedding ids of domain/slot name words per informable pair.
  std::vector<std::pair<int, int>> slot_name_ids_;
};

}  // namespace labes
