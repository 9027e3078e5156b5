// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "labes/graph.hpp"

namespace labes {

// Parameter indices of one GRU cell.
struct GruParams {
  int wx = -1, wh = -1, b = -1;
};

// Registers a GRU cell's weights under `prefix` (".wx", ".wh", ".b").
GruParams add_gru(ParameterSet& ps, const std::string& prefix, int input,
                  int hidden);

struct BiGruParams {
  GruParams fwd, bwd;
  int hidden = 0;
};
BiGruParams add_bigru(ParameterSet& ps, const std::string& prefix, int input,
                      int hidden);

struct AttentionParams {
  int we = -1, wq = -1, v = -1, b = -1;
};
AttentionParams add_attention(ParameterSet& ps, const std::string& prefix,
                              int enc_width, int query_width, int attn_size);

// Position-wise concatenation of forward and backward recurrent states over
// the embedded inputs; result is a (2H x n) matrix node plus the last state
// (fwd last ∘ bwd first), used to initialize decoders.
struct BiGruOut {
  Graph::Ref states = Graph::kNone;
  Graph::Ref last = Graph::kNone;
};
BiGruOut bigru_encode(Graph& g, const BiGruParams& p,
                      const std::vector<Graph::Ref>& inputs);

// One decoder step: state' = GRU(x, state).
inline Graph::Ref decode_step(Graph& g, const GruParams& p, Graph::Ref x,
                              Graph::Ref state) {
  return g.gru(p.wx, p.wh, p.b, x, state);
}

// Normalized distribution over vocabulary tokens with copy mass folded in by
// surface form; retains per-source-position copy scores for inspection.
struct ExtendedTokenDistribution {
  Graph::Ref log_probs = Graph::kNone;  // vocab-size column vector
  std::vector<double> copy_scores;      // psi_cp per source position
};

ExtendedTokenDistribution copy_distribution(Graph& g, int wgen, int wcp,
                                            Graph::Ref hhat, Graph::Ref enc,
                                            const std::vector<int>& src);

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_row = -1, worst_col = -1;
};

// loss(params, grads): returns the scalar loss; when grads is non-null it
// must also accumulate analytic gradients. The loss must be deterministic
// (dropout in eval mode, sampling replaced by fixed choices).
using LossFn = std::function<double(const ParameterSet&, GradBuffer*)>;

GradCheckResult grad_check(const LossFn& loss, ParameterSet& params,
                           double epsilon);

// Uniform(-scale, scale) init for every entry of every parameter.
void init_uniform(ParameterSet& ps, double scale, std::uint64_t seed);

}  // namespace labes
