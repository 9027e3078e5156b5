// SPDX-License-Identifier: Apache-2.0
#include "labes/nn.hpp"

#include <cmath>
#include <random>

namespace labes {

GruParams add_gru(ParameterSet& ps, const std::string& prefix, int input,
                  int hidden) {
  GruParams p;
  p.wx = ps.add(prefix + ".wx", 3 * hidden, input);
  p.wh = ps.add(prefix + ".wh", 3 * hidden, hidden);
  p.b = ps.add(prefix + ".b", 3 * hidden, 1);
  return p;
}

BiGruParams add_bigru(ParameterSet& ps, const std::string& prefix, int input,
                      int hidden) {
  BiGruParams p;
  p.fwd = add_gru(ps, prefix + ".fwd", input, hidden);
  p.bwd = add_gru(ps, prefix + ".bwd", input, hidden);
  p.hidden = hidden;
  return p;
}

AttentionParams add_attention(ParameterSet& ps, const std::string& prefix,
                              int enc_width, int query_width, int attn_size) {
  AttentionParams p;
  p.we = ps.add(prefix + ".we", attn_size, enc_width);
  p.wq = ps.add(prefix + ".wq", attn_size, query_width);
  p.v = ps.add(prefix + ".v", attn_size, 1);
  p.b = ps.add(prefix + ".b", attn_size, 1);
  return p;
}

BiGruOut bigru_encode(Graph& g, const BiGruParams& p,
                      const std::vector<Graph::Ref>& inputs) {
  if (inputs.empty()) throw DataError("bigru_encode: empty input sequence");
  const std::size_t n = inputs.size();
  Graph::Ref zero = g.leaf(Mat::Zero(p.hidden, 1));

  std::vector<Graph::Ref> fwd(n), bwd(n);
  Graph::Ref h = zero;
  for (std::size_t i = 0; i < n; ++i) {
    h = g.gru(p.fwd.wx, p.fwd.wh, p.fwd.b, inputs[i], h);
    fwd[i] = h;
  }
  h = zero;
  for (std::size_t i = n; i-- > 0;) {
    h = g.gru(p.bwd.wx, p.bwd.wh, p.bwd.b, inputs[i], h);
    bwd[i] = h;
  }
  BiGruOut out;
  out.states = g.vconcat({g.stack_cols(fwd), g.stack_cols(bwd)});
  out.last = g.vconcat({fwd[n - 1], bwd[0]});
  return out;
}

ExtendedTokenDistribution copy_distribution(Graph& g, int wgen, int wcp,
                                            Graph::Ref hhat, Graph::Ref enc,
                                            const std::vector<int>& src) {
  ExtendedTokenDistribution dist;
  dist.log_probs = g.copy_log_dist(wgen, wcp, hhat, enc, src);
  if (enc != Graph::kNone && !src.empty()) {
    const Vec h = g.value(hhat).col(0);
    Vec u = g.params().value(wcp) * h;
    Vec cp = g.value(enc).transpose() * u;
    dist.copy_scores.assign(cp.data(), cp.data() + cp.size());
  }
  return dist;
}

GradCheckResult grad_check(const LossFn& loss, ParameterSet& params,
                           double epsilon) {
  GradBuffer analytic(params);
  double base = loss(params, &analytic);
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");

  GradCheckResult res;
  for (int p = 0; p < params.count(); ++p) {
    Mat& w = params.value(p);
    for (long c = 0; c < w.cols(); ++c) {
      for (long r = 0; r < w.rows(); ++r) {
        const double orig = w(r, c);
        w(r, c) = orig + epsilon;
        double fp = loss(params, nullptr);
        w(r, c) = orig - epsilon;
        double fm = loss(params, nullptr);
        w(r, c) = orig;
        const double fd = (fp - fm) / (2.0 * epsilon);
        const double an = analytic[p](r, c);
        // the floor compares near-zero gradients in absolute terms: any
        // disagreement above 1e-8 still exceeds a 1e-5 relative threshold,
        // while central-difference roundoff (~1e-10) stays below it
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
        const double rel = std::abs(fd - an) / denom;
        if (rel > res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_param = params.name(p);
          res.worst_row = static_cast<int>(r);
          res.worst_col = static_cast<int>(c);
        }
      }
    }
  }
  return res;
}

void init_uniform(ParameterSet& ps, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-scale, scale);
  for (int p = 0; p < ps.count(); ++p) {
    Mat& w = ps.value(p);
    for (long c = 0; c < w.cols(); ++c) {
      for (long r = 0; r < w.rows(); ++r) w(r, c) = unif(rng);
    }
  }
}

}  // namespace labes
