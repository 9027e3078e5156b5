// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "labes/common.hpp"

namespace labes {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Named trainable arrays. Prior (theta/...) and posterior (phi/...) weights
// live in one set under disjoint name prefixes.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Mat value;
  };

  int add(const std::string& name, int rows, int cols);
  int find(const std::string& name) const;  // -1 if absent
  int require(const std::string& name) const;
  int count() const { return static_cast<int>(entries_.size()); }
  Mat& value(int idx) { return entries_[idx].value; }
  const Mat& value(int idx) const { return entries_[idx].value; }
  const std::string& name(int idx) const { return entries_[idx].name; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  bool all_finite() const;
  // First entry containing a non-finite value, or empty string.
  std::string first_non_finite() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// Per-parameter gradient accumulators, aligned with a ParameterSet.
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const ParameterSet& ps) { reset(ps); }
  void reset(const ParameterSet& ps);
  void zero();
  Mat& operator[](int idx) { return grads_[idx]; }
  const Mat& operator[](int idx) const { return grads_[idx]; }
  std::size_t count() const { return grads_.size(); }
  void accumulate(const GradBuffer& other);
  void scale(double s);
  double global_norm() const;
  bool all_finite() const;

 private:
  std::vector<Mat> grads_;
};

// Dynamic tape over vector/matrix nodes. Nodes only reference earlier nodes,
// so reverse creation order is a valid backward schedule. One graph per
// dialog; graphs never mutate the parameter values they read.
class Graph {
 public:
  using Ref = int;
  static constexpr Ref kNone = -1;

  Graph(const ParameterSet& params, bool train_mode, std::uint64_t rng_seed);

  bool train_mode() const { return train_mode_; }
  std::mt19937_64& rng() { return rng_; }

  Ref leaf(Mat value);
  Ref scalar_leaf(double v);
  // Whole parameter matrix as a node.
  Ref param(int p);

  // Row `row` of parameter matrix `p`, as a column vector.
  Ref embed(int p, int row);
  // Straight-through embedding: forward is row(token) (or the probability-
  // weighted mix when relaxed), backward routes through exp(logp).
  Ref st_embed(int p, int token, Ref logp, bool relaxed);

  // sum_i P_i * x_i (+ bias column), one node.
  Ref linear(const std::vector<std::pair<int, Ref>>& terms, int bias = -1);

  // Gated recurrent update. wx: (3H x in), wh: (3H x H), b: (3H x 1),
  // gate rows ordered [update; reset; candidate].
  Ref gru(int wx, int wh, int b, Ref x, Ref h);

  Ref stack_cols(const std::vector<Ref>& cols);
  Ref vconcat(const std::vector<Ref>& parts);
  Ref hconcat(const std::vector<Ref>& parts);

  // Additive attention: softmax_j v . tanh(We*enc_j + Wq*q + b), returns the
  // convex combination of encoder columns.
  Ref attention(int we, int wq, int v, int b, Ref enc, Ref query);
  // Attention weights alone (column vector over encoder positions).
  Ref attention_weights(int we, int wq, int v, int b, Ref enc, Ref query);

  // Copy-augmented log distribution over the vocabulary:
  //   p(w) ∝ e^{psi_gen(w)} + sum_{j: src[j]=w} e^{psi_cp(j)}
  // with psi_gen = Wgen*hhat and psi_cp(j) = enc_j . (Wcp*hhat).
  // enc may be kNone for an empty copy source.
  Ref copy_log_dist(int wgen, int wcp, Ref hhat, Ref enc,
                    const std::vector<int>& src_tokens);

  Ref dropout(Ref x, double rate);
  Ref pick(Ref x, int i);         // scalar = x(i)
  Ref add(Ref a, Ref b);
  Ref sum(const std::vector<Ref>& xs);
  Ref scale(Ref x, double s);
  // sum_w exp(logq_w) * (logq_w - logp_w), a scalar.
  Ref kl_divergence(Ref logq, Ref logp);

  const Mat& value(Ref r) const { return nodes_[r].value; }
  double scalar(Ref r) const { return nodes_[r].value(0, 0); }
  std::size_t node_count() const { return nodes_.size(); }

  // Accumulates dLoss/dParam into grads(); loss must be scalar and finite.
  void backward(Ref loss);
  GradBuffer& grads() { return grads_; }
  const ParameterSet& params() const { return params_; }

 private:
  struct Node {
    Mat value;
    Mat grad;  // lazily sized
    bool touched = false;
    std::function<void(Graph&)> back;
  };

  Ref push(Mat value, std::function<void(Graph&)> back = nullptr);
  Mat& grad_of(Ref r);
  void bump(Ref r);  // mark as needing backward

  const ParameterSet& params_;
  GradBuffer grads_;
  std::vector<Node> nodes_;
  bool train_mode_;
  std::mt19937_64 rng_;
};

}  // namespace labes
