// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "labes/graph.hpp"
#include "labes/nn.hpp"

using namespace labes;

namespace {

// Central-difference check of a scalar graph built by `build`.
double op_grad_check(const std::function<Graph::Ref(Graph&)>& build,
                     ParameterSet& params, double eps = 1e-6) {
  LossFn loss = [&](const ParameterSet&, GradBuffer* grads) {
    Graph g(params, false, 0);
    Graph::Ref out = build(g);
    double v = g.scalar(out);
    if (grads) {
      g.backward(out);
      grads->accumulate(g.grads());
    }
    return v;
  };
  return grad_check(loss, params, eps).max_rel_error;
}

ParameterSet small_params(std::uint64_t seed = 3) {
  ParameterSet ps;
  ps.add("a", 4, 3);
  ps.add("b", 4, 1);
  ps.add("emb", 6, 3);
  init_uniform(ps, 0.5, seed);
  return ps;
}

}  // namespace

TEST_CASE("linear gradients match finite differences") {
  ParameterSet ps = small_params();
  double err = op_grad_check(
      [&](Graph& g) {
        Graph::Ref x = g.embed(ps.require("emb"), 2);
        Graph::Ref y = g.linear({{ps.require("a"), x}}, ps.require("b"));
        return g.sum({g.pick(y, 0), g.pick(y, 2), g.pick(y, 3)});
      },
      ps);
  CHECK(err < 1e-7);
}

TEST_CASE("gru gradients match finite differences") {
  ParameterSet ps;
  GruParams gru = add_gru(ps, "g", 3, 4);
  ps.add("x", 3, 1);
  ps.add("h", 4, 1);
  init_uniform(ps, 0.5, 7);
  double err = op_grad_check(
      [&](Graph& g) {
        Graph::Ref x = g.embed(ps.require("x"), 0);
        // use full columns as leaves via linear on identity rows
        Graph::Ref xv = g.param(ps.require("x"));
        Graph::Ref hv = g.param(ps.require("h"));
        Graph::Ref h1 = g.gru(gru.wx, gru.wh, gru.b, xv, hv);
        Graph::Ref h2 = g.gru(gru.wx, gru.wh, gru.b, xv, h1);
        (void)x;
        return g.sum({g.pick(h2, 0), g.pick(h2, 1), g.pick(h2, 3)});
      },
      ps);
  CHECK(err < 1e-6);
}

TEST_CASE("attention gradients match finite differences") {
  ParameterSet ps;
  AttentionParams at = add_attention(ps, "a", 4, 3, 5);
  ps.add("enc", 4, 6);
  ps.add("q", 3, 1);
  init_uniform(ps, 0.5, 11);
  double err = op_grad_check(
      [&](Graph& g) {
        Graph::Ref enc = g.param(ps.require("enc"));
        Graph::Ref q = g.param(ps.require("q"));
        Graph::Ref a = g.attention(at.we, at.wq, at.v, at.b, enc, q);
        return g.sum({g.pick(a, 0), g.pick(a, 2)});
      },
      ps, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("attention weights form a distribution") {
  ParameterSet ps;
  AttentionParams at = add_attention(ps, "a", 4, 3, 5);
  ps.add("enc", 4, 6);
  ps.add("q", 3, 1);
  init_uniform(ps, 0.8, 13);
  Graph g(ps, false, 0);
  Graph::Ref enc = g.param(ps.require("enc"));
  Graph::Ref q = g.param(ps.require("q"));
  Graph::Ref w = g.attention_weights(at.we, at.wq, at.v, at.b, enc, q);
  const Mat& wv = g.value(w);
  REQUIRE(wv.rows() == 6);
  CHECK(std::abs(wv.sum() - 1.0) < 1e-12);
  CHECK(wv.minCoeff() > 0.0);
}

TEST_CASE("copy distribution is normalized over 1000 random draws") {
  std::mt19937_64 seeds(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::uint64_t s = seeds();
    ParameterSet ps;
    const int V = 8, H = 5, W = 4;
    ps.add("wgen", V, H);
    ps.add("wcp", W, H);
    ps.add("hhat", H, 1);
    ps.add("enc", W, 3);
    init_uniform(ps, 2.0, s);
    Graph g(ps, false, 0);
    Graph::Ref hhat = g.param(ps.require("hhat"));
    Graph::Ref enc = g.param(ps.require("enc"));
    std::vector<int> src{1, 5, 1};
    Graph::Ref lp = g.copy_log_dist(ps.require("wgen"), ps.require("wcp"),
                                    hhat, enc, src);
    const Mat& v = g.value(lp);
    REQUIRE(v.rows() == V);
    double mass = 0.0;
    for (int i = 0; i < V; ++i) mass += std::exp(v(i, 0));
    CHECK(std::abs(mass - 1.0) < 1e-6);
  }
}

TEST_CASE("copy distribution with duplicate sources matches hand formula") {
  ParameterSet ps;
  const int V = 3, H = 2;
  ps.add("wgen", V, H);
  ps.add("wcp", 2, H);
  ps.add("hhat", H, 1);
  ps.add("enc", 2, 2);
  ps.value(ps.require("wgen")) << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6;
  ps.value(ps.require("wcp")) << 0.2, 0.1, -0.3, 0.5;
  ps.value(ps.require("hhat")) << 0.7, -0.4;
  ps.value(ps.require("enc")) << 0.3, -0.6, 0.9, 0.2;

  Graph g(ps, false, 0);
  Graph::Ref hhat = g.param(ps.require("hhat"));
  Graph::Ref enc = g.param(ps.require("enc"));
  std::vector<int> src{2, 2};  // both source positions share one surface form
  Graph::Ref lp = g.copy_log_dist(ps.require("wgen"), ps.require("wcp"),
                                  hhat, enc, src);

  // hand computation: psi_gen = Wgen*hhat, psi_cp(j) = enc_j . (Wcp*hhat)
  Vec h(2);
  h << 0.7, -0.4;
  Mat wgen(3, 2), wcp(2, 2), encm(2, 2);
  wgen << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6;
  wcp << 0.2, 0.1, -0.3, 0.5;
  encm << 0.3, -0.6, 0.9, 0.2;
  Vec gen = wgen * h;
  Vec cph = wcp * h;
  double cp0 = encm.col(0).dot(cph);
  double cp1 = encm.col(1).dot(cph);
  Vec mass(3);
  for (int w = 0; w < 3; ++w) mass[w] = std::exp(gen[w]);
  mass[2] += std::exp(cp0) + std::exp(cp1);
  Vec expect = (mass / mass.sum()).array().log().matrix();
  for (int w = 0; w < 3; ++w) {
    CHECK(std::abs(g.value(lp)(w, 0) - expect[w]) < 1e-8);
  }
}

TEST_CASE("copy distribution gradients match finite differences") {
  ParameterSet ps;
  ps.add("wgen", 6, 4);
  ps.add("wcp", 3, 4);
  ps.add("hhat", 4, 1);
  ps.add("enc", 3, 3);
  init_uniform(ps, 0.6, 19);
  double err = op_grad_check(
      [&](Graph& g) {
        Graph::Ref hhat = g.param(ps.require("hhat"));
        Graph::Ref enc = g.param(ps.require("enc"));
        Graph::Ref lp = g.copy_log_dist(ps.require("wgen"), ps.require("wcp"),
                                        hhat, enc, {0, 4, 0});
        return g.sum({g.pick(lp, 0), g.pick(lp, 3), g.pick(lp, 4)});
      },
      ps);
  CHECK(err < 1e-6);
}

TEST_CASE("copy distribution without encoder reduces to a softmax") {
  ParameterSet ps;
  ps.add("wgen", 5, 3);
  ps.add("hhat", 3, 1);
  init_uniform(ps, 0.7, 23);
  Graph g(ps, false, 0);
  Graph::Ref hhat = g.param(ps.require("hhat"));
  Graph::Ref lp = g.copy_log_dist(ps.require("wgen"), -1, hhat, Graph::kNone,
                                  {});
  Vec scores = ps.value(ps.require("wgen")) * ps.value(ps.require("hhat"));
  Vec expect =
      (scores.array() - scores[0]).exp().matrix();  // stabilize like any
  expect /= expect.sum();
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(std::exp(g.value(lp)(i, 0)) - expect[i]) < 1e-12);
  }
}

TEST_CASE("kl_divergence value and gradients") {
  ParameterSet ps;
  ps.add("sq", 4, 1);
  ps.add("sp", 4, 1);
  init_uniform(ps, 1.0, 29);
  double err = op_grad_check(
      [&](Graph& g) {
        Graph::Ref lq = g.copy_log_dist(ps.require("sq"), -1,
                                        g.scalar_leaf(1.0), Graph::kNone, {});
        Graph::Ref lp = g.copy_log_dist(ps.require("sp"), -1,
                                        g.scalar_leaf(1.0), Graph::kNone, {});
        return g.kl_divergence(lq, lp);
      },
      ps);
  CHECK(err < 1e-6);

  // KL of a distribution with itself is zero, and KL >= 0 otherwise
  Graph g(ps, false, 0);
  Graph::Ref lq = g.copy_log_dist(ps.require("sq"), -1, g.scalar_leaf(1.0),
                                  Graph::kNone, {});
  Graph::Ref lp = g.copy_log_dist(ps.require("sp"), -1, g.scalar_leaf(1.0),
                                  Graph::kNone, {});
  CHECK(g.scalar(g.kl_divergence(lq, lq)) == doctest::Approx(0.0));
  CHECK(g.scalar(g.kl_divergence(lq, lp)) >= 0.0);
}

TEST_CASE("st_embed forward is the token row, relaxed is the mixture") {
  ParameterSet ps = small_params();
  ps.add("scores", 6, 1);
  init_uniform(ps, 0.5, 41);
  const int emb = ps.require("emb");
  Graph g(ps, false, 0);
  Graph::Ref lp = g.copy_log_dist(ps.require("scores"), -1,
                                  g.scalar_leaf(1.0), Graph::kNone, {});
  Graph::Ref hard = g.st_embed(emb, 4, lp, false);
  CHECK((g.value(hard) - ps.value(emb).row(4).transpose()).norm() == 0.0);

  Graph::Ref soft = g.st_embed(emb, 4, lp, true);
  Vec probs = g.value(lp).col(0).array().exp().matrix();
  Mat expect = ps.value(emb).transpose() * probs;
  CHECK((g.value(soft) - expect).array().abs().maxCoeff() < 1e-12);
}

TEST_CASE("st_embed routes gradients through the distribution") {
  ParameterSet ps;
  ps.add("scores", 5, 1);
  ps.add("emb", 5, 3);
  init_uniform(ps, 0.5, 31);
  double err = op_grad_check(
      [&](Graph& g) {
        Graph::Ref lp = g.copy_log_dist(ps.require("scores"), -1,
                                        g.scalar_leaf(1.0), Graph::kNone, {});
        Graph::Ref e = g.st_embed(ps.require("emb"), 2, lp, true);
        return g.sum({g.pick(e, 0), g.pick(e, 2)});
      },
      ps);
  CHECK(err < 1e-6);
}

TEST_CASE("dropout is identity in eval mode and scales in train mode") {
  ParameterSet ps = small_params();
  Graph ge(ps, false, 0);
  Graph::Ref x = ge.embed(ps.require("emb"), 1);
  CHECK(ge.value(ge.dropout(x, 0.5)) == ge.value(x));

  // train mode: kept entries are scaled by 1/(1-rate); two graphs with the
  // same seed drop the same entries
  Graph g1(ps, true, 99), g2(ps, true, 99);
  Graph::Ref d1 = g1.dropout(g1.embed(ps.require("emb"), 1), 0.5);
  Graph::Ref d2 = g2.dropout(g2.embed(ps.require("emb"), 1), 0.5);
  CHECK((g1.value(d1) - g2.value(d2)).norm() == 0.0);
  const Mat& orig = ps.value(ps.require("emb"));
  for (int i = 0; i < 3; ++i) {
    const double v = g1.value(d1)(i, 0);
    const bool kept = std::abs(v - 2.0 * orig(1, i)) < 1e-12;
    const bool dropped = v == 0.0;
    CHECK((kept || dropped));
  }
}

TEST_CASE("backward rejects non-scalar and non-finite losses") {
  ParameterSet ps = small_params();
  Graph g(ps, false, 0);
  Graph::Ref x = g.embed(ps.require("emb"), 0);
  CHECK_THROWS_AS(g.backward(x), NumericError);
  Graph::Ref inf = g.scalar_leaf(std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(g.backward(inf), NumericError);
}

TEST_CASE("hconcat forwards columns and splits gradients across its parts") {
  ParameterSet ps;
  ps.add("a", 3, 2);
  ps.add("b", 3, 4);
  ps.add("wgen", 5, 2);
  ps.add("wcp", 3, 2);
  ps.add("hhat", 2, 1);
  init_uniform(ps, 0.5, 37);

  Graph g(ps, false, 0);
  Graph::Ref cat =
      g.hconcat({g.param(ps.require("a")), g.param(ps.require("b"))});
  REQUIRE(g.value(cat).cols() == 6);
  CHECK((g.value(cat).leftCols(2) - ps.value(ps.require("a"))).norm() == 0.0);
  CHECK((g.value(cat).rightCols(4) - ps.value(ps.require("b"))).norm() == 0.0);

  // gradients reach both parts through a consumer of the joined matrix
  double err = op_grad_check(
      [&](Graph& gg) {
        Graph::Ref joined = gg.hconcat(
            {gg.param(ps.require("a")), gg.param(ps.require("b"))});
        Graph::Ref lp = gg.copy_log_dist(ps.require("wgen"),
                                         ps.require("wcp"),
                                         gg.param(ps.require("hhat")), joined,
                                         {0, 2, 0, 1, 4, 4});
        return gg.sum({gg.pick(lp, 0), gg.pick(lp, 3)});
      },
      ps);
  CHECK(err < 1e-6);
}
