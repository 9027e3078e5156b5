// SPDX-License-Identifier: Apache-2.0
#include "labes/graph.hpp"

#include <cmath>

namespace labes {

// ---------------------------------------------------------------------------
// ParameterSet

int ParameterSet::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
  index_[name] = static_cast<int>(entries_.size());
  entries_.push_back({name, Mat::Zero(rows, cols)});
  return static_cast<int>(entries_.size()) - 1;
}

int ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

int ParameterSet::require(const std::string& name) const {
  int idx = find(name);
  if (idx < 0) throw ConfigError("missing parameter: " + name);
  return idx;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

bool ParameterSet::all_finite() const { return first_non_finite().empty(); }

std::string ParameterSet::first_non_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.allFinite()) return e.name;
  }
  return {};
}

// ---------------------------------------------------------------------------
// GradBuffer

void GradBuffer::reset(const ParameterSet& ps) {
  grads_.resize(static_cast<std::size_t>(ps.count()));
  for (int i = 0; i < ps.count(); ++i) {
    grads_[static_cast<std::size_t>(i)] =
        Mat::Zero(ps.value(i).rows(), ps.value(i).cols());
  }
}

void GradBuffer::zero() {
  for (auto& g : grads_) g.setZero();
}

void GradBuffer::accumulate(const GradBuffer& other) {
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
}

void GradBuffer::scale(double s) {
  for (auto& g : grads_) g *= s;
}

double GradBuffer::global_norm() const {
  double sq = 0.0;
  for (const auto& g : grads_) sq += g.squaredNorm();
  return std::sqrt(sq);
}

bool GradBuffer::all_finite() const {
  for (const auto& g : grads_) {
    if (!g.allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(const ParameterSet& params, bool train_mode,
             std::uint64_t rng_seed)
    : params_(params), train_mode_(train_mode), rng_(rng_seed) {
  grads_.reset(params);
  nodes_.reserve(1024);
}

Graph::Ref Graph::push(Mat value, std::function<void(Graph&)> back) {
  nodes_.push_back(Node{std::move(value), Mat(), false, std::move(back)});
  return static_cast<Ref>(nodes_.size()) - 1;
}

Mat& Graph::grad_of(Ref r) {
  Node& n = nodes_[static_cast<std::size_t>(r)];
  if (!n.touched) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.touched = true;
  }
  return n.grad;
}

void Graph::bump(Ref r) { grad_of(r); }

Graph::Ref Graph::leaf(Mat value) { return push(std::move(value)); }

Graph::Ref Graph::scalar_leaf(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return push(std::move(m));
}

Graph::Ref Graph::param(int p) {
  Ref out = push(params_.value(p));
  nodes_.back().back = [out, p](Graph& g) {
    g.grads_[p] += g.nodes_[out].grad;
  };
  return out;
}

Graph::Ref Graph::embed(int p, int row) {
  const Mat& E = params_.value(p);
  Ref out = push(E.row(row).transpose());
  nodes_.back().back = [out, p, row](Graph& g) {
    g.grads_[p].row(row) += g.nodes_[out].grad.transpose();
  };
  return out;
}

Graph::Ref Graph::st_embed(int p, int token, Ref logp, bool relaxed) {
  const Mat& E = params_.value(p);
  Vec probs = nodes_[static_cast<std::size_t>(logp)].value.col(0).array().exp();
  Mat fwd = relaxed ? Mat(E.transpose() * probs)
                    : Mat(E.row(token).transpose());
  Ref out = push(std::move(fwd));
  nodes_.back().back = [out, p, logp, probs](Graph& g) {
    const Mat& grad = g.nodes_[out].grad;  // (emb x 1)
    const Mat& E = g.params_.value(p);
    g.grads_[p].noalias() += probs * grad.transpose();
    // d emb / d logp_w = p_w * E_w
    Vec dlogp = probs.array() * (E * grad.col(0)).array();
    g.grad_of(logp).col(0) += dlogp;
  };
  return out;
}

Graph::Ref Graph::linear(const std::vector<std::pair<int, Ref>>& terms,
                         int bias) {
  if (terms.empty()) throw ConfigError("linear: no terms");
  Mat acc;
  bool first = true;
  for (const auto& [p, x] : terms) {
    const Mat& xv = nodes_[static_cast<std::size_t>(x)].value;
    if (first) {
      acc.noalias() = params_.value(p) * xv;
      first = false;
    } else {
      acc.noalias() += params_.value(p) * xv;
    }
  }
  if (bias >= 0) acc += params_.value(bias);
  Ref out = push(std::move(acc));
  nodes_.back().back = [out, terms, bias](Graph& g) {
    const Mat& grad = g.nodes_[out].grad;
    for (const auto& [p, x] : terms) {
      const Mat& xv = g.nodes_[static_cast<std::size_t>(x)].value;
      g.grads_[p].noalias() += grad * xv.transpose();
      g.grad_of(x).noalias() += g.params_.value(p).transpose() * grad;
    }
    if (bias >= 0) g.grads_[bias] += grad;
  };
  return out;
}

namespace {
inline Vec sigmoid(const Vec& x) {
  return 1.0 / (1.0 + (-x.array()).exp());
}
}  // namespace

Graph::Ref Graph::gru(int wx, int wh, int b, Ref x, Ref h) {
  const Mat& Wx = params_.value(wx);
  const Mat& Wh = params_.value(wh);
  const Mat& bv = params_.value(b);
  const Vec xv = nodes_[static_cast<std::size_t>(x)].value.col(0);
  const Vec hv = nodes_[static_cast<std::size_t>(h)].value.col(0);
  const int H = static_cast<int>(Wh.cols());

  Vec pre = Wx * xv + bv.col(0);
  Vec uzr = Wh.topRows(2 * H) * hv;
  Vec z = sigmoid(pre.segment(0, H) + uzr.segment(0, H));
  Vec r = sigmoid(pre.segment(H, H) + uzr.segment(H, H));
  Vec rh = r.array() * hv.array();
  Vec n = (pre.segment(2 * H, H) + Wh.bottomRows(H) * rh).array().tanh();
  Vec hnew = ((1.0 - z.array()) * hv.array()) + z.array() * n.array();

  Ref out = push(hnew);
  nodes_.back().back = [out, wx, wh, b, x, h, z, r, n, rh, xv, hv,
                        H](Graph& g) {
    const Vec grad = g.nodes_[out].grad.col(0);
    const Mat& Wx = g.params_.value(wx);
    const Mat& Wh = g.params_.value(wh);

    Vec dz = grad.array() * (n.array() - hv.array());
    Vec dn = grad.array() * z.array();
    Vec dh = grad.array() * (1.0 - z.array());

    Vec dan = dn.array() * (1.0 - n.array().square());
    Vec drh = Wh.bottomRows(H).transpose() * dan;
    Vec dr = drh.array() * hv.array();
    dh.array() += drh.array() * r.array();

    Vec dar = dr.array() * r.array() * (1.0 - r.array());
    Vec daz = dz.array() * z.array() * (1.0 - z.array());

    Vec da(3 * H);
    da << daz, dar, dan;
    g.grads_[wx].noalias() += da * xv.transpose();
    g.grads_[b].col(0) += da;
    g.grads_[wh].topRows(2 * H).noalias() +=
        da.segment(0, 2 * H) * hv.transpose();
    g.grads_[wh].bottomRows(H).noalias() += dan * rh.transpose();

    g.grad_of(x).col(0).noalias() += Wx.transpose() * da;
    dh.noalias() += Wh.topRows(2 * H).transpose() * da.segment(0, 2 * H);
    g.grad_of(h).col(0) += dh;
  };
  return out;
}

Graph::Ref Graph::stack_cols(const std::vector<Ref>& cols) {
  if (cols.empty()) throw ConfigError("stack_cols: empty");
  const auto rows = nodes_[static_cast<std::size_t>(cols[0])].value.rows();
  Mat m(rows, static_cast<long>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    m.col(static_cast<long>(i)) =
        nodes_[static_cast<std::size_t>(cols[i])].value.col(0);
  }
  Ref out = push(std::move(m));
  nodes_.back().back = [out, cols](Graph& g) {
    const Mat& grad = g.nodes_[out].grad;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      g.grad_of(cols[i]).col(0) += grad.col(static_cast<long>(i));
    }
  };
  return out;
}

Graph::Ref Graph::vconcat(const std::vector<Ref>& parts) {
  if (parts.empty()) throw ConfigError("vconcat: empty");
  long rows = 0;
  const long cols = nodes_[static_cast<std::size_t>(parts[0])].value.cols();
  for (Ref r : parts) rows += nodes_[static_cast<std::size_t>(r)].value.rows();
  Mat m(rows, cols);
  long at = 0;
  for (Ref r : parts) {
    const Mat& v = nodes_[static_cast<std::size_t>(r)].value;
    m.middleRows(at, v.rows()) = v;
    at += v.rows();
  }
  Ref out = push(std::move(m));
  nodes_.back().back = [out, parts](Graph& g) {
    const Mat& grad = g.nodes_[out].grad;
    long at = 0;
    for (Ref r : parts) {
      const long n = g.nodes_[static_cast<std::size_t>(r)].value.rows();
      g.grad_of(r) += grad.middleRows(at, n);
      at += n;
    }
  };
  return out;
}

Graph::Ref Graph::hconcat(const std::vector<Ref>& parts) {
  if (parts.empty()) throw ConfigError("hconcat: empty");
  long cols = 0;
  const long rows = nodes_[static_cast<std::size_t>(parts[0])].value.rows();
  for (Ref r : parts) cols += nodes_[static_cast<std::size_t>(r)].value.cols();
  Mat m(rows, cols);
  long at = 0;
  for (Ref r : parts) {
    const Mat& v = nodes_[static_cast<std::size_t>(r)].value;
    m.middleCols(at, v.cols()) = v;
    at += v.cols();
  }
  Ref out = push(std::move(m));
  nodes_.back().back = [out, parts](Graph& g) {
    const Mat& grad = g.nodes_[out].grad;
    long at = 0;
    for (Ref r : parts) {
      const long n = g.nodes_[static_cast<std::size_t>(r)].value.cols();
      g.grad_of(r) += grad.middleCols(at, n);
      at += n;
    }
  };
  return out;
}

namespace {
inline Vec softmax(const Vec& s) {
  Vec e = (s.array() - s.maxCoeff()).exp();
  return e / e.sum();
}
}  // namespace

Graph::Ref Graph::attention(int we, int wq, int v, int b, Ref enc, Ref query) {
  const Mat& We = params_.value(we);
  const Mat& Wq = params_.value(wq);
  const Vec vv = params_.value(v).col(0);
  const Mat& E = nodes_[static_cast<std::size_t>(enc)].value;
  const Vec q = nodes_[static_cast<std::size_t>(query)].value.col(0);

  Mat pre = We * E;
  Vec shift = Wq * q + params_.value(b).col(0);
  pre.colwise() += shift;
  Mat T = pre.array().tanh();
  Vec scores = T.transpose() * vv;
  Vec alpha = softmax(scores);
  Vec ctx = E * alpha;

  Ref out = push(ctx);
  nodes_.back().back = [out, we, wq, v, b, enc, query, T, alpha, q](Graph& g) {
    const Vec grad = g.nodes_[out].grad.col(0);
    const Mat& E = g.nodes_[static_cast<std::size_t>(enc)].value;
    const Mat& We = g.params_.value(we);
    const Mat& Wq = g.params_.value(wq);
    const Vec vv = g.params_.value(v).col(0);

    Vec dalpha = E.transpose() * grad;
    Mat& denc = g.grad_of(enc);
    denc.noalias() += grad * alpha.transpose();

    double dot = alpha.dot(dalpha);
    Vec ds = alpha.array() * (dalpha.array() - dot);
    Mat dT = vv * ds.transpose();
    Mat dpre = dT.array() * (1.0 - T.array().square());

    g.grads_[we].noalias() += dpre * E.transpose();
    denc.noalias() += We.transpose() * dpre;
    Vec sumd = dpre.rowwise().sum();
    g.grads_[wq].noalias() += sumd * q.transpose();
    g.grad_of(query).col(0).noalias() += Wq.transpose() * sumd;
    g.grads_[v].col(0) += T * ds;
    g.grads_[b].col(0) += sumd;
  };
  return out;
}

Graph::Ref Graph::attention_weights(int we, int wq, int v, int b, Ref enc,
                                    Ref query) {
  const Mat& We = params_.value(we);
  const Mat& Wq = params_.value(wq);
  const Vec vv = params_.value(v).col(0);
  const Mat& E = nodes_[static_cast<std::size_t>(enc)].value;
  const Vec q = nodes_[static_cast<std::size_t>(query)].value.col(0);

  Mat pre = We * E;
  Vec shift = Wq * q + params_.value(b).col(0);
  pre.colwise() += shift;
  Mat T = pre.array().tanh();
  Vec alpha = softmax(Vec(T.transpose() * vv));

  Ref out = push(alpha);
  nodes_.back().back = [out, we, wq, v, b, enc, query, T, alpha, q](Graph& g) {
    const Vec dalpha = g.nodes_[out].grad.col(0);
    const Mat& E = g.nodes_[static_cast<std::size_t>(enc)].value;
    const Mat& We = g.params_.value(we);
    const Mat& Wq = g.params_.value(wq);
    const Vec vv = g.params_.value(v).col(0);

    double dot = alpha.dot(dalpha);
    Vec ds = alpha.array() * (dalpha.array() - dot);
    Mat dT = vv * ds.transpose();
    Mat dpre = dT.array() * (1.0 - T.array().square());

    g.grads_[we].noalias() += dpre * E.transpose();
    g.grad_of(enc).noalias() += We.transpose() * dpre;
    Vec sumd = dpre.rowwise().sum();
    g.grads_[wq].noalias() += sumd * q.transpose();
    g.grad_of(query).col(0).noalias() += Wq.transpose() * sumd;
    g.grads_[v].col(0) += T * ds;
    g.grads_[b].col(0) += sumd;
  };
  return out;
}

Graph::Ref Graph::copy_log_dist(int wgen, int wcp, Ref hhat, Ref enc,
                                const std::vector<int>& src_tokens) {
  const Mat& Wgen = params_.value(wgen);
  const Vec h = nodes_[static_cast<std::size_t>(hhat)].value.col(0);
  const long V = Wgen.rows();

  Vec gen = Wgen * h;
  Vec u, cp;
  const bool has_copy = enc != kNone && !src_tokens.empty();
  if (has_copy) {
    const Mat& E = nodes_[static_cast<std::size_t>(enc)].value;
    u = params_.value(wcp) * h;
    cp = E.transpose() * u;
  }
  double m = gen.maxCoeff();
  if (has_copy) m = std::max(m, cp.maxCoeff());

  Vec eg = (gen.array() - m).exp();
  Vec s = eg;
  Vec ec;
  if (has_copy) {
    ec = (cp.array() - m).exp();
    for (std::size_t j = 0; j < src_tokens.size(); ++j) {
      s[src_tokens[j]] += ec[static_cast<long>(j)];
    }
  }
  double Z = s.sum();
  Vec logp = s.array().log() - std::log(Z);

  Ref out = push(logp);
  nodes_.back().back = [out, wgen, wcp, hhat, enc, src_tokens, eg, ec, s, Z, u,
                        h, has_copy, V](Graph& g) {
    const Vec gamma = g.nodes_[out].grad.col(0);
    double total = gamma.sum();
    Vec dgen(V);
    for (long w = 0; w < V; ++w) {
      dgen[w] = eg[w] * (gamma[w] / s[w] - total / Z);
    }
    g.grads_[wgen].noalias() += dgen * h.transpose();
    Vec dh = g.params_.value(wgen).transpose() * dgen;
    if (has_copy) {
      const Mat& E = g.nodes_[static_cast<std::size_t>(enc)].value;
      Vec dcp(static_cast<long>(src_tokens.size()));
      for (std::size_t j = 0; j < src_tokens.size(); ++j) {
        const int w = src_tokens[j];
        dcp[static_cast<long>(j)] =
            ec[static_cast<long>(j)] * (gamma[w] / s[w] - total / Z);
      }
      Vec du = E * dcp;
      g.grad_of(enc).noalias() += u * dcp.transpose();
      g.grads_[wcp].noalias() += du * h.transpose();
      dh.noalias() += g.params_.value(wcp).transpose() * du;
    }
    g.grad_of(hhat).col(0) += dh;
  };
  return out;
}

Graph::Ref Graph::dropout(Ref x, double rate) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: bad rate");
  if (!train_mode_ || rate == 0.0) return x;
  const Mat& xv = nodes_[static_cast<std::size_t>(x)].value;
  const double keep = 1.0 - rate;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Mat mask(xv.rows(), xv.cols());
  for (long c = 0; c < xv.cols(); ++c) {
    for (long r = 0; r < xv.rows(); ++r) {
      mask(r, c) = unif(rng_) < rate ? 0.0 : 1.0 / keep;
    }
  }
  Ref out = push(xv.cwiseProduct(mask));
  nodes_.back().back = [out, x, mask](Graph& g) {
    g.grad_of(x) += g.nodes_[out].grad.cwiseProduct(mask);
  };
  return out;
}

Graph::Ref Graph::pick(Ref x, int i) {
  Mat m(1, 1);
  m(0, 0) = nodes_[static_cast<std::size_t>(x)].value(i, 0);
  Ref out = push(std::move(m));
  nodes_.back().back = [out, x, i](Graph& g) {
    g.grad_of(x)(i, 0) += g.nodes_[out].grad(0, 0);
  };
  return out;
}

Graph::Ref Graph::add(Ref a, Ref b) {
  Ref out = push(nodes_[static_cast<std::size_t>(a)].value +
                 nodes_[static_cast<std::size_t>(b)].value);
  nodes_.back().back = [out, a, b](Graph& g) {
    g.grad_of(a) += g.nodes_[out].grad;
    g.grad_of(b) += g.nodes_[out].grad;
  };
  return out;
}

Graph::Ref Graph::sum(const std::vector<Ref>& xs) {
  if (xs.empty()) throw ConfigError("sum: empty");
  Mat acc = nodes_[static_cast<std::size_t>(xs[0])].value;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    acc += nodes_[static_cast<std::size_t>(xs[i])].value;
  }
  Ref out = push(std::move(acc));
  nodes_.back().back = [out, xs](Graph& g) {
    for (Ref x : xs) g.grad_of(x) += g.nodes_[out].grad;
  };
  return out;
}

Graph::Ref Graph::scale(Ref x, double s) {
  Ref out = push(nodes_[static_cast<std::size_t>(x)].value * s);
  nodes_.back().back = [out, x, s](Graph& g) {
    g.grad_of(x) += g.nodes_[out].grad * s;
  };
  return out;
}

Graph::Ref Graph::kl_divergence(Ref logq, Ref logp) {
  const Vec lq = nodes_[static_cast<std::size_t>(logq)].value.col(0);
  const Vec lp = nodes_[static_cast<std::size_t>(logp)].value.col(0);
  Vec q = lq.array().exp();
  Mat m(1, 1);
  m(0, 0) = (q.array() * (lq - lp).array()).sum();
  Ref out = push(std::move(m));
  nodes_.back().back = [out, logq, logp, q, lq, lp](Graph& g) {
    const double grad = g.nodes_[out].grad(0, 0);
    g.grad_of(logq).col(0).array() +=
        grad * (q.array() * ((lq - lp).array() + 1.0));
    g.grad_of(logp).col(0).array() -= grad * q.array();
  };
  return out;
}

void Graph::backward(Ref loss) {
  const Mat& lv = nodes_[static_cast<std::size_t>(loss)].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw NumericError("backward: loss must be scalar");
  }
  if (!std::isfinite(lv(0, 0))) {
    throw NumericError("backward: non-finite loss");
  }
  grad_of(loss)(0, 0) += 1.0;
  for (Ref r = loss; r >= 0; --r) {
    Node& n = nodes_[static_cast<std::size_t>(r)];
    if (n.touched && n.back) n.back(*this);
  }
}

}  // namespace labes
