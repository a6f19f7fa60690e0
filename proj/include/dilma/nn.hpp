#pragma once

#include "dilma/autodiff.hpp"
#include "dilma/rng.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace dilma::nn {

struct Param {
  std::string name;
  ad::Var var;
};

// Named parameter group. Groups partition a model's parameter set; the attack
// selects which groups receive gradient updates.
struct ParamGroup {
  std::string name;
  std::vector<Param> params;

  size_t count() const {
    size_t n = 0;
    for (const auto& p : params) n += static_cast<size_t>(p.var->value.size());
    return n;
  }
};

inline std::vector<ad::Var> flatten(const std::vector<ParamGroup>& groups) {
  std::vector<ad::Var> out;
  for (const auto& g : groups)
    for (const auto& p : g.params) out.push_back(p.var);
  return out;
}

inline size_t total_count(const std::vector<ParamGroup>& groups) {
  size_t n = 0;
  for (const auto& g : groups) n += g.count();
  return n;
}

inline void zero_grads(const std::vector<ad::Var>& params) {
  for (const auto& p : params) {
    p->ensure_grad();
    p->zero_grad();
  }
}

// Hash over raw parameter bytes, in group/tensor order. Detects any mutation
// of a shared checkpoint.
inline uint64_t params_hash(const std::vector<ParamGroup>& groups) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& g : groups) {
    h = fnv1a(g.name, h);
    for (const auto& p : g.params) {
      h = fnv1a(p.name, h);
      const Mat& m = p.var->value;
      h = fnv1a(m.data(), sizeof(double) * static_cast<size_t>(m.size()), h);
    }
  }
  return h;
}

class Adam {
 public:
  explicit Adam(std::vector<ad::Var> params, double lr, double b1 = 0.9, double b2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(b1), b2_(b2), eps_(eps) {
    for (const auto& p : params_) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, t_);
    double c2 = 1.0 - std::pow(b2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      ad::Node& p = *params_[i];
      p.ensure_grad();
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.grad;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  void zero_grad() { zero_grads(params_); }

 private:
  std::vector<ad::Var> params_;
  double lr_, b1_, b2_, eps_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

// Plain descent, used by the attack's per-iteration parameter update.
inline void sgd_step(const std::vector<ad::Var>& params, double lr) {
  for (const auto& p : params) {
    p->ensure_grad();
    p->value -= lr * p->grad;
  }
}

inline Mat glorot_uniform(long rows, long cols, Rng& rng) {
  double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  return m;
}

inline Mat gaussian(long rows, long cols, double stddev, Rng& rng) {
  Mat m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, stddev);
  return m;
}

struct Linear {
  ad::Var w, b;

  static Linear init(long in, long out, Rng& rng) {
    Linear l;
    l.w = ad::leaf(glorot_uniform(in, out, rng));
    l.b = ad::leaf(Mat::Zero(1, out));
    return l;
  }

  ad::Var operator()(const ad::Var& x) const { return ad::add_rowvec(ad::matmul(x, w), b); }

  void collect(ParamGroup& g, const std::string& prefix) const {
    g.params.push_back({prefix + ".w", w});
    g.params.push_back({prefix + ".b", b});
  }
};

struct LayerNorm {
  ad::Var gamma, beta;

  static LayerNorm init(long width) {
    LayerNorm n;
    n.gamma = ad::leaf(Mat::Ones(1, width));
    n.beta = ad::leaf(Mat::Zero(1, width));
    return n;
  }

  ad::Var operator()(const ad::Var& x) const { return ad::layer_norm_rows(x, gamma, beta); }

  void collect(ParamGroup& g, const std::string& prefix) const {
    g.params.push_back({prefix + ".gamma", gamma});
    g.params.push_back({prefix + ".beta", beta});
  }
};

// Post-norm transformer encoder block: self-attention and position-wise
// feed-forward, each wrapped in residual + layer norm.
struct EncoderLayer {
  long heads = 1;
  Linear wq, wk, wv, wo, ff1, ff2;
  LayerNorm ln1, ln2;

  static EncoderLayer init(long width, long heads, long ffn, Rng& rng) {
    EncoderLayer e;
    e.heads = heads;
    e.wq = Linear::init(width, width, rng);
    e.wk = Linear::init(width, width, rng);
    e.wv = Linear::init(width, width, rng);
    e.wo = Linear::init(width, width, rng);
    e.ff1 = Linear::init(width, ffn, rng);
    e.ff2 = Linear::init(ffn, width, rng);
    e.ln1 = LayerNorm::init(width);
    e.ln2 = LayerNorm::init(width);
    return e;
  }

  ad::Var operator()(const ad::Var& x) const {
    long width = x->cols();
    long dk = width / heads;
    ad::Var q = wq(x), k = wk(x), v = wv(x);
    std::vector<ad::Var> outs;
    outs.reserve(heads);
    double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (long h = 0; h < heads; ++h) {
      ad::Var qh = ad::slice_cols(q, h * dk, dk);
      ad::Var kh = ad::slice_cols(k, h * dk, dk);
      ad::Var vh = ad::slice_cols(v, h * dk, dk);
      ad::Var scores = ad::smul(ad::matmul(qh, ad::transpose(kh)), scale);
      ad::Var att = ad::softmax_rows(scores);
      outs.push_back(ad::matmul(att, vh));
    }
    ad::Var attended = wo(heads == 1 ? outs[0] : ad::hcat(outs));
    ad::Var x1 = ln1(ad::add(x, attended));
    ad::Var f = ff2(ad::relu_(ff1(x1)));
    return ln2(ad::add(x1, f));
  }

  void collect(ParamGroup& g, const std::string& prefix) const {
    wq.collect(g, prefix + ".wq");
    wk.collect(g, prefix + ".wk");
    wv.collect(g, prefix + ".wv");
    wo.collect(g, prefix + ".wo");
    ff1.collect(g, prefix + ".ff1");
    ff2.collect(g, prefix + ".ff2");
    ln1.collect(g, prefix + ".ln1");
    ln2.collect(g, prefix + ".ln2");
  }
};

// Single-layer LSTM over an embedded sequence; returns the mean of the hidden
// states. Gate layout in the fused weight matrices: [input, forget, cell, output].
struct Lstm {
  long hidden = 0;
  ad::Var wx, wh, b;

  static Lstm init(long input, long hidden, Rng& rng) {
    Lstm l;
    l.hidden = hidden;
    l.wx = ad::leaf(glorot_uniform(input, 4 * hidden, rng));
    l.wh = ad::leaf(glorot_uniform(hidden, 4 * hidden, rng));
    Mat bias = Mat::Zero(1, 4 * hidden);
    bias.middleCols(hidden, hidden).setOnes();  // forget-gate bias
    l.b = ad::leaf(std::move(bias));
    return l;
  }

  ad::Var mean_hidden(const ad::Var& x) const {
    long t = x->rows();
    ad::Var h = ad::constant(Mat::Zero(1, hidden));
    ad::Var c = ad::constant(Mat::Zero(1, hidden));
    ad::Var sum = ad::constant(Mat::Zero(1, hidden));
    for (long i = 0; i < t; ++i) {
      ad::Var xt = ad::row(x, i);
      ad::Var gates = ad::add_rowvec(ad::add(ad::matmul(xt, wx), ad::matmul(h, wh)), b);
      ad::Var ig = ad::sigmoid_(ad::slice_cols(gates, 0, hidden));
      ad::Var fg = ad::sigmoid_(ad::slice_cols(gates, hidden, hidden));
      ad::Var gg = ad::tanh_(ad::slice_cols(gates, 2 * hidden, hidden));
      ad::Var og = ad::sigmoid_(ad::slice_cols(gates, 3 * hidden, hidden));
      c = ad::add(ad::mul(fg, c), ad::mul(ig, gg));
      h = ad::mul(og, ad::tanh_(c));
      sum = ad::add(sum, h);
    }
    return ad::smul(sum, 1.0 / static_cast<double>(t));
  }

  void collect(ParamGroup& g, const std::string& prefix) const {
    g.params.push_back({prefix + ".wx", wx});
    g.params.push_back({prefix + ".wh", wh});
    g.params.push_back({prefix + ".b", b});
  }
};

// Inverted dropout mask as a constant factor; scale preserves expectation.
inline ad::Var dropout(const ad::Var& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  Mat mask(x->rows(), x->cols());
  double keep = 1.0 - rate;
  for (long r = 0; r < mask.rows(); ++r)
    for (long c = 0; c < mask.cols(); ++c) mask(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return ad::mul(x, ad::constant(std::move(mask)));
}

}  // namespace dilma::nn
