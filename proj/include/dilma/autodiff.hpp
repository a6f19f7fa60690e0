#pragma once

#include "dilma/common.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

// Reverse-mode autodiff over dense double matrices. Every forward op records
// a closure that scatters the node's gradient into its parents; backward()
// walks the tape in reverse topological order. Nodes whose inputs do not
// require gradients drop their parent links, so pure inference builds no tape.
namespace dilma::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Mat value;
  Mat grad;
  std::vector<Var> parents;
  std::function<void()> backprop;
  bool requires_grad = false;

  explicit Node(Mat v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
      grad = Mat::Zero(value.rows(), value.cols());
    }
  }
  void zero_grad() { grad.setZero(); }
  long rows() const { return value.rows(); }
  long cols() const { return value.cols(); }
};

inline Var constant(Mat v) { return std::make_shared<Node>(std::move(v)); }
inline Var scalar(double v) { return constant(Mat::Constant(1, 1, v)); }
inline Var leaf(Mat v) { return std::make_shared<Node>(std::move(v), true); }

namespace detail {

inline Var make(Mat value, std::vector<Var> parents) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = std::make_shared<Node>(std::move(value), rg);
  if (rg) n->parents = std::move(parents);
  return n;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  auto n = detail::make(a->value + b->value, {a, b});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    n->backprop = [s, pa, pb] {
      if (pa->requires_grad) { pa->ensure_grad(); pa->grad += s->grad; }
      if (pb->requires_grad) { pb->ensure_grad(); pb->grad += s->grad; }
    };
  }
  return n;
}

inline Var sub(const Var& a, const Var& b) {
  auto n = detail::make(a->value - b->value, {a, b});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    n->backprop = [s, pa, pb] {
      if (pa->requires_grad) { pa->ensure_grad(); pa->grad += s->grad; }
      if (pb->requires_grad) { pb->ensure_grad(); pb->grad -= s->grad; }
    };
  }
  return n;
}

// Broadcasts row vector b (1 x c) over every row of a.
inline Var add_rowvec(const Var& a, const Var& b) {
  Mat v = a->value;
  v.rowwise() += b->value.row(0);
  auto n = detail::make(std::move(v), {a, b});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    n->backprop = [s, pa, pb] {
      if (pa->requires_grad) { pa->ensure_grad(); pa->grad += s->grad; }
      if (pb->requires_grad) { pb->ensure_grad(); pb->grad.row(0) += s->grad.colwise().sum(); }
    };
  }
  return n;
}

inline Var mul(const Var& a, const Var& b) {
  auto n = detail::make(a->value.cwiseProduct(b->value), {a, b});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    n->backprop = [s, pa, pb] {
      if (pa->requires_grad) { pa->ensure_grad(); pa->grad += s->grad.cwiseProduct(pb->value); }
      if (pb->requires_grad) { pb->ensure_grad(); pb->grad += s->grad.cwiseProduct(pa->value); }
    };
  }
  return n;
}

inline Var smul(const Var& a, double k) {
  auto n = detail::make(a->value * k, {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa, k] { pa->ensure_grad(); pa->grad += s->grad * k; };
  }
  return n;
}

inline Var add_scalar(const Var& a, double k) {
  auto n = detail::make(a->value.array() + k, {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] { pa->ensure_grad(); pa->grad += s->grad; };
  }
  return n;
}

inline Var matmul(const Var& a, const Var& b) {
  auto n = detail::make(a->value * b->value, {a, b});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    Node* pb = b.get();
    n->backprop = [s, pa, pb] {
      if (pa->requires_grad) { pa->ensure_grad(); pa->grad.noalias() += s->grad * pb->value.transpose(); }
      if (pb->requires_grad) { pb->ensure_grad(); pb->grad.noalias() += pa->value.transpose() * s->grad; }
    };
  }
  return n;
}

inline Var transpose(const Var& a) {
  auto n = detail::make(a->value.transpose(), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] { pa->ensure_grad(); pa->grad += s->grad.transpose(); };
  }
  return n;
}

inline Var tanh_(const Var& a) {
  auto n = detail::make(a->value.array().tanh(), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      pa->grad.array() += s->grad.array() * (1.0 - s->value.array().square());
    };
  }
  return n;
}

inline Var sigmoid_(const Var& a) {
  Mat v = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
  auto n = detail::make(std::move(v), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      pa->grad.array() += s->grad.array() * s->value.array() * (1.0 - s->value.array());
    };
  }
  return n;
}

inline Var relu_(const Var& a) {
  auto n = detail::make(a->value.cwiseMax(0.0), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      pa->grad.array() += s->grad.array() * (pa->value.array() > 0.0).cast<double>();
    };
  }
  return n;
}

inline Var log_(const Var& a) {
  auto n = detail::make(a->value.array().log(), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      pa->grad.array() += s->grad.array() / pa->value.array();
    };
  }
  return n;
}

inline Var abs_(const Var& a) {
  auto n = detail::make(a->value.array().abs(), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      pa->grad.array() += s->grad.array() * pa->value.array().sign();
    };
  }
  return n;
}

// Gradient is passed through only where the input sits strictly below the cap.
inline Var clamp_max(const Var& a, double hi) {
  auto n = detail::make(a->value.cwiseMin(hi), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa, hi] {
      pa->ensure_grad();
      pa->grad.array() += s->grad.array() * (pa->value.array() < hi).cast<double>();
    };
  }
  return n;
}

// Numerically stable row-wise softmax.
inline Mat softmax_rows_value(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r) {
    Eigen::ArrayXd row = x.row(r).array();
    double m = row.maxCoeff();
    Eigen::ArrayXd e = (row - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return y;
}

inline Var softmax_rows(const Var& a) {
  auto n = detail::make(softmax_rows_value(a->value), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      for (long r = 0; r < s->value.rows(); ++r) {
        Eigen::ArrayXd y = s->value.row(r).array();
        Eigen::ArrayXd g = s->grad.row(r).array();
        double dot = (g * y).sum();
        pa->grad.row(r).array() += y * (g - dot);
      }
    };
  }
  return n;
}

// Row-wise layer normalization with per-column gain/bias (1 x c each).
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  long rows = x->rows(), cols = x->cols();
  Mat xhat(rows, cols);
  Vec inv_sd(rows);
  for (long r = 0; r < rows; ++r) {
    Eigen::ArrayXd row = x->value.row(r).array();
    double mean = row.mean();
    double var = (row - mean).square().mean();
    inv_sd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((row - mean) * inv_sd(r)).matrix();
  }
  Mat v(rows, cols);
  for (long r = 0; r < rows; ++r) {
    v.row(r) = xhat.row(r).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
  }
  auto n = detail::make(std::move(v), {x, gamma, beta});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* px = x.get();
    Node* pg = gamma.get();
    Node* pb = beta.get();
    n->backprop = [s, px, pg, pb, xhat, inv_sd] {
      long rows = s->value.rows();
      if (pg->requires_grad) {
        pg->ensure_grad();
        for (long r = 0; r < rows; ++r) {
          pg->grad.row(0) += s->grad.row(r).cwiseProduct(xhat.row(r));
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        pb->grad.row(0) += s->grad.colwise().sum();
      }
      if (px->requires_grad) {
        px->ensure_grad();
        for (long r = 0; r < rows; ++r) {
          Eigen::ArrayXd gh = s->grad.row(r).array() * pg->value.row(0).array();
          Eigen::ArrayXd xh = xhat.row(r).array();
          double m1 = gh.mean();
          double m2 = (gh * xh).mean();
          px->grad.row(r).array() += inv_sd(r) * (gh - m1 - xh * m2);
        }
      }
    };
  }
  return n;
}

// t x c -> 1 x c column means.
inline Var mean_rows(const Var& a) {
  Mat v = a->value.colwise().mean();
  auto n = detail::make(std::move(v), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      double inv = 1.0 / static_cast<double>(pa->value.rows());
      for (long r = 0; r < pa->grad.rows(); ++r) pa->grad.row(r) += s->grad.row(0) * inv;
    };
  }
  return n;
}

inline Var mean_all(const Var& a) {
  auto n = detail::make(Mat::Constant(1, 1, a->value.mean()), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      pa->grad.array() += s->grad(0, 0) / static_cast<double>(pa->value.size());
    };
  }
  return n;
}

inline Var sum_all(const Var& a) {
  auto n = detail::make(Mat::Constant(1, 1, a->value.sum()), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa] {
      pa->ensure_grad();
      pa->grad.array() += s->grad(0, 0);
    };
  }
  return n;
}

// Embedding lookup: selects table rows by id. Duplicate ids accumulate.
inline Var gather_rows(const Var& table, const std::vector<int>& ids) {
  Mat v(static_cast<long>(ids.size()), table->cols());
  for (size_t i = 0; i < ids.size(); ++i) v.row(static_cast<long>(i)) = table->value.row(ids[i]);
  auto n = detail::make(std::move(v), {table});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pt = table.get();
    n->backprop = [s, pt, ids] {
      pt->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i) pt->grad.row(ids[i]) += s->grad.row(static_cast<long>(i));
    };
  }
  return n;
}

inline Var top_rows(const Var& a, long t) {
  auto n = detail::make(a->value.topRows(t), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa, t] {
      pa->ensure_grad();
      pa->grad.topRows(t) += s->grad;
    };
  }
  return n;
}

inline Var row(const Var& a, long r) {
  auto n = detail::make(a->value.row(r), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa, r] {
      pa->ensure_grad();
      pa->grad.row(r) += s->grad.row(0);
    };
  }
  return n;
}

inline Var slice_cols(const Var& a, long c0, long w) {
  auto n = detail::make(a->value.middleCols(c0, w), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa, c0, w] {
      pa->ensure_grad();
      pa->grad.middleCols(c0, w) += s->grad;
    };
  }
  return n;
}

inline Var hcat(const std::vector<Var>& parts) {
  long rows = parts.front()->rows();
  long cols = 0;
  for (const auto& p : parts) cols += p->cols();
  Mat v(rows, cols);
  long off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p->cols()) = p->value;
    off += p->cols();
  }
  auto n = detail::make(std::move(v), parts);
  if (n->requires_grad) {
    Node* s = n.get();
    std::vector<Node*> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) raw.push_back(p.get());
    n->backprop = [s, raw] {
      long off = 0;
      for (Node* p : raw) {
        if (p->requires_grad) {
          p->ensure_grad();
          p->grad += s->grad.middleCols(off, p->value.cols());
        }
        off += p->value.cols();
      }
    };
  }
  return n;
}

// Window-3 neighbourhood: out row i = [x_{i-1}, x_i, x_{i+1}], zero padded at
// the borders. Used by the convolutional sequence encoder.
inline Var neighbor_concat3(const Var& a) {
  long t = a->rows(), c = a->cols();
  Mat v = Mat::Zero(t, 3 * c);
  for (long i = 0; i < t; ++i) {
    if (i > 0) v.block(i, 0, 1, c) = a->value.row(i - 1);
    v.block(i, c, 1, c) = a->value.row(i);
    if (i + 1 < t) v.block(i, 2 * c, 1, c) = a->value.row(i + 1);
  }
  auto n = detail::make(std::move(v), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa, t, c] {
      pa->ensure_grad();
      for (long i = 0; i < t; ++i) {
        if (i > 0) pa->grad.row(i - 1) += s->grad.block(i, 0, 1, c);
        pa->grad.row(i) += s->grad.block(i, c, 1, c);
        if (i + 1 < t) pa->grad.row(i + 1) += s->grad.block(i, 2 * c, 1, c);
      }
    };
  }
  return n;
}

inline Var cell(const Var& a, long r, long c) {
  auto n = detail::make(Mat::Constant(1, 1, a->value(r, c)), {a});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pa = a.get();
    n->backprop = [s, pa, r, c] {
      pa->ensure_grad();
      pa->grad(r, c) += s->grad(0, 0);
    };
  }
  return n;
}

// Mean cross entropy of the selected rows against their target ids, computed
// with a fused stable softmax. Gradient: (softmax - onehot) / n over the
// selected rows only.
inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets,
                              const std::vector<int>& sel_rows) {
  if (sel_rows.empty()) throw std::invalid_argument("cross_entropy_rows: no rows selected");
  Mat probs = softmax_rows_value(logits->value);
  double total = 0.0;
  for (size_t i = 0; i < sel_rows.size(); ++i) {
    total += -std::log(std::max(probs(sel_rows[i], targets[i]), 1e-300));
  }
  double inv = 1.0 / static_cast<double>(sel_rows.size());
  auto n = detail::make(Mat::Constant(1, 1, total * inv), {logits});
  if (n->requires_grad) {
    Node* s = n.get();
    Node* pl = logits.get();
    n->backprop = [s, pl, probs, targets, sel_rows, inv] {
      pl->ensure_grad();
      double g = s->grad(0, 0) * inv;
      for (size_t i = 0; i < sel_rows.size(); ++i) {
        int r = sel_rows[i];
        pl->grad.row(r) += g * probs.row(r);
        pl->grad(r, targets[i]) -= g;
      }
    };
  }
  return n;
}

inline Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
  std::vector<int> rows(targets.size());
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  return cross_entropy_rows(logits, targets, rows);
}

inline void backward(const Var& root) {
  if (root->rows() != 1 || root->cols() != 1) {
    throw std::invalid_argument("backward: root must be a 1x1 scalar");
  }
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop();
    }
  }
}

}  // namespace dilma::ad
