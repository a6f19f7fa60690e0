#pragma once

#include "dilma/autodiff.hpp"
#include "dilma/common.hpp"
#include "dilma/rng.hpp"

#include <stdexcept>
#include <vector>

namespace dilma {

// Row-stochastic relaxation of a sampled sequence. rows carries the soft
// probabilities the gradient flows through; hard_ids is the per-row argmax
// (the straight-through decode).
struct RelaxedSequence {
  Mat rows;
  TokenSequence hard_ids;
  double tau = 1.0;
};

inline void check_temperature(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument(cat("temperature must be positive, got ", tau));
}

// softmax(logits / tau) per row, computed with max subtraction.
inline Mat temperature_softmax(const Mat& logits, double tau) {
  check_temperature(tau);
  return ad::softmax_rows_value(logits / tau);
}

inline std::vector<int> argmax_rows(const Mat& m) {
  std::vector<int> ids(static_cast<size_t>(m.rows()));
  for (long r = 0; r < m.rows(); ++r) {
    Eigen::Index c;
    m.row(r).maxCoeff(&c);
    ids[static_cast<size_t>(r)] = static_cast<int>(c);
  }
  return ids;
}

// i.i.d. Gumbel(0,1) noise matrix; the test hook passes zeros instead.
inline Mat gumbel_noise(long rows, long cols, Rng& rng) {
  Mat g(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) g(r, c) = rng.gumbel();
  return g;
}

// Straight-Through Gumbel sample: soft rows are softmax((logits + g) / tau);
// hard ids are the row argmax. Pass zero_noise=true to make the draw
// deterministic (examples and gradient checks).
inline RelaxedSequence gumbel_st_sample(const Mat& logits, double tau, Rng& rng,
                                        bool zero_noise = false) {
  check_temperature(tau);
  Mat noise = zero_noise ? Mat::Zero(logits.rows(), logits.cols())
                         : gumbel_noise(logits.rows(), logits.cols(), rng);
  RelaxedSequence out;
  out.tau = tau;
  out.rows = ad::softmax_rows_value((logits + noise) / tau);
  out.hard_ids = TokenSequence(argmax_rows(out.rows));
  return out;
}

// Graph-building variant used inside the attack loss: the returned soft rows
// are differentiable with respect to the logits var.
inline ad::Var gumbel_soft_rows(const ad::Var& logits, double tau, const Mat& noise) {
  check_temperature(tau);
  return ad::softmax_rows(ad::smul(ad::add(logits, ad::constant(noise)), 1.0 / tau));
}

// One categorical draw per row via inverse-CDF on the row probabilities.
inline TokenSequence sample_categorical_rows(const Mat& probs, Rng& rng) {
  TokenSequence seq;
  seq.ids.reserve(static_cast<size_t>(probs.rows()));
  for (long r = 0; r < probs.rows(); ++r) {
    double u = rng.uniform();
    double acc = 0.0;
    int pick = static_cast<int>(probs.cols()) - 1;
    for (long c = 0; c < probs.cols(); ++c) {
      acc += probs(r, c);
      if (u <= acc) {
        pick = static_cast<int>(c);
        break;
      }
    }
    seq.ids.push_back(pick);
  }
  return seq;
}

}  // namespace dilma
