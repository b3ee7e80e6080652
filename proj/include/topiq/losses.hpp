#pragma once

#include <cmath>
#include <string>

#include "topiq/ops.hpp"

namespace topiq {

/// Mean squared error between predictions and normalized MOS, both shape [N].
template <class T>
Tensor<T> mos_mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.numel() == 0) throw ArgumentError("mos_mse: empty batch");
  if (pred.shape() != target.shape()) {
    throw ArgumentError("mos_mse: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  return ops::mean(ops::square(ops::sub(pred, target)));
}

/// Earth mover's distance between two distributions over the same K ordered
/// bins: ((1/K) sum_k |CDF_pred(k) - CDF_target(k)|^r)^(1/r).
template <class T>
Tensor<T> emd_loss(const Tensor<T>& pred, const Tensor<T>& target, T r = T(2)) {
  if (pred.rank() != 1 || target.rank() != 1 || pred.numel() != target.numel()) {
    throw ArgumentError("emd_loss: bin counts differ: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  Tensor<T> gap = ops::abs(ops::sub(ops::cumsum(pred), ops::cumsum(target)));
  Tensor<T> inner = r == T(2) ? ops::mean(ops::square(gap)) : ops::mean(ops::pow(gap, r));
  return r == T(2) ? ops::sqrt(inner) : ops::pow(inner, T(1) / r);
}

/// Bradley-Terry preference for A over B from perceptual error scores:
/// 1 / (1 + exp(y_A - y_B)). A lower error score means a higher probability.
template <class T>
Tensor<T> bt_probability(const Tensor<T>& score_a, const Tensor<T>& score_b) {
  return ops::sigmoid(ops::sub(score_b, score_a));
}

inline double bt_probability(double score_a, double score_b) {
  const double z = score_b - score_a;
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  return 1.0 - 1.0 / (1.0 + std::exp(z));
}

/// Mean squared error between Bradley-Terry probabilities and the human
/// preference probabilities p_AB, all shape [N].
template <class T>
Tensor<T> loss_2afc(const Tensor<T>& score_a, const Tensor<T>& score_b, const Tensor<T>& p_ab) {
  if (score_a.numel() == 0) throw ArgumentError("loss_2afc: empty batch");
  if (score_a.shape() != score_b.shape() || score_a.shape() != p_ab.shape()) {
    throw ArgumentError("loss_2afc: batch shapes differ");
  }
  for (T p : p_ab.data()) {
    if (!(p >= T(0) && p <= T(1))) throw ArgumentError("loss_2afc: preference probability outside [0,1]");
  }
  return ops::mean(ops::square(ops::sub(bt_probability(score_a, score_b), p_ab)));
}

}  // namespace topiq
