#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "topiq/tensor.hpp"

namespace topiq {

/// Input without the spread a statistic needs (constant vector, all ties).
class DegenerateInputError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

/// y' = (b1 - b2) / (1 + exp(-(x - b3) / |b4|)) + b2
struct LogisticFit {
  double beta1 = 0.0, beta2 = 0.0, beta3 = 0.0, beta4 = 1.0;
  double initial_sse = 0.0;
  double sse = 0.0;
  std::size_t iterations = 0;
  bool converged = false;  // false: hit the iteration cap, parameters are best-so-far

  double operator()(double x) const {
    const double u = (x - beta3) / std::abs(beta4);
    const double s = u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
    return (beta1 - beta2) * s + beta2;
  }

  std::vector<double> apply(std::span<const double> xs) const {
    std::vector<double> out(xs.size());
    std::transform(xs.begin(), xs.end(), out.begin(), [this](double x) { return (*this)(x); });
    return out;
  }
};

namespace detail {

inline void require_same_length(std::span<const double> a, std::span<const double> b, std::size_t min_len,
                                const char* what) {
  if (a.size() != b.size()) {
    throw ArgumentError(std::string(what) + ": lengths differ (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  if (a.size() < min_len) {
    throw ArgumentError(std::string(what) + ": needs at least " + std::to_string(min_len) + " samples");
  }
}

inline double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

inline double population_std(std::span<const double> v) {
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / v.size());
}

inline double logistic_sse(const LogisticFit& f, std::span<const double> x, std::span<const double> y) {
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f(x[i]);
    sse += r * r;
  }
  return sse;
}

}  // namespace detail

/// Starting point: b1 = max(y), b2 = min(y), b3 = mean(yhat), b4 = std(yhat) / 4.
inline LogisticFit logistic_init(std::span<const double> pred, std::span<const double> target) {
  detail::require_same_length(pred, target, 1, "fit_logistic");
  LogisticFit f;
  f.beta1 = *std::max_element(target.begin(), target.end());
  f.beta2 = *std::min_element(target.begin(), target.end());
  f.beta3 = detail::mean(pred);
  f.beta4 = detail::population_std(pred) / 4.0;
  return f;
}

/// Least-squares fit of the 4-parameter logistic by damped Gauss-Newton
/// (Levenberg-Marquardt damping) with an analytic Jacobian. Steps are only
/// accepted when they lower the squared error.
inline LogisticFit fit_logistic(std::span<const double> pred, std::span<const double> target,
                                std::size_t max_iterations = 200) {
  detail::require_same_length(pred, target, 5, "fit_logistic");
  if (detail::population_std(pred) == 0.0) throw DegenerateInputError("fit_logistic: predictions are constant");

  LogisticFit best = logistic_init(pred, target);
  best.sse = best.initial_sse = detail::logistic_sse(best, pred, target);
  const std::size_t n = pred.size();
  double lambda = 1e-3;

  Eigen::MatrixXd jac(n, 4);
  Eigen::VectorXd resid(n);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    best.iterations = it + 1;
    const double a4 = std::abs(best.beta4);
    const double sign4 = best.beta4 >= 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (pred[i] - best.beta3) / a4;
      const double s = u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u));
      const double ds = (best.beta1 - best.beta2) * s * (1.0 - s);
      jac(i, 0) = s;
      jac(i, 1) = 1.0 - s;
      jac(i, 2) = -ds / a4;
      jac(i, 3) = -ds * u / a4 * sign4;
      resid(i) = target[i] - ((best.beta1 - best.beta2) * s + best.beta2);
    }
    const Eigen::Matrix4d jtj = jac.transpose() * jac;
    const Eigen::Vector4d jtr = jac.transpose() * resid;

    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::Matrix4d damped = jtj;
      for (int d = 0; d < 4; ++d) damped(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Eigen::Vector4d step = damped.ldlt().solve(jtr);
      LogisticFit trial = best;
      trial.beta1 += step(0);
      trial.beta2 += step(1);
      trial.beta3 += step(2);
      trial.beta4 += step(3);
      if (!std::isfinite(step.sum()) || trial.beta4 == 0.0) {
        lambda *= 10.0;
        continue;
      }
      trial.sse = detail::logistic_sse(trial, pred, target);
      if (trial.sse < best.sse) {
        const double rel_change = (best.sse - trial.sse) / best.sse;
        best.beta1 = trial.beta1;
        best.beta2 = trial.beta2;
        best.beta3 = trial.beta3;
        best.beta4 = trial.beta4;
        best.sse = trial.sse;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (rel_change < 1e-10) best.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    // No improving step under any damping: a stationary point.
    if (!accepted) best.converged = true;
    if (best.sse <= 1e-30 * static_cast<double>(n)) best.converged = true;
    if (best.converged) break;
  }
  return best;
}

/// Pearson linear correlation.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  detail::require_same_length(a, b, 2, "pearson");
  const double ma = detail::mean(a), mb = detail::mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DegenerateInputError("pearson: zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// PLCC; with `with_fit` the predictions first pass through a fitted logistic.
inline double plcc(std::span<const double> pred, std::span<const double> target, bool with_fit = true) {
  if (!with_fit) return pearson(pred, target);
  const auto fitted = fit_logistic(pred, target).apply(pred);
  return pearson(fitted, target);
}

/// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> fractional_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start + 1;
    while (end < order.size() && v[order[end]] == v[order[start]]) ++end;
    const double rank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t k = start; k < end; ++k) ranks[order[k]] = rank;
    start = end;
  }
  return ranks;
}

/// Spearman rank-order correlation (Pearson correlation of midranks).
inline double srcc(std::span<const double> pred, std::span<const double> target) {
  detail::require_same_length(pred, target, 2, "srcc");
  const auto rp = fractional_ranks(pred);
  const auto rt = fractional_ranks(target);
  try {
    return pearson(rp, rt);
  } catch (const DegenerateInputError&) {
    throw DegenerateInputError("srcc: all values tied");
  }
}

/// One 2AFC item. Scores and human values share one orientation: the smaller
/// value marks the candidate judged closer to the reference. With error
/// scores and a preference probability p_AB for A, pass p_a = 1 - p_AB and
/// p_b = p_AB.
struct Judgment {
  double score_a = 0.0;
  double score_b = 0.0;
  double p_a = 0.5;
  double p_b = 0.5;
};

/// Agreement between binary model and human preferences, averaged over items:
/// 1 when strict preferences match, 0.5 when the model scores tie, 0
/// otherwise. With `weighted` the agreement is weighted by the human share
/// instead of thresholded.
inline double score_2afc(std::span<const Judgment> items, bool weighted = false) {
  if (items.empty()) throw ArgumentError("score_2afc: no judgments");
  double total = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& j = items[i];
    if (std::abs(j.p_a + j.p_b - 1.0) > 1e-9) {
      throw ArgumentError("score_2afc: item " + std::to_string(i) + " has p_a + p_b != 1");
    }
    if (j.score_a == j.score_b) {
      total += 0.5;
    } else if (weighted) {
      total += j.score_a < j.score_b ? j.p_b : j.p_a;
    } else {
      total += (j.score_a < j.score_b && j.p_a < j.p_b) || (j.score_a > j.score_b && j.p_a > j.p_b) ? 1.0 : 0.0;
    }
  }
  return total / static_cast<double>(items.size());
}

struct EvalReport {
  double plcc = 0.0;
  double srcc = 0.0;
  LogisticFit fit;
  std::size_t n_samples = 0;
  std::optional<double> twoafc;
};

}  // namespace topiq
