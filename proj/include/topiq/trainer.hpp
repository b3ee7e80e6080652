#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "topiq/data.hpp"
#include "topiq/losses.hpp"
#include "topiq/metrics.hpp"
#include "topiq/model.hpp"

namespace topiq {

struct TrainConfig {
  double lr = 1e-4;  // eta_max
  double weight_decay = 1e-5;
  std::size_t t_max = 50;
  double eta_min = 0.0;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 8;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  bool restart = true;  // false: hold eta_min after the first half period
  std::size_t crop = 0;  // square training crop, 0 = full image
  double hflip = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr >= 0.0) || !(eta_min >= 0.0)) throw ArgumentError("train config: learning rates must be nonnegative");
    if (eta_min > lr) throw ArgumentError("train config: eta_min exceeds lr");
    if (t_max == 0) throw ArgumentError("train config: t_max must be >= 1");
    if (patience == 0) throw ArgumentError("train config: patience must be >= 1");
    if (batch_size == 0) throw ArgumentError("train config: batch_size must be >= 1");
    if (max_epochs == 0) throw ArgumentError("train config: max_epochs must be >= 1");
    if (weight_decay < 0.0) throw ArgumentError("train config: weight_decay must be nonnegative");
  }
};

/// Defaults per mode: 1e-4 for full-reference, 3e-5 for no-reference.
inline TrainConfig default_train_config(IqaMode mode) {
  TrainConfig c;
  c.lr = mode == IqaMode::full_reference ? 1e-4 : 3e-5;
  return c;
}

/// Reads the training keys of a flat JSON config; unknown keys are left to
/// the model config reader.
inline TrainConfig train_config_from_json(const nlohmann::json& j, IqaMode mode) {
  TrainConfig c = default_train_config(mode);
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("lr", c.lr);
  get("weight_decay", c.weight_decay);
  get("t_max", c.t_max);
  get("eta_min", c.eta_min);
  get("max_epochs", c.max_epochs);
  get("batch_size", c.batch_size);
  get("patience", c.patience);
  get("train_seed", c.seed);
  get("restart", c.restart);
  get("crop", c.crop);
  get("hflip", c.hflip);
  c.validate();
  return c;
}

/// eta_min + (eta_max - eta_min)(1 + cos(pi t / T_max)) / 2. The cosine
/// keeps running past T_max (back up to eta_max at 2 T_max); without
/// `restart` it holds eta_min from T_max on.
inline double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
  const std::size_t t = cfg.restart ? epoch % (2 * cfg.t_max) : std::min(epoch, cfg.t_max);
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(cfg.t_max);
  return cfg.eta_min + 0.5 * (cfg.lr - cfg.eta_min) * (1.0 + std::cos(phase));
}

/// Adam with decoupled weight decay. Parameters marked decay=false (biases,
/// position encoding) and frozen tensors are not shrunk; frozen tensors are
/// not updated at all.
template <class T>
class AdamW {
 public:
  AdamW(ParamList<T> params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void step(double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const T shrink = static_cast<T>(1.0 - lr * wd_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.tensor.requires_grad()) continue;
      auto values = p.tensor.mutable_data();
      const bool has_grad = p.tensor.has_grad();
      const auto grad = has_grad ? p.tensor.grad() : std::span<const T>{};
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        if (p.decay) values[i] *= shrink;
        values[i] -= static_cast<T>(update);
      }
    }
  }

  std::size_t steps() const { return steps_; }

 private:
  ParamList<T> params_;
  double wd_, beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_plcc = 0.0;
  double val_srcc = 0.0;
  std::size_t best_epoch = 0;
  double best_val_srcc = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  std::string to_csv() const {
    std::string out = "epoch,lr,train_loss,val_plcc,val_srcc,best_epoch,best_val_srcc\n";
    char buf[512];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%zu,%.17g\n", e.epoch, e.lr, e.train_loss,
                    e.val_plcc, e.val_srcc, e.best_epoch, e.best_val_srcc);
      out += buf;
    }
    return out;
  }
};

namespace detail {

template <class T>
Tensor<T> cast_image(const Image& img) {
  if constexpr (std::is_same_v<T, float>) {
    return img;
  } else {
    std::vector<T> values(img.data().begin(), img.data().end());
    return Tensor<T>(img.shape(), std::move(values));
  }
}

// Which model mode and head a manifest kind needs.
template <class T>
void check_compatible(const Model<T>& model, ManifestKind kind, std::size_t bins, const char* who) {
  const auto& cfg = model.config();
  const bool fr = kind == ManifestKind::mos_fr || kind == ManifestKind::pairwise;
  if (fr != (cfg.mode == IqaMode::full_reference)) {
    throw ArgumentError(std::string(who) + ": " + kind_name(kind) + " data needs a " +
                        (fr ? "full-reference" : "no-reference") + " model");
  }
  if (kind == ManifestKind::distribution) {
    if (cfg.head != HeadKind::distribution || cfg.bins != bins) {
      throw ArgumentError(std::string(who) + ": distribution data with " + std::to_string(bins) +
                          " bins needs a distribution head with as many bins");
    }
  } else if (cfg.head != HeadKind::scalar) {
    throw ArgumentError(std::string(who) + ": " + kind_name(kind) + " data needs a scalar head");
  }
}

inline std::size_t dataset_bins(const Dataset& ds) {
  return ds.samples.empty() ? 0 : ds.samples.front().distribution.size();
}

}  // namespace detail

/// Head outputs for one sample. 2AFC samples give two outputs, (ref, A) and
/// (ref, B), computed with the same parameter state.
template <class T>
std::vector<Tensor<T>> forward_sample(const Model<T>& model, ManifestKind kind, const std::vector<Image>& images) {
  auto img = [&](std::size_t i) { return detail::cast_image<T>(images.at(i)); };
  switch (kind) {
    case ManifestKind::mos_fr: return {model.forward_fr(img(0), img(1))};
    case ManifestKind::mos_nr:
    case ManifestKind::distribution: return {model.forward_nr(img(0))};
    case ManifestKind::pairwise: {
      const auto ref = img(0);
      return {model.forward_fr(img(1), ref), model.forward_fr(img(2), ref)};
    }
  }
  return {};
}

/// Scalar prediction per sample: the score (bin expectation for
/// distributions), or the Bradley-Terry preference for A on 2AFC samples.
template <class T>
std::vector<double> predict(const Model<T>& model, const Dataset& ds) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples) {
    const auto outputs = forward_sample(model, ds.kind, s.images);
    if (ds.kind == ManifestKind::pairwise) {
      out.push_back(bt_probability(Model<T>::to_score(outputs[0]), Model<T>::to_score(outputs[1])));
    } else {
      out.push_back(Model<T>::to_score(outputs[0]));
    }
  }
  return out;
}

/// Raw per-candidate error scores of a 2AFC dataset, for score_2afc.
template <class T>
std::vector<Judgment> judgments(const Model<T>& model, const Dataset& ds) {
  if (ds.kind != ManifestKind::pairwise) throw ArgumentError("judgments: not a 2AFC dataset");
  NoGradGuard no_grad;
  std::vector<Judgment> out;
  for (const auto& s : ds.samples) {
    const auto outputs = forward_sample(model, ds.kind, s.images);
    out.push_back({Model<T>::to_score(outputs[0]), Model<T>::to_score(outputs[1]), 1.0 - s.target, s.target});
  }
  return out;
}

/// PLCC (after the logistic fit) and SRCC of predictions against targets,
/// plus the 2AFC score when judgments are given.
inline EvalReport evaluate_scores(std::span<const double> pred, std::span<const double> target,
                                  std::optional<std::span<const Judgment>> items = std::nullopt) {
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!std::isfinite(pred[i])) throw NumericError("evaluate: non-finite prediction for sample " + std::to_string(i + 1));
  }
  EvalReport r;
  r.n_samples = pred.size();
  if (items) {
    r.twoafc = score_2afc(*items);
    // correlations against p_AB are undefined for tiny or unanimous sets
    try {
      r.srcc = srcc(pred, target);
      r.fit = fit_logistic(pred, target);
      r.plcc = pearson(r.fit.apply(pred), target);
    } catch (const ArgumentError&) {
      r.plcc = r.srcc = std::numeric_limits<double>::quiet_NaN();
      r.fit = LogisticFit{};
    }
    return r;
  }
  r.fit = fit_logistic(pred, target);
  r.plcc = pearson(r.fit.apply(pred), target);
  r.srcc = srcc(pred, target);
  return r;
}

template <class T>
EvalReport evaluate(const Model<T>& model, const Dataset& ds) {
  detail::check_compatible(model, ds.kind, detail::dataset_bins(ds), "evaluate");
  if (ds.size() == 0) throw ArgumentError("evaluate: empty dataset");
  const auto pred = predict(model, ds);
  std::vector<double> target;
  for (const auto& s : ds.samples) target.push_back(s.target);
  if (ds.kind == ManifestKind::pairwise) {
    const auto items = judgments(model, ds);
    return evaluate_scores(pred, target, std::span<const Judgment>(items));
  }
  return evaluate_scores(pred, target);
}

/// Flat "key=value" lines, one per statistic.
inline std::string format_report(const EvalReport& r) {
  std::string out;
  char buf[128];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key, v);
    out += buf;
  };
  out += "n_samples=" + std::to_string(r.n_samples) + "\n";
  line("plcc", r.plcc);
  line("srcc", r.srcc);
  if (r.twoafc) line("score_2afc", *r.twoafc);
  line("logistic_beta1", r.fit.beta1);
  line("logistic_beta2", r.fit.beta2);
  line("logistic_beta3", r.fit.beta3);
  line("logistic_beta4", r.fit.beta4);
  out += std::string("logistic_converged=") + (r.fit.converged ? "1" : "0") + "\n";
  return out;
}

/// Optional per-epoch callback, e.g. for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains with AdamW and the cosine schedule, validates after each epoch and
/// keeps the parameters of the best validation SRCC, which are loaded back
/// into `model` on return. For 2AFC data the validation statistic is SRCC
/// between predicted and human preference probabilities.
template <class T>
TrainLog train(Model<T>& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
               const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw ArgumentError("train: empty training or validation set");
  if (train_set.kind != val_set.kind) throw ArgumentError("train: training and validation sets differ in kind");
  const ManifestKind kind = train_set.kind;
  detail::check_compatible(model, kind, detail::dataset_bins(train_set), "train");
  model.label_range = train_set.label_range;

  auto params = model.parameters();
  AdamW<T> optimizer(params, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
  AugmentConfig aug;
  aug.crop_height = aug.crop_width = cfg.crop;
  aug.hflip_probability = cfg.hflip;
  aug.seed = cfg.seed ^ 0x9e3779b97f4a7c15ull;

  std::vector<std::vector<T>> best_values;
  auto snapshot = [&] {
    best_values.clear();
    for (const auto& p : params) best_values.emplace_back(p.tensor.values());
  };

  std::vector<double> val_target;
  for (const auto& s : val_set.samples) val_target.push_back(s.target);

  TrainLog log;
  double best_srcc = 0.0;
  std::size_t since_best = 0;
  const std::size_t n = train_set.size();
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto shuffle_rng = substream(cfg.seed, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      model.zero_grad();
      std::vector<Tensor<T>> out_a, out_b;
      std::vector<T> targets;
      Tensor<T> loss;
      std::vector<Tensor<T>> emd_terms;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train_set.samples[order[k]];
        const auto images = augment(s.images, aug, epoch * n + order[k]);
        auto outputs = forward_sample(model, kind, images);
        if (kind == ManifestKind::distribution) {
          const std::size_t bins = s.distribution.size();
          std::vector<T> p(s.distribution.begin(), s.distribution.end());
          emd_terms.push_back(emd_loss(outputs[0], Tensor<T>(Shape{bins}, std::move(p))));
        } else {
          out_a.push_back(outputs[0]);
          if (kind == ManifestKind::pairwise) out_b.push_back(outputs[1]);
          targets.push_back(static_cast<T>(s.target));
        }
      }
      const std::size_t count = end - start;
      if (kind == ManifestKind::distribution) {
        loss = ops::scale(ops::sum(ops::concat(emd_terms)), static_cast<T>(1.0 / static_cast<double>(count)));
      } else {
        Tensor<T> target(Shape{count}, targets);
        if (kind == ManifestKind::pairwise) {
          loss = loss_2afc(ops::concat(out_a), ops::concat(out_b), target);
        } else {
          loss = mos_mse(ops::concat(out_a), target);
        }
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + " (samples " + std::to_string(start + 1) + "-" +
                           std::to_string(end) + " of the shuffled order)");
      }
      backward(loss);
      optimizer.step(lr);
      loss_total += value;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_total / static_cast<double>(batches);
    const auto pred = predict(model, val_set);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (!std::isfinite(pred[i])) {
        throw NumericError("train: non-finite validation prediction at epoch " + std::to_string(epoch));
      }
    }
    try {
      rec.val_srcc = srcc(pred, val_target);
      rec.val_plcc = pred.size() >= 5 ? plcc(pred, val_target, true) : pearson(pred, val_target);
    } catch (const ArgumentError&) {
      // constant predictions or too few samples: no correlation signal
      rec.val_srcc = rec.val_plcc = 0.0;
    }
    if (epoch == 0 || rec.val_srcc > best_srcc) {
      best_srcc = rec.val_srcc;
      log.best_epoch = epoch;
      since_best = 0;
      snapshot();
    } else {
      ++since_best;
    }
    rec.best_epoch = log.best_epoch;
    rec.best_val_srcc = best_srcc;
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (since_best >= cfg.patience) {
      log.stopped_early = true;
      break;
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params[k].tensor.mutable_data();
    std::copy(best_values[k].begin(), best_values[k].end(), dst.begin());
  }
  return log;
}

}  // namespace topiq
