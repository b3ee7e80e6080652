#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "topiq/attention.hpp"
#include "topiq/backbone.hpp"
#include "topiq/glp.hpp"

namespace topiq {

enum class HeadKind { scalar, distribution };

struct ModelConfig {
  IqaMode mode = IqaMode::full_reference;
  BackboneConfig backbone;
  std::size_t dim = 0;  // 0 selects the mode default: 256 FR, 512 NR
  HeadKind head = HeadKind::scalar;
  std::size_t bins = 10;
  std::size_t heads = 1;
  std::size_t glp_hidden = 64;
  std::size_t input_height = 384;  // sets the position-encoding grid
  std::size_t input_width = 384;
  std::uint64_t seed = 0;

  std::size_t levels() const { return backbone.levels; }
  std::size_t token_dim() const { return dim != 0 ? dim : (mode == IqaMode::full_reference ? 256 : 512); }
  std::size_t outputs() const { return head == HeadKind::scalar ? 1 : bins; }
  std::size_t grid_height() const { return input_height >> levels(); }
  std::size_t grid_width() const { return input_width >> levels(); }

  void validate() const {
    backbone.validate();
    const std::size_t factor = std::size_t{1} << levels();
    if (input_height == 0 || input_width == 0 || input_height % factor || input_width % factor) {
      throw ArgumentError("model: input size must be a positive multiple of " + std::to_string(factor));
    }
    if (heads == 0 || token_dim() % heads) throw ArgumentError("model: head count must divide the token width");
    if (head == HeadKind::distribution && bins < 2) throw ArgumentError("model: distribution head needs >= 2 bins");
    if (glp_hidden == 0) throw ArgumentError("model: glp_hidden must be positive");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"mode", c.mode == IqaMode::full_reference ? "fr" : "nr"},
          {"levels", c.backbone.levels},
          {"channels", c.backbone.channels},
          {"blocks", c.backbone.blocks},
          {"freeze_backbone", c.backbone.freeze},
          {"dim", c.token_dim()},
          {"head", c.head == HeadKind::scalar ? "scalar" : "distribution"},
          {"bins", c.bins},
          {"heads", c.heads},
          {"glp_hidden", c.glp_hidden},
          {"input_height", c.input_height},
          {"input_width", c.input_width},
          {"seed", c.seed}};
}

/// Reads the model fields of a flat JSON object; absent keys keep defaults.
/// Unrelated keys (training fields) are ignored.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("mode")) {
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "fr") c.mode = IqaMode::full_reference;
    else if (mode == "nr") c.mode = IqaMode::no_reference;
    else throw ArgumentError("config: mode must be \"fr\" or \"nr\", got \"" + mode + "\"");
  }
  if (j.contains("levels")) {
    c.backbone.levels = j.at("levels").get<std::size_t>();
    if (!j.contains("channels")) {
      BackboneConfig defaults;
      c.backbone.channels.assign(defaults.channels.begin(),
                                 defaults.channels.begin() + std::min(c.backbone.levels, defaults.channels.size()));
    }
  }
  if (j.contains("channels")) c.backbone.channels = j.at("channels").get<std::vector<std::size_t>>();
  if (j.contains("blocks")) c.backbone.blocks = j.at("blocks").get<std::size_t>();
  if (j.contains("freeze_backbone")) c.backbone.freeze = j.at("freeze_backbone").get<bool>();
  if (j.contains("dim")) c.dim = j.at("dim").get<std::size_t>();
  if (j.contains("head")) {
    const auto head = j.at("head").get<std::string>();
    if (head == "scalar") c.head = HeadKind::scalar;
    else if (head == "distribution") c.head = HeadKind::distribution;
    else throw ArgumentError("config: head must be \"scalar\" or \"distribution\", got \"" + head + "\"");
  }
  if (j.contains("bins")) c.bins = j.at("bins").get<std::size_t>();
  if (j.contains("heads")) c.heads = j.at("heads").get<std::size_t>();
  if (j.contains("glp_hidden")) c.glp_hidden = j.at("glp_hidden").get<std::size_t>();
  if (j.contains("input_height")) c.input_height = j.at("input_height").get<std::size_t>();
  if (j.contains("input_width")) c.input_width = j.at("input_width").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

/// Intermediate state captured during a forward pass, for inspection and
/// attention-map export. Indexed by level, finest first.
template <class T>
struct ForwardTrace {
  std::vector<Tensor<T>> masks;          // GLP gates, 1 x H_i x W_i
  std::vector<Tensor<T>> csa_weights;    // one per adjacent pair
  std::vector<double> max_feature_diff;  // max |F_d - F_r| per level (FR only)
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
};

/// Min/max of the raw labels used to map MOS onto [0, 1].
struct LabelRange {
  double min = 0.0;
  double max = 1.0;

  double normalize(double v) const { return max > min ? (v - min) / (max - min) : 0.5; }
  double denormalize(double v) const { return min + v * (max - min); }
};

/// Coarse-to-fine attention network: backbone pyramid, gated local pooling
/// per level, shared position encoding, per-level self-attention, the
/// cross-scale chain and the score head.
template <class T>
class Model {
 public:
  Model() = default;

  static Model create(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    Rng rng(cfg.seed);
    const std::size_t d = cfg.token_dim();
    m.backbone_ = Backbone<T>::create(cfg.backbone, rng);
    for (std::size_t i = 0; i < cfg.levels(); ++i)
      m.glp_.push_back(GlpLevel<T>::create(cfg.mode, cfg.backbone.channels[i], cfg.glp_hidden, d, rng));
    m.position_ = PositionEncoding<T>::create(cfg.grid_height(), cfg.grid_width(), d, rng);
    for (std::size_t i = 0; i < cfg.levels(); ++i) m.self_attention_.push_back(AttentionBlock<T>::create(d, cfg.heads, rng));
    for (std::size_t i = 0; i + 1 < cfg.levels(); ++i)
      m.cross_attention_.push_back(AttentionBlock<T>::create(d, cfg.heads, rng));
    m.head_ = ScoreHead<T>::create(d, cfg.outputs(), cfg.head == HeadKind::distribution, cfg.heads, rng);
    return m;
  }

  const ModelConfig& config() const { return cfg_; }

  /// Raw head output (K values) for a distorted/reference pair.
  Tensor<T> forward_fr(const Tensor<T>& dist, const Tensor<T>& ref, ForwardTrace<T>* trace = nullptr,
                       GlpOptions glp_opts = {}) const {
    if (cfg_.mode != IqaMode::full_reference) throw ArgumentError("model: forward_fr on a no-reference model");
    auto [pd, pr] = backbone_.extract_pair(dist, ref);
    std::vector<PooledFeature<T>> pooled;
    const std::size_t n = cfg_.levels();
    for (std::size_t i = 1; i <= n; ++i) {
      auto out = glp_[i - 1].forward_fr(pd.level(i), pr.level(i), pooling_window(i, n), glp_opts);
      if (trace) {
        trace->masks.push_back(out.mask.detach());
        double mx = 0.0;
        for (std::size_t k = 0; k < pd.level(i).numel(); ++k)
          mx = std::max(mx, static_cast<double>(std::abs(pd.level(i)[k] - pr.level(i)[k])));
        trace->max_feature_diff.push_back(mx);
      }
      pooled.push_back(std::move(out.feature));
    }
    return attend(pooled, trace);
  }

  Tensor<T> forward_nr(const Tensor<T>& image, ForwardTrace<T>* trace = nullptr, GlpOptions glp_opts = {}) const {
    if (cfg_.mode != IqaMode::no_reference) throw ArgumentError("model: forward_nr on a full-reference model");
    auto pyramid = backbone_.extract(image);
    std::vector<PooledFeature<T>> pooled;
    const std::size_t n = cfg_.levels();
    for (std::size_t i = 1; i <= n; ++i) {
      auto out = glp_[i - 1].forward_nr(pyramid.level(i), pooling_window(i, n), glp_opts);
      if (trace) trace->masks.push_back(out.mask.detach());
      pooled.push_back(std::move(out.feature));
    }
    return attend(pooled, trace);
  }

  /// Dispatches on mode; `ref` is ignored by no-reference models.
  Tensor<T> forward(const Tensor<T>& dist, const Tensor<T>* ref, ForwardTrace<T>* trace = nullptr) const {
    if (cfg_.mode == IqaMode::full_reference) {
      if (!ref) throw ArgumentError("model: full-reference model needs a reference image");
      return forward_fr(dist, *ref, trace);
    }
    return forward_nr(dist, trace);
  }

  /// Scalar from a head output; distributions reduce to their expectation
  /// over bins 1..K.
  static double to_score(const Tensor<T>& output) {
    if (output.numel() == 1) return static_cast<double>(output[0]);
    double expectation = 0.0;
    for (std::size_t k = 0; k < output.numel(); ++k) expectation += static_cast<double>(k + 1) * output[k];
    return expectation;
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    backbone_.collect(out);
    for (std::size_t i = 0; i < glp_.size(); ++i) glp_[i].collect(out, "glp.level" + std::to_string(i + 1));
    out.push_back({"position", position_.table, false});
    for (std::size_t i = 0; i < self_attention_.size(); ++i)
      self_attention_[i].collect(out, "sa.level" + std::to_string(i + 1));
    for (std::size_t i = 0; i < cross_attention_.size(); ++i)
      cross_attention_[i].collect(out, "csa.level" + std::to_string(i + 1));
    head_.collect(out, "head");
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : parameters()) total += p.tensor.numel();
    return total;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  const Backbone<T>& backbone() const { return backbone_; }
  GlpLevel<T>& glp(std::size_t level) { return glp_.at(level - 1); }
  PositionEncoding<T>& position() { return position_; }
  AttentionBlock<T>& self_attention(std::size_t level) { return self_attention_.at(level - 1); }
  AttentionBlock<T>& cross_attention(std::size_t level) { return cross_attention_.at(level - 1); }
  ScoreHead<T>& head() { return head_; }

  std::optional<LabelRange> label_range;

 private:
  Tensor<T> attend(const std::vector<PooledFeature<T>>& pooled, ForwardTrace<T>* trace) const {
    const auto& grid = pooled.front();
    auto levels = add_position_encoding(pooled, position_.resized(grid.height, grid.width));
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = sa_block(levels[i], self_attention_[i]);
    std::vector<Tensor<T>> weights;
    auto fused = csa_chain(levels, cross_attention_, trace ? &weights : nullptr);
    if (trace) {
      for (auto& w : weights) trace->csa_weights.push_back(w.detach());
      trace->grid_height = grid.height;
      trace->grid_width = grid.width;
    }
    return head_(fused);
  }

  ModelConfig cfg_;
  Backbone<T> backbone_;
  std::vector<GlpLevel<T>> glp_;
  PositionEncoding<T> position_;
  std::vector<AttentionBlock<T>> self_attention_;
  std::vector<AttentionBlock<T>> cross_attention_;
  ScoreHead<T> head_;
};

}  // namespace topiq
