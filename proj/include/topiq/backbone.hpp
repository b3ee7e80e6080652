#pragma once

#include <string>
#include <utility>
#include <vector>

#include "topiq/layers.hpp"
#include "topiq/ops.hpp"

namespace topiq {

struct BackboneConfig {
  std::size_t levels = 5;
  std::vector<std::size_t> channels{16, 32, 64, 96, 128};
  std::size_t blocks = 1;  // residual 3x3 convolutions per level
  bool freeze = false;

  void validate() const {
    if (levels < 2) throw ArgumentError("backbone: level count must be >= 2");
    if (channels.size() != levels) {
      throw ArgumentError("backbone: " + std::to_string(channels.size()) + " channel widths for " +
                          std::to_string(levels) + " levels");
    }
    for (auto c : channels) {
      if (c == 0) throw ArgumentError("backbone: channel widths must be positive");
    }
  }
};

/// Per-level feature maps F_1..F_n; level i (1-based) has spatial extent H/2^i.
template <class T>
struct FeaturePyramid {
  std::vector<Tensor<T>> levels;

  std::size_t size() const { return levels.size(); }
  const Tensor<T>& level(std::size_t i) const { return levels.at(i - 1); }
};

/// Small BN-free convolutional feature extractor. Each level halves the
/// resolution with a stride-2 convolution and then applies residual
/// GELU convolutions.
template <class T>
class Backbone {
 public:
  Backbone() = default;

  static Backbone create(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone net;
    net.cfg_ = cfg;
    std::size_t cin = 3;
    for (std::size_t i = 0; i < cfg.levels; ++i) {
      Stage stage;
      const std::size_t c = cfg.channels[i];
      stage.down = Conv2d<T>::create(cin, c, 3, 2, 1, rng);
      for (std::size_t b = 0; b < cfg.blocks; ++b) stage.blocks.push_back(Conv2d<T>::create(c, c, 3, 1, 1, rng));
      net.stages_.push_back(std::move(stage));
      cin = c;
    }
    if (cfg.freeze) {
      ParamList<T> params;
      net.collect(params);
      for (auto& p : params) p.tensor.set_requires_grad(false);
    }
    return net;
  }

  const BackboneConfig& config() const { return cfg_; }

  FeaturePyramid<T> extract(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) {
      throw ArgumentError("backbone: expected 3 x H x W image, got " + shape_str(image.shape()));
    }
    const std::size_t factor = std::size_t{1} << cfg_.levels;
    if (image.dim(1) % factor != 0 || image.dim(2) % factor != 0) {
      throw ArgumentError("backbone: image extents " + shape_str(image.shape()) + " not divisible by " +
                          std::to_string(factor));
    }
    FeaturePyramid<T> pyramid;
    Tensor<T> x = image;
    for (const auto& stage : stages_) {
      x = ops::gelu(stage.down(x));
      for (const auto& block : stage.blocks) x = ops::add(x, ops::gelu(block(x)));
      pyramid.levels.push_back(x);
    }
    return pyramid;
  }

  /// Both pyramids come from the same weights.
  std::pair<FeaturePyramid<T>, FeaturePyramid<T>> extract_pair(const Tensor<T>& dist, const Tensor<T>& ref) const {
    if (dist.shape() != ref.shape()) {
      throw ArgumentError("backbone: distorted " + shape_str(dist.shape()) + " vs reference " +
                          shape_str(ref.shape()));
    }
    return {extract(dist), extract(ref)};
  }

  void collect(ParamList<T>& out, const std::string& prefix = "backbone") const {
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const std::string level = prefix + ".level" + std::to_string(i + 1);
      stages_[i].down.collect(out, level + ".down");
      for (std::size_t b = 0; b < stages_[i].blocks.size(); ++b)
        stages_[i].blocks[b].collect(out, level + ".block" + std::to_string(b + 1));
    }
  }

 private:
  struct Stage {
    Conv2d<T> down;
    std::vector<Conv2d<T>> blocks;
  };

  BackboneConfig cfg_;
  std::vector<Stage> stages_;
};

}  // namespace topiq
