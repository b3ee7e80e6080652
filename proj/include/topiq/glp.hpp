#pragma once

#include <string>

#include "topiq/layers.hpp"
#include "topiq/ops.hpp"

namespace topiq {

enum class IqaMode { full_reference, no_reference };

/// Token grid G_i: (height*width) x D tokens with their spatial geometry.
template <class T>
struct PooledFeature {
  Tensor<T> tokens;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return tokens.dim(0); }
  std::size_t dim() const { return tokens.dim(1); }
};

template <class T>
struct GlpOutput {
  PooledFeature<T> feature;
  Tensor<T> mask;  // 1 x H_i x W_i, sigmoid gate before multiplication
};

struct GlpOptions {
  bool bypass_mask = false;  // gate fixed to 1
  // Ablation toggle: no gate, bilinear resize to the coarse grid instead of
  // window pooling.
  bool resize_only = false;
};

/// Pooling window that brings level `level` (1-based) of `levels` down to the
/// coarsest grid.
inline std::size_t pooling_window(std::size_t level, std::size_t levels) {
  if (level < 1 || level > levels) throw ArgumentError("glp: level " + std::to_string(level) + " out of range");
  return std::size_t{1} << (levels - level);
}

/// Gated local pooling for one pyramid level: a single-channel sigmoid mask
/// from a bottleneck block selects features, which are then window-pooled to
/// the coarsest grid and linearly reduced to D per token.
template <class T>
class GlpLevel {
 public:
  GlpLevel() = default;

  static GlpLevel create(IqaMode mode, std::size_t channels, std::size_t hidden, std::size_t dim, Rng& rng) {
    GlpLevel g;
    g.mode_ = mode;
    g.phi_reduce_ = Conv2d<T>::create(channels, hidden, 1, 1, 0, rng);
    g.phi_process_ = Conv2d<T>::create(hidden, hidden, 3, 1, 1, rng);
    g.phi_project_ = Conv2d<T>::create(hidden, 1, 1, 1, 0, rng);
    if (mode == IqaMode::no_reference) {
      g.feature_map_ = Conv2d<T>::create(channels, channels, 1, 1, 0, rng);
      g.reducer_ = Linear<T>::create(channels, dim, rng);
    } else {
      g.reducer_ = Linear<T>::create(3 * channels, dim, rng);
    }
    return g;
  }

  IqaMode mode() const { return mode_; }

  /// sigmoid(phi(x)) for a C x H x W input.
  Tensor<T> gate(const Tensor<T>& x) const {
    Tensor<T> h = ops::gelu(phi_reduce_(x));
    h = ops::gelu(phi_process_(h));
    return ops::sigmoid(phi_project_(h));
  }

  GlpOutput<T> forward_fr(const Tensor<T>& dist, const Tensor<T>& ref, std::size_t window,
                          GlpOptions opts = {}) const {
    require_mode(IqaMode::full_reference);
    if (dist.shape() != ref.shape()) {
      throw ArgumentError("glp: distorted " + shape_str(dist.shape()) + " vs reference " + shape_str(ref.shape()));
    }
    Tensor<T> diff = ops::abs(ops::sub(dist, ref));
    Tensor<T> mask = gate(diff);
    Tensor<T> features = ops::concat<T>({dist, ref, diff});
    return finish(features, mask, window, opts);
  }

  GlpOutput<T> forward_nr(const Tensor<T>& feat, std::size_t window, GlpOptions opts = {}) const {
    require_mode(IqaMode::no_reference);
    Tensor<T> mask = gate(feat);
    Tensor<T> features = ops::relu(feature_map_(feat));
    return finish(features, mask, window, opts);
  }

  Conv2d<T>& feature_map() { return feature_map_; }
  Linear<T>& reducer() { return reducer_; }
  Conv2d<T>& mask_head() { return phi_project_; }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    phi_reduce_.collect(out, prefix + ".phi.reduce");
    phi_process_.collect(out, prefix + ".phi.process");
    phi_project_.collect(out, prefix + ".phi.project");
    if (mode_ == IqaMode::no_reference) feature_map_.collect(out, prefix + ".feature");
    reducer_.collect(out, prefix + ".reduce");
  }

 private:
  void require_mode(IqaMode expected) const {
    if (mode_ != expected) throw ArgumentError("glp: level built for the other mode");
  }

  // gate -> pool -> reduce
  GlpOutput<T> finish(const Tensor<T>& features, const Tensor<T>& mask, std::size_t window,
                      const GlpOptions& opts) const {
    if (features.dim(1) % window != 0 || features.dim(2) % window != 0) {
      throw ArgumentError("glp: window " + std::to_string(window) + " does not divide " + shape_str(features.shape()));
    }
    Tensor<T> pooled;
    if (opts.resize_only) {
      pooled = ops::bilinear_resize(features, features.dim(1) / window, features.dim(2) / window);
    } else {
      Tensor<T> gated = opts.bypass_mask ? features : ops::mul_channel_mask(features, mask);
      pooled = ops::window_avg_pool(gated, window);
    }
    PooledFeature<T> out{reducer_(ops::to_tokens(pooled)), pooled.dim(1), pooled.dim(2)};
    return {std::move(out), mask};
  }

  IqaMode mode_ = IqaMode::full_reference;
  Conv2d<T> phi_reduce_, phi_process_, phi_project_;
  Conv2d<T> feature_map_;  // W_f, no-reference only
  Linear<T> reducer_;
};

}  // namespace topiq
