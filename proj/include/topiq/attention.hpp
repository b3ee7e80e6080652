#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "topiq/glp.hpp"
#include "topiq/layers.hpp"
#include "topiq/ops.hpp"

namespace topiq {

template <class T>
struct AttentionResult {
  Tensor<T> output;   // N_q x d_v
  Tensor<T> weights;  // N_q x N_v, row-stochastic (mean over heads when heads > 1)
};

/// softmax(Q K^T / sqrt(d_k)) V, optionally split into `heads` column groups.
template <class T>
AttentionResult<T> attn(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads = 1) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ArgumentError("attn: Q, K, V must be matrices");
  if (q.dim(1) != k.dim(1)) {
    throw ArgumentError("attn: query width " + std::to_string(q.dim(1)) + " vs key width " + std::to_string(k.dim(1)));
  }
  if (k.dim(0) != v.dim(0)) {
    throw ArgumentError("attn: " + std::to_string(k.dim(0)) + " keys vs " + std::to_string(v.dim(0)) + " values");
  }
  if (heads == 0 || q.dim(1) % heads != 0 || v.dim(1) % heads != 0) {
    throw ArgumentError("attn: head count " + std::to_string(heads) + " does not divide the feature widths");
  }
  const std::size_t dk = q.dim(1) / heads, dv = v.dim(1) / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));

  if (heads == 1) {
    Tensor<T> w = ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt), 1);
    return {ops::matmul(w, v), w};
  }
  std::vector<Tensor<T>> outputs;
  std::vector<T> mean_weights(q.dim(0) * k.dim(0), T(0));
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> qh = ops::slice_cols(q, h * dk, dk);
    Tensor<T> kh = ops::slice_cols(k, h * dk, dk);
    Tensor<T> vh = ops::slice_cols(v, h * dv, dv);
    Tensor<T> w = ops::softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt), 1);
    for (std::size_t i = 0; i < mean_weights.size(); ++i) mean_weights[i] += w[i] / static_cast<T>(heads);
    outputs.push_back(ops::matmul(w, vh));
  }
  return {ops::concat_cols(outputs), Tensor<T>({q.dim(0), k.dim(0)}, std::move(mean_weights))};
}

/// Projected attention plus residual: Attn(x Wq, c Wk, c Wv) + x, where x
/// supplies the queries and c the keys and values. With x == c this is the
/// self-attention block; with tokens from two levels it is cross-scale.
template <class T>
class AttentionBlock {
 public:
  AttentionBlock() = default;

  static AttentionBlock create(std::size_t dim, std::size_t heads, Rng& rng) {
    AttentionBlock b;
    b.heads_ = heads;
    b.wq_ = Linear<T>::create(dim, dim, rng, false);
    b.wk_ = Linear<T>::create(dim, dim, rng, false);
    b.wv_ = Linear<T>::create(dim, dim, rng, false);
    return b;
  }

  AttentionResult<T> forward(const Tensor<T>& query_tokens, const Tensor<T>& context_tokens) const {
    if (query_tokens.dim(1) != wq_.in_features() || context_tokens.dim(1) != wk_.in_features()) {
      throw ArgumentError("attention: token width does not match projection width " +
                          std::to_string(wq_.in_features()));
    }
    auto r = attn(wq_(query_tokens), wk_(context_tokens), wv_(context_tokens), heads_);
    r.output = ops::add(r.output, query_tokens);
    return r;
  }

  Linear<T>& query() { return wq_; }
  Linear<T>& key() { return wk_; }
  Linear<T>& value() { return wv_; }

  /// Zeroes the value projection so the block reduces to its residual.
  void zero_value_projection() {
    fill(wv_.weight, T(0));
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    wq_.collect(out, prefix + ".wq");
    wk_.collect(out, prefix + ".wk");
    wv_.collect(out, prefix + ".wv");
  }

 private:
  std::size_t heads_ = 1;
  Linear<T> wq_, wk_, wv_;
};

template <class T>
PooledFeature<T> sa_block(const PooledFeature<T>& g, const AttentionBlock<T>& block) {
  return {block.forward(g.tokens, g.tokens).output, g.height, g.width};
}

/// Queries from the coarser level, keys/values from the finer one; the
/// residual carries the coarser level.
template <class T>
AttentionResult<T> csa_attention(const PooledFeature<T>& low, const PooledFeature<T>& high,
                                 const AttentionBlock<T>& block) {
  if (low.tokens.shape() != high.tokens.shape()) {
    throw ArgumentError("csa: token grids differ " + shape_str(low.tokens.shape()) + " vs " +
                        shape_str(high.tokens.shape()));
  }
  return block.forward(high.tokens, low.tokens);
}

template <class T>
PooledFeature<T> csa_block(const PooledFeature<T>& low, const PooledFeature<T>& high, const AttentionBlock<T>& block) {
  return {csa_attention(low, high, block).output, high.height, high.width};
}

/// (H_n W_n) x (H_n W_n) cross-scale weight matrix, one row per query position.
template <class T>
Tensor<T> export_csa_weights(const PooledFeature<T>& low, const PooledFeature<T>& high,
                             const AttentionBlock<T>& block) {
  NoGradGuard no_grad;
  return csa_attention(low, high, block).weights;
}

/// Coarse-to-fine chain: starts from the coarsest level and folds in each
/// finer level with its CSA block. blocks[i] joins level i+1 (keys) with the
/// running output from level i+2 (queries). Per-pair weights are appended to
/// `weights` when given, finest pair first.
template <class T>
PooledFeature<T> csa_chain(const std::vector<PooledFeature<T>>& levels, const std::vector<AttentionBlock<T>>& blocks,
                           std::vector<Tensor<T>>* weights = nullptr) {
  if (levels.size() < 2) throw ArgumentError("csa_chain: needs at least 2 levels");
  if (blocks.size() != levels.size() - 1) throw ArgumentError("csa_chain: need one CSA block per adjacent pair");
  std::vector<Tensor<T>> collected(blocks.size());
  PooledFeature<T> running = levels.back();
  for (std::size_t i = levels.size() - 1; i-- > 0;) {
    auto r = csa_attention(levels[i], running, blocks[i]);
    collected[i] = r.weights;
    running = {r.output, running.height, running.width};
  }
  if (weights) *weights = std::move(collected);
  return running;
}

/// One learnable token-grid offset shared by every level.
template <class T>
struct PositionEncoding {
  Tensor<T> table;  // (H_n W_n) x D
  std::size_t height = 0;
  std::size_t width = 0;

  static PositionEncoding create(std::size_t height, std::size_t width, std::size_t dim, Rng& rng) {
    return {detail::uniform_tensor<T>({height * width, dim}, 0.02, rng), height, width};
  }

  /// The table bilinearly resampled to a different token grid.
  Tensor<T> resized(std::size_t h, std::size_t w) const {
    if (h == height && w == width) return table;
    const std::size_t d = table.dim(1);
    Tensor<T> grid = ops::reshape(ops::transpose(table), Shape{d, height, width});
    return ops::to_tokens(ops::bilinear_resize(grid, h, w));
  }
};

template <class T>
std::vector<PooledFeature<T>> add_position_encoding(const std::vector<PooledFeature<T>>& levels, const Tensor<T>& table) {
  std::vector<PooledFeature<T>> out;
  out.reserve(levels.size());
  for (const auto& g : levels) {
    if (g.tokens.shape() != table.shape()) {
      throw ArgumentError("position encoding " + shape_str(table.shape()) + " vs tokens " + shape_str(g.tokens.shape()));
    }
    out.push_back({ops::add(g.tokens, table), g.height, g.width});
  }
  return out;
}

/// SA-Pool followed by a two-layer GELU perceptron. With `distribution` set
/// the K outputs pass through a softmax.
template <class T>
class ScoreHead {
 public:
  ScoreHead() = default;

  static ScoreHead create(std::size_t dim, std::size_t outputs, bool distribution, std::size_t heads, Rng& rng) {
    if (outputs == 0) throw ArgumentError("score head: output count must be positive");
    if (distribution && outputs < 2) throw ArgumentError("score head: a distribution needs at least 2 bins");
    ScoreHead h;
    h.distribution_ = distribution;
    h.pool_attention_ = AttentionBlock<T>::create(dim, heads, rng);
    h.hidden_ = Linear<T>::create(dim, dim, rng);
    h.output_ = Linear<T>::create(dim, outputs, rng);
    return h;
  }

  /// Returns K values: the scalar score (K = 1), or bin probabilities.
  Tensor<T> operator()(const PooledFeature<T>& g) const {
    Tensor<T> pooled = ops::mean_rows(sa_block(g, pool_attention_).tokens);
    Tensor<T> y = output_(ops::gelu(hidden_(pooled)));
    y = ops::reshape(y, Shape{y.numel()});
    return distribution_ ? ops::softmax(y, 0) : y;
  }

  bool distribution() const { return distribution_; }
  std::size_t outputs() const { return output_.out_features(); }
  AttentionBlock<T>& pool_attention() { return pool_attention_; }
  Linear<T>& output_layer() { return output_; }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    pool_attention_.collect(out, prefix + ".sa");
    hidden_.collect(out, prefix + ".mlp.hidden");
    output_.collect(out, prefix + ".mlp.out");
  }

 private:
  bool distribution_ = false;
  AttentionBlock<T> pool_attention_;
  Linear<T> hidden_, output_;
};

}  // namespace topiq
