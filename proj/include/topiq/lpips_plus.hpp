#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "topiq/backbone.hpp"
#include "topiq/metrics.hpp"
#include "topiq/ops.hpp"

namespace topiq {

enum class MapOrientation { similarity, distance };

/// Per pixel: unit-normalize both channel vectors, sum the squared
/// differences over channels (d), and report 1 - d clipped to [0, 1]
/// (similarity) or d itself (distance). One 1 x H_m x W_m map per level.
template <class T>
std::vector<Tensor<double>> quality_maps(const FeaturePyramid<T>& dist, const FeaturePyramid<T>& ref,
                                         MapOrientation orientation = MapOrientation::similarity) {
  if (dist.size() != ref.size()) throw ArgumentError("quality_maps: pyramids have different level counts");
  constexpr double eps = 1e-10;
  std::vector<Tensor<double>> maps;
  for (std::size_t l = 0; l < dist.size(); ++l) {
    const auto& a = dist.levels[l];
    const auto& b = ref.levels[l];
    if (a.shape() != b.shape() || a.rank() != 3) {
      throw ArgumentError("quality_maps: level " + std::to_string(l + 1) + " misaligned " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
    }
    const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2), hw = h * w;
    std::vector<double> out(hw);
    for (std::size_t p = 0; p < hw; ++p) {
      double na = 0.0, nb = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        na += static_cast<double>(a[ch * hw + p]) * a[ch * hw + p];
        nb += static_cast<double>(b[ch * hw + p]) * b[ch * hw + p];
      }
      na = std::sqrt(na) + eps;
      nb = std::sqrt(nb) + eps;
      double d = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double diff = a[ch * hw + p] / na - b[ch * hw + p] / nb;
        d += diff * diff;
      }
      out[p] = orientation == MapOrientation::similarity ? std::clamp(1.0 - d, 0.0, 1.0) : d;
    }
    maps.emplace_back(Shape{1, h, w}, std::move(out));
  }
  return maps;
}

/// Channel mean of the rectified reference features at `layer` (1-based).
template <class T>
Tensor<double> semantic_weight(const FeaturePyramid<T>& ref, std::size_t layer) {
  if (layer < 1 || layer > ref.size()) {
    throw ArgumentError("semantic_weight: layer " + std::to_string(layer) + " outside 1.." + std::to_string(ref.size()));
  }
  const auto& f = ref.level(layer);
  const std::size_t c = f.dim(0), h = f.dim(1), w = f.dim(2), hw = h * w;
  std::vector<double> out(hw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[p] += std::max(static_cast<double>(f[ch * hw + p]), 0.0);
  for (auto& v : out) v /= static_cast<double>(c);
  return Tensor<double>(Shape{1, h, w}, std::move(out));
}

struct LpipsPlusResult {
  double value = 0.0;
  std::vector<double> layer_terms;
  bool uniform_fallback = false;  // weight map was all zero
};

/// Sum over layers of the weight-averaged quality map, the weight map being
/// bilinearly resized to each layer's grid. Without a weight map (or with an
/// all-zero one) every layer term is the plain spatial mean.
inline LpipsPlusResult lpips_plus(const std::vector<Tensor<double>>& maps, const Tensor<double>* weight) {
  if (maps.empty()) throw ArgumentError("lpips_plus: no quality maps");
  LpipsPlusResult result;
  bool uniform = weight == nullptr;
  if (weight) {
    if (weight->rank() != 3 || weight->dim(0) != 1) throw ArgumentError("lpips_plus: weight map must be 1 x H x W");
    double mass = 0.0;
    for (double v : weight->data()) {
      if (v < 0.0) throw ArgumentError("lpips_plus: weight map has negative entries");
      mass += v;
    }
    if (mass == 0.0) uniform = result.uniform_fallback = true;
  }
  NoGradGuard no_grad;
  for (const auto& s : maps) {
    double num = 0.0, den = 0.0;
    if (uniform) {
      for (double v : s.data()) num += v;
      den = static_cast<double>(s.numel());
    } else {
      Tensor<double> w = ops::bilinear_resize(*weight, s.dim(1), s.dim(2));
      for (std::size_t p = 0; p < s.numel(); ++p) {
        num += w[p] * s[p];
        den += w[p];
      }
    }
    result.layer_terms.push_back(num / den);
    result.value += num / den;
  }
  return result;
}

inline LpipsPlusResult lpips_plus(const std::vector<Tensor<double>>& maps, const Tensor<double>& weight) {
  return lpips_plus(maps, &weight);
}

struct SweepRow {
  std::size_t layer = 0;  // 0 = uniform weights
  double srcc = 0.0;
};

/// SRCC against MOS for the uniform baseline (layer 0) and for each choice of
/// semantic-weight layer 1..n.
template <class T>
std::vector<SweepRow> layer_sweep(std::span<const std::pair<FeaturePyramid<T>, FeaturePyramid<T>>> pairs,
                                  std::span<const double> mos,
                                  MapOrientation orientation = MapOrientation::similarity) {
  if (pairs.empty()) throw ArgumentError("layer_sweep: empty dataset");
  if (pairs.size() != mos.size()) throw ArgumentError("layer_sweep: pair count and MOS count differ");
  if (std::all_of(mos.begin(), mos.end(), [&](double m) { return m == mos.front(); })) {
    throw DegenerateInputError("layer_sweep: MOS vector is constant");
  }
  const std::size_t levels = pairs.front().second.size();
  std::vector<std::vector<double>> scores(levels + 1, std::vector<double>(pairs.size()));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& [pd, pr] = pairs[k];
    const auto maps = quality_maps(pd, pr, orientation);
    scores[0][k] = lpips_plus(maps, nullptr).value;
    for (std::size_t layer = 1; layer <= levels; ++layer) {
      scores[layer][k] = lpips_plus(maps, semantic_weight(pr, layer)).value;
    }
  }
  std::vector<SweepRow> rows;
  for (std::size_t layer = 0; layer <= levels; ++layer) {
    double value = 0.0;
    try {
      value = srcc(scores[layer], mos);
    } catch (const DegenerateInputError&) {
      // constant metric column: rank correlation undefined, reported as 0
    }
    rows.push_back({layer, value});
  }
  return rows;
}

}  // namespace topiq
