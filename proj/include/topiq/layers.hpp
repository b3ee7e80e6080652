#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "topiq/ops.hpp"
#include "topiq/tensor.hpp"

namespace topiq {

/// Seeded generator shared by parameter initialization and data synthesis.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Trainable tensor plus the metadata the optimizer needs.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // subject to decoupled weight decay
};

template <class T>
using ParamList = std::vector<Parameter<T>>;

namespace detail {

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

}  // namespace detail

/// Convolution with fan-in scaled uniform weights and zero bias.
template <class T>
struct Conv2d {
  Tensor<T> weight;  // Cout x Cin x k x k
  Tensor<T> bias;    // Cout
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d create(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride,
                       std::size_t pad, Rng& rng) {
    const double fan_in = static_cast<double>(cin * kernel * kernel);
    return Conv2d{detail::uniform_tensor<T>({cout, cin, kernel, kernel}, std::sqrt(3.0 / fan_in), rng),
                  Tensor<T>::zeros({cout}, true), stride, pad};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, false});
  }
};

/// Per-token affine map, weight stored Din x Dout. Without a bias it is a
/// plain matrix product.
template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;  // empty handle when has_bias is false
  bool has_bias = true;

  static Linear create(std::size_t din, std::size_t dout, Rng& rng, bool with_bias = true) {
    Linear l{detail::uniform_tensor<T>({din, dout}, 1.0 / std::sqrt(static_cast<double>(din)), rng), {}, with_bias};
    if (with_bias) l.bias = Tensor<T>::zeros({dout}, true);
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return has_bias ? ops::linear(x, weight, bias) : ops::matmul(x, weight);
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    if (has_bias) out.push_back({prefix + ".bias", bias, false});
  }
};

template <class T>
void fill(Tensor<T> t, T value) {
  for (auto& v : t.mutable_data()) v = value;
}

}  // namespace topiq
