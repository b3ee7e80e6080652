#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "topiq/model.hpp"

namespace testing_util {

using topiq::Shape;
using topiq::Tensor;

template <class T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(topiq::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>(std::move(shape), std::move(v), grad);
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(T)) != 0) return false;
  }
  return true;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

/// 3-level full-reference config small enough for finite differences.
inline topiq::ModelConfig tiny_fr_config(std::size_t side = 32) {
  topiq::ModelConfig c;
  c.mode = topiq::IqaMode::full_reference;
  c.backbone.levels = 3;
  c.backbone.channels = {4, 6, 8};
  c.backbone.blocks = 1;
  c.dim = 16;
  c.glp_hidden = 8;
  c.input_height = c.input_width = side;
  c.seed = 7;
  return c;
}

inline topiq::ModelConfig tiny_nr_config(std::size_t side = 32) {
  auto c = tiny_fr_config(side);
  c.mode = topiq::IqaMode::no_reference;
  return c;
}

/// Smooth deterministic RGB texture in [0, 1]: a few seeded sinusoids.
inline Tensor<float> texture(std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(1.0, 6.0), phase(0.0, 2.0 * std::numbers::pi);
  std::vector<float> v(3 * side * side);
  for (std::size_t c = 0; c < 3; ++c) {
    const double fx1 = freq(rng), fy1 = freq(rng), p1 = phase(rng);
    const double fx2 = freq(rng), fy2 = freq(rng), p2 = phase(rng);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double u = static_cast<double>(x) / side, w = static_cast<double>(y) / side;
        const double s = 0.5 + 0.25 * std::sin(2 * std::numbers::pi * (fx1 * u + fy1 * w) + p1) +
                         0.2 * std::sin(2 * std::numbers::pi * (fx2 * u - fy2 * w) + p2);
        v[(c * side + y) * side + x] = static_cast<float>(std::clamp(s, 0.0, 1.0));
      }
  }
  return Tensor<float>(Shape{3, side, side}, std::move(v));
}

/// Adds Gaussian noise of standard deviation `sigma`, clipped to [0, 1].
inline Tensor<float> add_noise(const Tensor<float>& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<float> v(img.values());
  for (auto& x : v) x = static_cast<float>(std::clamp(x + sigma * n(rng), 0.0, 1.0));
  return Tensor<float>(img.shape(), std::move(v));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("topiq_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_util
