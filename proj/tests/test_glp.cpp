#include <gtest/gtest.h>

#include "helpers.hpp"
#include "topiq/glp.hpp"
#include "topiq/grad_check.hpp"

using namespace topiq;
using testing_util::random_tensor;

namespace {

// Reference pipeline for an ungated level: pool then per-token affine map.
Tensor<double> pool_and_reduce(const Tensor<double>& features, std::size_t window, Linear<double>& reducer) {
  return reducer(ops::to_tokens(ops::window_avg_pool(features, window)));
}

}  // namespace

TEST(Glp, PoolingWindows) {
  EXPECT_EQ(pooling_window(1, 5), 16u);
  EXPECT_EQ(pooling_window(5, 5), 1u);
  EXPECT_EQ(pooling_window(2, 3), 2u);
  EXPECT_EQ(pooling_window(1, 3), 4u);
  EXPECT_THROW(pooling_window(0, 3), ArgumentError);
  EXPECT_THROW(pooling_window(4, 3), ArgumentError);
}

TEST(Glp, FiveLevelGeometry) {
  Rng rng(1);
  auto glp = GlpLevel<float>::create(IqaMode::full_reference, 3, 8, 16, rng);
  std::mt19937_64 gen(1);
  auto fd = random_tensor<float>({3, 112, 112}, gen);
  auto fr = random_tensor<float>({3, 112, 112}, gen);
  auto out = glp.forward_fr(fd, fr, pooling_window(1, 5));
  EXPECT_EQ(out.feature.height, 7u);
  EXPECT_EQ(out.feature.width, 7u);
  EXPECT_EQ(out.feature.tokens.shape(), (Shape{49, 16}));
  EXPECT_EQ(out.mask.shape(), (Shape{1, 112, 112}));
}

TEST(Glp, IdenticalFeaturesGiveHalfMask) {
  Rng rng(2);
  auto glp = GlpLevel<double>::create(IqaMode::full_reference, 4, 8, 16, rng);
  std::mt19937_64 gen(2);
  auto f = random_tensor<double>({4, 8, 8}, gen);
  auto out = glp.forward_fr(f, f, 2);
  for (double m : out.mask.data()) EXPECT_EQ(m, 0.5);
}

TEST(Glp, MaskInOpenUnitInterval) {
  Rng rng(3);
  auto glp = GlpLevel<double>::create(IqaMode::full_reference, 4, 8, 16, rng);
  std::mt19937_64 gen(3);
  auto out = glp.forward_fr(random_tensor<double>({4, 8, 8}, gen, -3, 3), random_tensor<double>({4, 8, 8}, gen, -3, 3), 2);
  for (double m : out.mask.data()) {
    EXPECT_GT(m, 0.0);
    EXPECT_LT(m, 1.0);
  }
}

TEST(Glp, BypassedMaskEqualsPoolAndReduceOfConcatenation) {
  Rng rng(4);
  auto glp = GlpLevel<double>::create(IqaMode::full_reference, 3, 8, 5, rng);
  std::mt19937_64 gen(4);
  auto fd = random_tensor<double>({3, 8, 8}, gen);
  auto fr = random_tensor<double>({3, 8, 8}, gen);
  auto out = glp.forward_fr(fd, fr, 4, {.bypass_mask = true});
  auto expected = pool_and_reduce(ops::concat<double>({fd, fr, ops::abs(ops::sub(fd, fr))}), 4, glp.reducer());
  EXPECT_TRUE(testing_util::bitwise_equal(out.feature.tokens, expected));
}

TEST(Glp, NotSymmetricInDistortedAndReference) {
  Rng rng(5);
  auto glp = GlpLevel<double>::create(IqaMode::full_reference, 3, 8, 5, rng);
  std::mt19937_64 gen(5);
  auto fd = random_tensor<double>({3, 8, 8}, gen);
  auto fr = random_tensor<double>({3, 8, 8}, gen);
  EXPECT_GT(testing_util::max_abs_diff(glp.forward_fr(fd, fr, 2).feature.tokens,
                                       glp.forward_fr(fr, fd, 2).feature.tokens),
            1e-6);
}

TEST(Glp, ShapeMismatchThrows) {
  Rng rng(6);
  auto glp = GlpLevel<double>::create(IqaMode::full_reference, 3, 8, 5, rng);
  EXPECT_THROW(glp.forward_fr(Tensor<double>::zeros({3, 8, 8}), Tensor<double>::zeros({3, 4, 8}), 2), ArgumentError);
  EXPECT_THROW(glp.forward_nr(Tensor<double>::zeros({3, 8, 8}), 2), ArgumentError);
}

TEST(Glp, NoReferenceZeroInputGivesReducerBias) {
  Rng rng(7);
  auto glp = GlpLevel<double>::create(IqaMode::no_reference, 3, 8, 5, rng);
  std::mt19937_64 gen(7);
  auto bias = random_tensor<double>({5}, gen);
  std::copy(bias.data().begin(), bias.data().end(), glp.reducer().bias.mutable_data().begin());
  auto out = glp.forward_nr(Tensor<double>::zeros({3, 8, 8}), 2);
  for (std::size_t t = 0; t < out.feature.count(); ++t)
    for (std::size_t d = 0; d < 5; ++d) EXPECT_EQ(out.feature.tokens[t * 5 + d], bias[d]);
}

TEST(Glp, NoReferenceIdentityFeatureMap) {
  Rng rng(8);
  auto glp = GlpLevel<double>::create(IqaMode::no_reference, 3, 8, 5, rng);
  auto w = glp.feature_map().weight.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  std::mt19937_64 gen(8);
  auto f = random_tensor<double>({3, 8, 8}, gen);
  auto out = glp.forward_nr(f, 2, {.bypass_mask = true});
  auto expected = pool_and_reduce(ops::relu(f), 2, glp.reducer());
  EXPECT_LT(testing_util::max_abs_diff(out.feature.tokens, expected), 1e-15);
  EXPECT_EQ(out.feature.height, 4u);
}

TEST(Glp, LastLevelPoolingIsIdentity) {
  std::mt19937_64 gen(9);
  auto x = random_tensor<double>({3, 4, 4}, gen);
  EXPECT_TRUE(testing_util::bitwise_equal(ops::window_avg_pool(x, pooling_window(3, 3)), x));
}

TEST(Glp, ResizeToggleSkipsTheGate) {
  Rng rng(10);
  auto glp = GlpLevel<double>::create(IqaMode::full_reference, 3, 8, 5, rng);
  std::mt19937_64 gen(10);
  auto fd = random_tensor<double>({3, 8, 8}, gen);
  auto fr = random_tensor<double>({3, 8, 8}, gen);
  auto out = glp.forward_fr(fd, fr, 4, {.resize_only = true});
  auto cat = ops::concat<double>({fd, fr, ops::abs(ops::sub(fd, fr))});
  auto expected = glp.reducer()(ops::to_tokens(ops::bilinear_resize(cat, 2, 2)));
  EXPECT_TRUE(testing_util::bitwise_equal(out.feature.tokens, expected));
}

TEST(Glp, GradientsReachMaskAndFeatureBranches) {
  for (auto mode : {IqaMode::full_reference, IqaMode::no_reference}) {
    Rng rng(11);
    auto glp = GlpLevel<double>::create(mode, 3, 4, 5, rng);
    ParamList<double> params;
    glp.collect(params, "glp");
    std::vector<NamedTensor<double>> named;
    for (auto& p : params) named.push_back({p.name, p.tensor});
    std::mt19937_64 gen(11);
    auto fd = random_tensor<double>({3, 4, 4}, gen);
    auto fr = random_tensor<double>({3, 4, 4}, gen);
    auto probe = random_tensor<double>({4, 5}, gen);
    auto f = [&] {
      auto out = mode == IqaMode::full_reference ? glp.forward_fr(fd, fr, 2) : glp.forward_nr(fd, 2);
      return ops::sum(ops::mul(out.feature.tokens, probe));
    };
    auto report = grad_check(f, named);
    EXPECT_TRUE(report.pass) << report.max_rel_error;
    for (const auto& e : report.entries) EXPECT_GT(e.max_abs_grad, 0.0) << e.name;
  }
}
