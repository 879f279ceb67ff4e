#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "pram/gradcheck.hpp"
#include "pram/ops.hpp"
#include "pram/optim.hpp"

using namespace pram;
using TD = Tensor<double>;

namespace {

std::vector<double> iota_values(std::size_t n, double start = 0.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = start + static_cast<double>(i);
  return v;
}

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Registers random inputs as parameters, contracts the op output with a fixed
// random projection, and runs the finite-difference checker.
GradcheckReport check_op(const std::vector<Shape>& input_shapes,
                         const std::function<TD(const std::vector<TD>&)>& op, std::uint64_t seed,
                         double tolerance = 1e-5) {
  std::mt19937_64 rng(seed);
  ParameterStore<double> store;
  std::vector<TD> inputs;
  for (std::size_t i = 0; i < input_shapes.size(); ++i)
    inputs.push_back(store.add("in" + std::to_string(i), input_shapes[i], random_values(numel(input_shapes[i]), rng)));
  TD probe = op(inputs);
  TD projection(probe.shape(), random_values(probe.size(), rng));
  return gradcheck<double>([&] { return sum(mul(op(inputs), projection)); }, store.all(), 1e-6, tolerance);
}

}  // namespace

TEST(Conv2d, AllOnesGivesNine) {
  TD x({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  TD w({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  TD y = conv2d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 9.0);
}

TEST(Conv2d, ZeroWeightGivesZeroOutput) {
  std::mt19937_64 rng(1);
  TD x({2, 3, 5, 5}, random_values(150, rng));
  TD w = TD::zeros({4, 3, 3, 3});
  TD y = conv2d(x, w, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 5, 5}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, StrideTwoCornerKernel) {
  TD x({1, 1, 4, 4}, iota_values(16));
  TD w({1, 1, 2, 2}, {1, 0, 0, 0});
  TD y = conv2d(x, w, 2, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{0, 2, 8, 10}));
}

TEST(Conv2d, PaddingMatchesNaiveLoop) {
  std::mt19937_64 rng(3);
  const std::size_t N = 2, C = 2, H = 5, W = 6, K = 3, KH = 3, KW = 2, S = 2, P = 1;
  TD x({N, C, H, W}, random_values(N * C * H * W, rng));
  TD w({K, C, KH, KW}, random_values(K * C * KH * KW, rng));
  TD b({K}, random_values(K, rng));
  TD y = conv2d(x, w, b, S, P);
  const std::size_t OH = (H + 2 * P - KH) / S + 1, OW = (W + 2 * P - KW) / S + 1;
  ASSERT_EQ(y.shape(), (Shape{N, K, OH, OW}));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double acc = b.values()[k];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                long iy = static_cast<long>(oy * S + ky) - static_cast<long>(P);
                long ix = static_cast<long>(ox * S + kx) - static_cast<long>(P);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                acc += w.values()[((k * C + c) * KH + ky) * KW + kx] * x.values()[((n * C + c) * H + iy) * W + ix];
              }
          EXPECT_NEAR(y.values()[((n * K + k) * OH + oy) * OW + ox], acc, 1e-12);
        }
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  TD x = TD::zeros({1, 2, 4, 4});
  TD w = TD::zeros({1, 3, 3, 3});
  EXPECT_THROW(conv2d(x, w, 1, 0), DimensionError);
}

TEST(Conv2d, KernelLargerThanPaddedInputIsError) {
  EXPECT_THROW(conv2d(TD::zeros({1, 1, 2, 2}), TD::zeros({1, 1, 5, 5}), 1, 1), DimensionError);
}

TEST(Mfm, HalvesFeatureRows) {
  TD x({1, 4}, {1, 3, 2, 0});
  TD y = mfm(x);
  EXPECT_EQ(y.values(), (std::vector<double>{2, 3}));
}

TEST(Mfm, EqualHalvesReturnEitherHalf) {
  TD x({1, 6}, {1, 2, 3, 1, 2, 3});
  EXPECT_EQ(mfm(x).values(), (std::vector<double>{1, 2, 3}));
}

TEST(Mfm, GradientGoesToArgmaxAndFirstHalfOnTies) {
  TD x({1, 4}, {1, 3, 2, 3}, true);
  backward(sum(mfm(x)));
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 1, 1, 0}));
}

TEST(Mfm, OddChannelCountIsDimensionError) { EXPECT_THROW(mfm(TD::zeros({2, 3, 2, 2})), DimensionError); }

TEST(Mfm, ConvolutionalChannelsHalve) {
  TD x({1, 4, 1, 2}, {0, 5, 1, 1, 2, 0, 3, 3});
  TD y = mfm(x);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 1, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{2, 5, 3, 3}));
}

TEST(FullyConnected, IdentityWeightZeroBias) {
  TD x({2, 3}, {1, 2, 3, 4, 5, 6});
  TD w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(fully_connected(x, w, TD::zeros({3})).values(), x.values());
}

TEST(FullyConnected, ZeroInputGivesBias) {
  TD w({2, 2}, {4, 5, 6, 7});
  TD b({2}, {3, -1});
  EXPECT_EQ(fully_connected(TD::zeros({3, 2}), w, b).values(), (std::vector<double>{3, -1, 3, -1, 3, -1}));
}

TEST(FullyConnected, HandArithmetic) {
  TD y = fully_connected(TD({1, 2}, {1, 2}), TD({2, 2}, {1, 0, 0, 1}), TD({2}, {3, -1}));
  EXPECT_EQ(y.values(), (std::vector<double>{4, 1}));
}

TEST(FullyConnected, InnerDimensionMismatch) {
  EXPECT_THROW(fully_connected(TD::zeros({1, 3}), TD::zeros({2, 2})), DimensionError);
}

TEST(MaxPool, ConstantInputConstantOutput) {
  TD y = max_pool2d(TD({1, 1, 4, 4}, std::vector<double>(16, 2.5)), 2, 2);
  for (double v : y.values()) EXPECT_EQ(v, 2.5);
}

TEST(MaxPool, PicksMaximum) {
  EXPECT_EQ(max_pool2d(TD({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2).item(), 4.0);
}

TEST(MaxPool, TieRoutesGradientToFirstElement) {
  TD x({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  TD y = max_pool2d(x, 2, 2);
  EXPECT_EQ(y.item(), 5.0);
  backward(sum(y));
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(MaxPool, WindowLargerThanInput) { EXPECT_THROW(max_pool2d(TD::zeros({1, 1, 2, 2}), 3, 1), DimensionError); }

TEST(Backward, SumGivesOnes) {
  TD w({2, 3}, iota_values(6), true);
  backward(sum(w));
  EXPECT_EQ(w.grad(), std::vector<double>(6, 1.0));
}

TEST(Backward, ZeroTimesFunctionGivesZeroGradient) {
  TD w({3}, {1, -2, 3}, true);
  backward(mul_scalar(sum(mul(w, w)), 0.0));
  EXPECT_EQ(w.grad(), std::vector<double>(3, 0.0));
}

TEST(Backward, NonScalarLossIsError) {
  TD w({3}, {1, 2, 3}, true);
  EXPECT_THROW(backward(mul_scalar(w, 2.0)), GraphError);
}

TEST(Backward, NoRecordedGraphIsError) {
  TD c({1}, {1.0});
  EXPECT_THROW(backward(sum(c)), GraphError);
}

TEST(Backward, GradientsAccumulateUntilCleared) {
  TD w({2}, {1, 2}, true);
  TD loss = sum(mul(w, w));
  backward(loss);
  backward(loss);
  EXPECT_EQ(w.grad(), (std::vector<double>{4, 8}));
  w.zero_grad();
  backward(loss);
  EXPECT_EQ(w.grad(), (std::vector<double>{2, 4}));
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  TD w({1}, {3}, true);
  TD sq = mul(w, w);
  backward(sum(add(sq, sq)));  // d/dw 2w^2 = 4w
  EXPECT_DOUBLE_EQ(w.grad()[0], 12.0);
}

TEST(Backward, SumOfLossesEqualsSumOfSeparatePasses) {
  std::mt19937_64 rng(11);
  TD x({4, 6}, random_values(24, rng));
  TD w({6, 5}, random_values(30, rng), true);
  auto loss_a = [&] { return sum(hinge(fully_connected(x, w))); };
  auto loss_b = [&] { return sum(mul(fully_connected(x, w), fully_connected(x, w))); };
  backward(add(loss_a(), loss_b()));
  const auto joint = w.grad();
  w.zero_grad();
  backward(loss_a());
  backward(loss_b());
  for (std::size_t i = 0; i < joint.size(); ++i) EXPECT_NEAR(joint[i], w.grad()[i], 1e-12);
}

TEST(Sgd, ZeroGradientNoDecayLeavesWeight) {
  ParameterStore<double> store;
  TD w = store.add("w", {1}, {1.0});
  w.mutable_grad()[0] = 0.0;
  sgd_step(store, 0.1, 0.0);
  EXPECT_EQ(w.item(), 1.0);
}

TEST(Sgd, UnitGradientStep) {
  ParameterStore<double> store;
  TD w = store.add("w", {1}, {0.0});
  w.mutable_grad()[0] = 1.0;
  sgd_step(store, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(w.item(), -0.1);
}

TEST(Sgd, DefaultHyperparametersWithDecay) {
  ParameterStore<double> store;
  TD w = store.add("w", {1}, {2.0});
  w.mutable_grad()[0] = 1.0;
  sgd_step(store, 1e-3, 5e-4);
  EXPECT_NEAR(w.item(), 1.998999, 1e-12);
  EXPECT_EQ(w.grad()[0], 1.0);
}

TEST(Sgd, FrozenParametersAreUntouched) {
  ParameterStore<float> store;
  std::mt19937_64 rng(5);
  auto f = store.add("frozen", {8}, he_normal<float>(8, 4, rng));
  auto t = store.add("trained", {8}, he_normal<float>(8, 4, rng));
  store.get("frozen").frozen = true;
  const auto before = f.values();
  for (int step = 0; step < 50; ++step) {
    store.zero_grad();
    backward(sum(mul(add(f, t), add(f, t))));
    sgd_step(store, 0.01, 5e-4);
  }
  EXPECT_EQ(f.values(), before);
  EXPECT_NE(t.values(), before);
}

TEST(Sgd, MissingGradientIsError) {
  ParameterStore<double> store;
  store.add("w", {1}, {1.0});
  EXPECT_THROW(sgd_step(store, 0.1, 0.0), std::logic_error);
}

TEST(Sgd, RejectsBadHyperparameters) {
  ParameterStore<double> store;
  TD w = store.add("w", {1}, {1.0});
  w.mutable_grad()[0] = 1.0;
  EXPECT_THROW(sgd_step(store, 0.0, 0.0), std::invalid_argument);
  EXPECT_THROW(sgd_step(store, 0.1, -1.0), std::invalid_argument);
}

TEST(Gradcheck, LinearLayerPassesTightly) {
  std::mt19937_64 rng(2);
  ParameterStore<double> store;
  TD x({3, 4}, random_values(12, rng));
  TD w = store.add("w", {4, 2}, random_values(8, rng));
  TD b = store.add("b", {2}, random_values(2, rng));
  auto report = gradcheck<double>([&] { return sum(fully_connected(x, w, b)); }, store.all(), 1e-6, 1e-6);
  EXPECT_TRUE(report.passed()) << report.max_error();
}

TEST(Gradcheck, CorruptedGradientFails) {
  std::mt19937_64 rng(2);
  ParameterStore<double> store;
  TD w = store.add("w", {5}, random_values(5, rng));
  auto doubled_square = [&] {
    std::vector<double> v(w.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = w.values()[i] * w.values()[i];
    return sum(TD::from_op("bad_square", w.shape(), v, {w}, [](Node<double>& self) {
      auto& p = *self.parents[0];
      for (std::size_t i = 0; i < p.value.size(); ++i)
        p.ensure_grad()[i] += self.grad[i] * 2.0 * (2.0 * p.value[i]);
    }));
  };
  auto report = gradcheck<double>(doubled_square, store.all(), 1e-6, 1e-4);
  EXPECT_FALSE(report.passed());
}

TEST(Gradcheck, RejectsEpsilonOutsideRange) {
  ParameterStore<double> store;
  TD w = store.add("w", {1}, {1.0});
  auto f = [&] { return sum(w); };
  EXPECT_THROW(gradcheck<double>(f, store.all(), 1e-9, 1e-4), std::invalid_argument);
  EXPECT_THROW(gradcheck<double>(f, store.all(), 1e-2, 1e-4), std::invalid_argument);
}

TEST(Gradcheck, NonDeterministicFragmentIsError) {
  ParameterStore<double> store;
  TD w = store.add("w", {1}, {1.0});
  std::mt19937_64 rng(1);
  auto noisy = [&] { return sum(add_scalar(w, std::uniform_real_distribution<double>(0, 1)(rng))); };
  EXPECT_THROW(gradcheck<double>(noisy, store.all(), 1e-6, 1e-4), std::runtime_error);
}

// Every differentiable op against central differences on three random shapes.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, Conv2d) {
  const int i = GetParam();
  const std::vector<std::array<std::size_t, 8>> cases{
      {{1, 1, 5, 5, 2, 3, 1, 1}}, {{2, 2, 6, 7, 3, 3, 2, 1}}, {{2, 3, 4, 4, 2, 2, 1, 0}}};
  auto [N, C, H, W, K, KS, S, P] = cases[i];
  auto r = check_op({{N, C, H, W}, {K, C, KS, KS}, {K}},
                    [S = S, P = P](const auto& in) { return conv2d(in[0], in[1], in[2], S, P); }, 100 + i);
  EXPECT_TRUE(r.passed()) << r.max_error();
}

TEST_P(OpGradients, Mfm) {
  const std::vector<Shape> shapes{{3, 4}, {2, 6, 3, 3}, {1, 2, 5, 2}};
  auto r = check_op({shapes[GetParam()]}, [](const auto& in) { return mfm(in[0]); }, 200 + GetParam());
  EXPECT_TRUE(r.passed()) << r.max_error();
}

TEST_P(OpGradients, MaxPool) {
  const std::vector<Shape> shapes{{1, 1, 4, 4}, {2, 3, 6, 6}, {1, 2, 5, 7}};
  auto r = check_op({shapes[GetParam()]}, [](const auto& in) { return max_pool2d(in[0], 2, 2); }, 300 + GetParam());
  EXPECT_TRUE(r.passed()) << r.max_error();
}

TEST_P(OpGradients, FullyConnected) {
  const std::vector<std::array<std::size_t, 3>> dims{{{1, 3, 2}}, {{4, 5, 6}}, {{3, 8, 1}}};
  auto [N, D, E] = dims[GetParam()];
  auto r = check_op({{N, D}, {D, E}, {E}}, [](const auto& in) { return fully_connected(in[0], in[1], in[2]); },
                    400 + GetParam());
  EXPECT_TRUE(r.passed()) << r.max_error();
}

TEST_P(OpGradients, CosineRows) {
  const std::vector<Shape> shapes{{1, 3}, {4, 5}, {2, 16}};
  const Shape s = shapes[GetParam()];
  auto r = check_op({s, s}, [](const auto& in) { return cosine_rows(in[0], in[1]); }, 500 + GetParam());
  EXPECT_TRUE(r.passed()) << r.max_error();
}

TEST_P(OpGradients, L2NormalizeRows) {
  const std::vector<Shape> shapes{{1, 3}, {4, 5}, {2, 16}};
  auto r = check_op({shapes[GetParam()]}, [](const auto& in) { return l2_normalize_rows(in[0]); }, 600 + GetParam());
  EXPECT_TRUE(r.passed()) << r.max_error();
}

TEST_P(OpGradients, WeightedSum) {
  const std::vector<Shape> shapes{{1, 3}, {4, 5}, {2, 2, 3}};
  const Shape s = shapes[GetParam()];
  auto r = check_op({s, s, s, {3}}, [](const auto& in) { return weighted_sum({in[0], in[1], in[2]}, in[3]); },
                    700 + GetParam());
  EXPECT_TRUE(r.passed()) << r.max_error();
}

TEST_P(OpGradients, CrossEntropy) {
  const std::vector<Shape> shapes{{1, 2}, {4, 5}, {3, 7}};
  const Shape s = shapes[GetParam()];
  std::vector<std::size_t> labels(s[0]);
  for (std::size_t n = 0; n < labels.size(); ++n) labels[n] = (n * 3 + 1) % s[1];
  auto r = check_op({s}, [&](const auto& in) { return cross_entropy(in[0], labels); }, 800 + GetParam());
  EXPECT_TRUE(r.passed()) << r.max_error();
}

TEST_P(OpGradients, ElementwiseAndStructural) {
  const std::vector<Shape> shapes{{2, 3}, {4, 1}, {3, 5}};
  const Shape s = shapes[GetParam()];
  auto r = check_op(
      {s, s},
      [](const auto& in) {
        TD q = div(add_scalar(in[0], 3.0), add_scalar(mul_scalar(in[1], 0.5), 2.0));
        TD h = hinge(sub(mul(q, in[1]), in[0]));
        TD c = concat_cols(h, q);
        return reshape(select_rows(c, {1, 0, 1}), {3 * c.dim(1)});
      },
      900 + GetParam());
  EXPECT_TRUE(r.passed()) << r.max_error();
}

INSTANTIATE_TEST_SUITE_P(ThreeShapes, OpGradients, ::testing::Values(0, 1, 2));

TEST(Determinism, ForwardOpsAreBitIdentical) {
  std::mt19937_64 rng(9);
  TD x({2, 2, 8, 8}, random_values(256, rng));
  TD w({4, 2, 3, 3}, random_values(72, rng));
  auto run = [&] { return max_pool2d(mfm(conv2d(x, w, 1, 1)), 2, 2).values(); };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, ShapeMustMatchValues) {
  EXPECT_THROW(TD({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(TD({0}, {}), DimensionError);
}
