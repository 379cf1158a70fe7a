#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fuselab/gradcheck.hpp"
#include "fuselab/ops.hpp"

using namespace fuselab;

namespace {

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
  ASSERT_EQ(t.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t[i], expected[i], tol) << "index " << i;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  expect_values(matmul(eye, m), {1, 2, 3, 4});
}

TEST(Matmul, RowTimesColumn) {
  Tensor out = matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
  EXPECT_EQ(out.shape(), (Shape{1, 1}));
  EXPECT_EQ(out.item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto r = check_gradients([](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); }, {a, b});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Elementwise, Definitions) {
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor::scalar(-2.0), 0.2).item(), -0.4);
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor::scalar(3.0), 0.2).item(), 3.0);
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
}

TEST(Elementwise, TanhGradientAtZeroIsOne) {
  Tensor x = Tensor::scalar(0.0, true);
  backward(tanh(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Elementwise, LogRejectsNonPositive) {
  EXPECT_THROW(log(Tensor::vector({1.0, 0.0})), NumericDomainError);
  EXPECT_THROW(log(Tensor::vector({-1.0})), NumericDomainError);
  EXPECT_THROW(exp(Tensor::vector({1000.0})), NumericDomainError);
}

TEST(Elementwise, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(mul(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
}

TEST(Elementwise, BiasAndColumnBroadcast) {
  Tensor x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  expect_values(add(x, Tensor::vector({10, 20, 30})), {11, 22, 33, 14, 25, 36});
  expect_values(mul(x, Tensor::matrix(2, 1, {2, 3})), {2, 4, 6, 12, 15, 18});
}

TEST(Elementwise, BroadcastGradientsReduceOverExpandedAxis) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({4, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto col = random_tensor({4, 1}, rng);
  auto r = check_gradients(
      [](const std::vector<Tensor>& in) { return random_projection(mul(add(in[0], in[1]), in[2]), 11); },
      {x, bias, col});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Concat, WidthIsSumOfParts) {
  Tensor c = concat({Tensor::zeros({4}), Tensor::zeros({3}), Tensor::zeros({2})}, 0);
  EXPECT_EQ(c.shape(), Shape{9});
}

TEST(Concat, SingleTensorIsIdentity) {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  expect_values(concat({a}, 1), {1, 2, 3, 4});
}

TEST(Concat, BackwardOfSumGivesOnes) {
  Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4}, true);
  Tensor b = Tensor::matrix(2, 3, {5, 6, 7, 8, 9, 10}, true);
  backward(sum(concat({a, b}, 1)));
  for (double g : a.grad()) EXPECT_EQ(g, 1.0);
  for (double g : b.grad()) EXPECT_EQ(g, 1.0);
  std::mt19937_64 rng(5);
  auto r = check_gradients(
      [](const std::vector<Tensor>& in) { return random_projection(concat({in[0], in[1]}, 1), 2); },
      {random_tensor({2, 2}, rng), random_tensor({2, 3}, rng)});
  EXPECT_TRUE(r.passed);
}

TEST(Concat, Errors) {
  EXPECT_THROW(concat({}), DimensionError);
  EXPECT_THROW(concat({Tensor::zeros({2, 2}), Tensor::zeros({3, 2})}, 1), DimensionError);
}

TEST(Reduce, SumMeanMax) {
  EXPECT_EQ(sum(Tensor::vector({1, 2, 3})).item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(Tensor::full({3, 5}, 2.5)).item(), 2.5);
  expect_values(max(Tensor::matrix(2, 3, {1, 5, 2, 7, 0, 3}), 1), {5, 7});
  expect_values(sum(Tensor::matrix(2, 3, {1, 5, 2, 7, 0, 3}), 0), {8, 5, 5});
}

TEST(Reduce, MeanGradientIsOneOverN) {
  Tensor x = Tensor::zeros({2, 5}, true);
  backward(mean(x));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.1);
}

TEST(Reduce, AxisOutOfRange) { EXPECT_THROW(sum(Tensor::zeros({2, 2}), 2), DimensionError); }

TEST(Backward, SquareAtThree) {
  Tensor x = Tensor::scalar(3.0, true);
  backward(mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, LinearMapGradientIsOuterProduct) {
  Tensor w = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}, true);
  Tensor v = Tensor::matrix(3, 1, {7, 8, 9});
  backward(sum(matmul(w, v)));
  expect_values(w.grad_tensor(), {7, 8, 9, 7, 8, 9});
}

TEST(Backward, RejectsNonScalarAndConsumedGraph) {
  Tensor x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), DimensionError);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), GraphError);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::scalar(2.0, true);
  backward(mul(x, x));
  backward(mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NoGradTensorsNeverAccumulate) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor c = Tensor::scalar(5.0);
  backward(mul(x, c));
  EXPECT_FALSE(c.has_grad());
}

TEST(Backward, InteriorTensorsGetGradients) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor y = scale(x, 3.0);
  backward(sum(y), true);
  ASSERT_TRUE(y.has_grad());
  for (double g : y.grad()) EXPECT_EQ(g, 1.0);
}

// Random 5-layer composite: tanh / sigmoid / leaky-relu stack with biases.
TEST(Backward, RandomCompositeMatchesFiniteDifferences) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> inputs{random_tensor({3, 4}, rng)};
    for (int l = 0; l < 5; ++l) {
      inputs.push_back(random_tensor({4, 4}, rng, -1.0, 1.0));
      inputs.push_back(random_tensor({4}, rng, -1.0, 1.0));
    }
    auto f = [](const std::vector<Tensor>& in) {
      Tensor h = in[0];
      for (int l = 0; l < 5; ++l) {
        Tensor z = add(matmul(h, in[1 + 2 * l]), in[2 + 2 * l]);
        h = l % 3 == 0 ? tanh(z) : (l % 3 == 1 ? sigmoid(z) : leaky_relu(z));
      }
      return random_projection(h, 99);
    };
    auto r = check_gradients(f, inputs);
    worst = std::max(worst, r.max_rel_error);
    ASSERT_TRUE(r.passed) << "seed " << seed << " rel " << r.max_rel_error;
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Properties, BackwardIsLinear) {
  std::mt19937_64 rng(42);
  Tensor x = random_tensor({3, 3}, rng);
  auto f = [](const Tensor& t) { return sum(tanh(matmul(t, t))); };
  auto g = [](const Tensor& t) { return sum(mul(sigmoid(t), t)); };
  const double a = 0.7, b = -1.3;

  backward(f(x));
  std::vector<double> gf(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(g(x));
  std::vector<double> gg(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(add(scale(f(x), a), scale(g(x), b)));
  for (std::size_t i = 0; i < gf.size(); ++i) EXPECT_NEAR(x.grad()[i], a * gf[i] + b * gg[i], 1e-12);
}

TEST(Properties, DeterministicForSameSeed) {
  auto run = [] {
    std::mt19937_64 rng(1234);
    Tensor a = random_tensor({4, 4}, rng);
    Tensor b = random_tensor({4, 4}, rng);
    backward(sum(tanh(matmul(a, b))));
    std::vector<double> out(a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Attention, MaskedSoftmaxZeroesPaddingAndNormalizes) {
  Tensor s = Tensor::matrix(2, 3, {1.0, 2.0, 3.0, 0.5, -1.0, 4.0});
  Tensor w = masked_softmax(s, {1, 1, 0, 0, 1, 0});
  EXPECT_EQ(w.at(0, 2), 0.0);
  EXPECT_EQ(w.at(1, 0), 0.0);
  EXPECT_EQ(w.at(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(w.at(1, 1), 1.0);
  EXPECT_NEAR(w.at(0, 0) + w.at(0, 1), 1.0, 1e-12);
  EXPECT_THROW(masked_softmax(s, {0, 0, 0, 1, 1, 1}), DimensionError);
}

TEST(Attention, PrimitivesMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto q = random_tensor({2, 3}, rng);
    auto st = random_tensor({2, 4, 3}, rng);
    std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1, 0, 0};
    auto r = check_gradients(
        [&mask](const std::vector<Tensor>& in) {
          Tensor w = masked_softmax(batched_dot(in[0], in[1]), mask);
          return random_projection(weighted_sum(w, in[1]), 5);
        },
        {q, st});
    EXPECT_TRUE(r.passed) << r.max_rel_error;
  }
}

TEST(Structural, SliceReshapeGatherStack) {
  Tensor x = Tensor::matrix(2, 4, {0, 1, 2, 3, 4, 5, 6, 7});
  expect_values(slice(x, 1, 1, 2), {1, 2, 5, 6});
  EXPECT_THROW(slice(x, 1, 3, 2), DimensionError);
  expect_values(gather_rows(x, {1, 0, 1}), {4, 5, 6, 7, 0, 1, 2, 3, 4, 5, 6, 7});
  EXPECT_THROW(gather_rows(x, {2}), DimensionError);
  Tensor st = stack_steps({Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::matrix(2, 2, {5, 6, 7, 8})});
  EXPECT_EQ(st.shape(), (Shape{2, 2, 2}));
  expect_values(st, {1, 2, 5, 6, 3, 4, 7, 8});

  std::mt19937_64 rng(9);
  auto r = check_gradients(
      [](const std::vector<Tensor>& in) {
        Tensor g = gather_rows(in[0], {2, 0, 2});
        return random_projection(stack_steps({slice(g, 1, 0, 2), slice(g, 1, 1, 2)}), 4);
      },
      {random_tensor({3, 3}, rng)});
  EXPECT_TRUE(r.passed);
}
