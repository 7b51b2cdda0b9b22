#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "nacl/error.hpp"
#include "nacl/gradcheck.hpp"
#include "nacl/ops.hpp"
#include "nacl/tape.hpp"

using namespace nacl;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Gradient of fn at x through the tape, and the matching finite-difference
// estimate.
std::pair<Tensor, Tensor> both_gradients(const std::function<Tensor(const Tensor&)>& fn,
                                         const Tensor& x, double h = 1e-5) {
  Tape tape;
  const Tensor leaf = tape.leaf(x);
  const Tensor root = fn(leaf);
  const Tensor analytic = tape.backward(root).grad(leaf);
  const Tensor numeric =
      finite_diff_grad([&](const Tensor& p) { return fn(p).item(); }, x, h);
  return {analytic, numeric};
}

struct Primitive {
  std::string name;
  std::function<Tensor(const Tensor&)> fn;
  Shape shape;
  double lo = -1.0;
  double hi = 1.0;
};

std::vector<Primitive> primitives() {
  const Tensor c = Tensor::matrix({{0.3, -0.7, 1.1}, {0.5, 0.2, -0.4}});
  const Tensor w = Tensor::matrix({{0.2, -0.1}, {0.4, 0.9}, {-0.6, 0.3}});
  const Tensor bias = Tensor::vector({0.1, -0.2, 0.3});
  const Tensor srow = Tensor::vector({1.5, -0.5});
  const Tensor mask = Tensor::matrix({{0, 1, 1}, {1, 0, 1}});
  return {
      {"add", [c](const Tensor& x) { return sum(mul(add(x, c), c)); }, {2, 3}},
      {"sub", [c](const Tensor& x) { return sum(mul(sub(c, x), x)); }, {2, 3}},
      {"mul", [](const Tensor& x) { return sum(mul(x, x)); }, {2, 3}},
      {"div", [c](const Tensor& x) { return sum(div(c, x)); }, {2, 3}, 0.5, 2.0},
      {"scalar_broadcast",
       [c](const Tensor& x) { return sum(mul(reshape(x, {}), c)); }, {1}},
      {"neg_scale_shift",
       [](const Tensor& x) { return sum(mul(add_scalar(scale(neg(x), 2.5), 0.3), x)); },
       {2, 3}},
      {"exp", [](const Tensor& x) { return sum(exp(x)); }, {2, 3}},
      {"log", [](const Tensor& x) { return sum(log(x)); }, {2, 3}, 0.2, 3.0},
      {"tanh", [](const Tensor& x) { return sum(tanh(x)); }, {2, 3}},
      {"relu", [c](const Tensor& x) { return sum(mul(relu(x), c)); }, {2, 3}},
      {"maximum", [c](const Tensor& x) { return sum(mul(maximum(x, 0.1), c)); }, {2, 3}},
      {"matmul_left", [w](const Tensor& x) { return sum(exp(matmul(x, w))); }, {2, 3}},
      {"matmul_right", [c](const Tensor& x) { return sum(exp(matmul(c, x))); }, {3, 2}},
      {"transpose", [w](const Tensor& x) { return sum(mul(transpose(x), w)); }, {2, 3}},
      {"mean", [](const Tensor& x) { return mean(mul(x, x)); }, {2, 3}},
      {"sum_rows", [](const Tensor& x) { return sum(exp(sum_rows(x))); }, {2, 3}},
      {"mean_rows", [](const Tensor& x) { return sum(exp(mean_rows(x))); }, {2, 3}},
      {"add_bias",
       [bias](const Tensor& x) { return sum(exp(add_bias(x, bias))); }, {2, 3}},
      {"add_bias_vector",
       [c](const Tensor& b) { return sum(exp(add_bias(c, b))); }, {3}},
      {"scale_rows",
       [srow](const Tensor& x) { return sum(exp(scale_rows(x, srow))); }, {2, 3}},
      {"scale_rows_vector",
       [c](const Tensor& s) { return sum(exp(scale_rows(c, s))); }, {2}},
      {"l2_normalize_rows",
       [c](const Tensor& x) { return sum(mul(l2_normalize_rows(x), c)); }, {2, 3}},
      {"row_dot", [c](const Tensor& x) { return sum(exp(row_dot(x, c))); }, {2, 3}},
      {"gather_rows",
       [](const Tensor& x) { return sum(exp(gather_rows(x, {1, 0, 1}))); }, {2, 3}},
      {"take_along_rows",
       [](const Tensor& x) { return sum(exp(take_along_rows(x, {2, 0, 1, 1}, 2))); },
       {2, 3}},
      {"concat_rows",
       [c](const Tensor& x) { return sum(exp(concat_rows({c, x, x}))); }, {2, 3}},
      {"pairwise_sq_distances",
       [](const Tensor& x) { return sum(exp(neg(pairwise_sq_distances(x)))); }, {3, 2}},
      {"masked_row_softmax",
       [c, mask](const Tensor& x) { return sum(mul(masked_row_softmax(x, mask), c)); },
       {2, 3}},
      {"softmax_cross_entropy_rows",
       [](const Tensor& x) { return sum(softmax_cross_entropy_rows(x, {2, 0})); }, {2, 3}},
  };
}

}  // namespace

TEST(ForwardOps, NormalizesThreeFourFive) {
  const Tensor y = l2_normalize_rows(Tensor::matrix({{3, 4}}));
  EXPECT_DOUBLE_EQ(y.at(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(y.at(0, 1), 0.8);
}

TEST(ForwardOps, ExpOfZeroIsOne) {
  EXPECT_EQ(exp(Tensor::vector({0.0}))[0], 1.0);
}

TEST(ForwardOps, RowDotOfOrthogonalVectorsIsZero) {
  EXPECT_EQ(row_dot(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}}))[0], 0.0);
}

TEST(ForwardOps, SignOfZeroIsZero) {
  const Tensor s = sign(Tensor::vector({-2.0, 0.0, 3.0}));
  EXPECT_EQ(s[0], -1.0);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_EQ(s[2], 1.0);
}

TEST(ForwardOps, ShapeMismatchNamesOperationAndShapes) {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[3, 2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(row_dot(Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), ShapeError);
}

TEST(ForwardOps, ZeroRowNormalizationIsAnError) {
  EXPECT_THROW(l2_normalize_rows(Tensor::matrix({{1, 1}, {0, 0}})), ValueError);
}

TEST(ForwardOps, UntrackedOperandsGiveUntrackedResults) {
  const Tensor y = exp(Tensor::vector({1.0, 2.0}));
  EXPECT_FALSE(y.tracked());
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_TRUE(add(x, Tensor::vector({0.0, 1.0})).tracked());
  EXPECT_FALSE(sign(x).tracked());
}

TEST(ForwardOps, MixingTapesIsAnError) {
  Tape a, b;
  const Tensor x = a.leaf(Tensor::vector({1.0}));
  const Tensor y = b.leaf(Tensor::vector({1.0}));
  EXPECT_THROW(add(x, y), Error);
}

TEST(Backward, SquareAtThreeHasGradientSix) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::scalar(3.0));
  const auto grads = tape.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(grads.grad(x).item(), 6.0);
}

TEST(Backward, NormalizedSumAtAxisVector) {
  auto fn = [](const Tensor& v) { return sum(l2_normalize_rows(v)); };
  const Tensor v = Tensor::matrix({{1, 0}});
  const auto [analytic, numeric] = both_gradients(fn, v, 1e-6);
  EXPECT_NEAR(analytic[0], 0.0, 1e-15);
  EXPECT_NEAR(analytic[1], 1.0, 1e-15);
  EXPECT_NEAR(numeric[0], 0.0, 1e-8);
  EXPECT_NEAR(numeric[1], 1.0, 1e-8);
}

TEST(Backward, UntrackedRootIsAnError) {
  Tape tape;
  EXPECT_THROW(tape.backward(sum(Tensor::vector({1.0, 2.0}))), Error);
}

TEST(Backward, NonScalarRootIsAnError) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(exp(x)), ShapeError);
}

TEST(Backward, UnreachableLeafGetsZeros) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::vector({1.0, 2.0}));
  const Tensor unused = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  const auto grads = tape.backward(sum(x));
  const Tensor g = grads.grad(unused);
  EXPECT_EQ(g.shape(), unused.shape());
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(grads.has(unused));
}

TEST(Backward, EveryAncestorGradientMatchesValueShape) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::matrix({{0.5, -1.0}, {2.0, 0.25}}));
  const Tensor w = tape.leaf(Tensor::matrix({{1.0, 0.5, -0.3}, {0.2, -0.7, 0.4}}));
  const Tensor root = mean(exp(row_dot(matmul(x, w), matmul(x, w))));
  const auto grads = tape.backward(root);
  // Every node here is an ancestor of the root.
  for (std::size_t k = 0; k < tape.size(); ++k) {
    ASSERT_TRUE(grads.node_grad(k).has_value()) << tape.op(k);
    EXPECT_EQ(grads.node_grad(k)->shape(), tape.value(k).shape()) << tape.op(k);
  }
}

TEST(FiniteDiff, SquareAndExp) {
  auto sq = [](const Tensor& x) { return x[0] * x[0]; };
  EXPECT_NEAR(finite_diff_grad(sq, Tensor::vector({3.0}), 1e-5)[0], 6.0, 1e-8);
  auto ex = [](const Tensor& x) { return std::exp(x[0]); };
  EXPECT_NEAR(finite_diff_grad(ex, Tensor::vector({0.0}), 1e-5)[0], 1.0, 1e-8);
  EXPECT_THROW(finite_diff_grad(sq, Tensor::vector({1.0}), 0.0), ValueError);
}

// backward() agrees with central differences for every primitive.
TEST(Backward, PrimitivesMatchFiniteDifferencesOnFiftySeeds) {
  for (const auto& p : primitives()) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 11);
      const Tensor x = random_tensor(p.shape, rng, p.lo, p.hi);
      const auto [analytic, numeric] = both_gradients(p.fn, x);
      EXPECT_LE(relative_error(analytic, numeric), 1e-5) << p.name << " seed " << seed;
    }
  }
}

TEST(Backward, NormalizedRowsHaveUnitNorm) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor y = l2_normalize_rows(random_tensor({6, 5}, rng, -3.0, 3.0));
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (double v : y.row(i)) s += v * v;
      EXPECT_NEAR(std::sqrt(s), 1.0, 1e-12);
    }
  }
}

TEST(Tape, ParentsPrecedeChildren) {
  Tape tape;
  const Tensor x = tape.leaf(Tensor::matrix({{1, 2}, {3, 4}}));
  const Tensor y = l2_normalize_rows(matmul(x, transpose(x)));
  sum(mul(y, y));
  for (std::size_t k = 0; k < tape.size(); ++k) {
    for (auto p : tape.parents(k)) EXPECT_LT(p, k);
  }
}

TEST(Tape, ReplayReproducesValuesBitForBit) {
  std::mt19937_64 rng(17);
  Tape tape;
  const Tensor x = tape.leaf(random_tensor({4, 3}, rng));
  const Tensor w = tape.leaf(random_tensor({3, 5}, rng));
  const Tensor h = l2_normalize_rows(tanh(add_bias(matmul(x, w), Tensor::filled({5}, 0.01))));
  const Tensor s = masked_row_softmax(neg(pairwise_sq_distances(h)),
                                      Tensor::matrix(4, 4, {0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1,
                                                            1, 1, 1, 0}));
  mean(log(sum_rows(s)));
  const auto replayed = tape.replay();
  ASSERT_EQ(replayed.size(), tape.size());
  for (std::size_t k = 0; k < tape.size(); ++k) {
    EXPECT_TRUE(bitwise_equal(replayed[k], tape.value(k))) << tape.op(k);
  }
}

TEST(Tape, IdenticalForwardPassesAreBitwiseIdentical) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tape tape;
    const Tensor x = tape.leaf(random_tensor({8, 4}, rng));
    const Tensor w = tape.leaf(random_tensor({4, 4}, rng));
    const Tensor root = mean(exp(row_dot(l2_normalize_rows(matmul(x, w)), x)));
    return std::pair{root.item(), tape.backward(root).grad(w)};
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_TRUE(bitwise_equal(a.second, b.second));
}
