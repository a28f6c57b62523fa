#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "gearnet/backbone.hpp"
#include "gearnet/tensor.hpp"
#include "gradcheck.hpp"

using namespace gearnet;
using gearnet::testing::gradcheck;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, bool grad = false, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(r * c);
  for (double& x : v) x = n(rng);
  return Tensor::from({r, c}, std::move(v), grad);
}

}  // namespace

// ---------------------------------------------------------------------------
// construction

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from({0, 2}, {}), DimensionError);
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6U);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
}

// ---------------------------------------------------------------------------
// matmul

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  const Tensor c = matmul(eye, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumnIsDotProduct) {
  const Tensor c = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(c.item(), 11.0);
}

TEST(Matmul, ZeroMatrixAnnihilates) {
  std::mt19937_64 rng(3);
  const Tensor c = matmul(Tensor::zeros({3, 4}), random_matrix(4, 5, rng));
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  Tensor a = random_matrix(3, 4, rng, true);
  Tensor b = random_matrix(4, 2, rng, true);
  const Tensor w = random_matrix(3, 2, rng);
  const auto r = gradcheck([&] { return sum(mul(matmul(a, b), w)); }, {a, b});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

// ---------------------------------------------------------------------------
// relu

TEST(Relu, SignCases) {
  const Tensor y = relu(Tensor::from({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 0, 2}));
}

TEST(Relu, PositiveInputPassesThrough) {
  const Tensor x = Tensor::from({4}, {0.5, 1, 2, 30});
  const Tensor y = relu(x);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Relu, GradientOfSumMatchesFiniteDifferences) {
  Tensor x = Tensor::from({2}, {-1, 2}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  x.zero_grad();
  EXPECT_LT(gradcheck([&] { return sum(relu(x)); }, {x}).max_rel_error, 1e-8);
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Tensor x = Tensor::from({1}, {0.0}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
}

// ---------------------------------------------------------------------------
// log_softmax

TEST(LogSoftmax, UniformRow) {
  const Tensor y = log_softmax(Tensor::from({1, 2}, {0, 0}));
  EXPECT_NEAR(y.at(0, 0), std::log(0.5), 1e-15);
  EXPECT_NEAR(y.at(0, 1), std::log(0.5), 1e-15);
}

TEST(LogSoftmax, LargeEqualLogitsDoNotOverflow) {
  const Tensor y = log_softmax(Tensor::from({1, 2}, {1000, 1000}));
  EXPECT_NEAR(y.at(0, 0), std::log(0.5), 1e-12);
  EXPECT_NEAR(y.at(0, 1), std::log(0.5), 1e-12);
}

TEST(LogSoftmax, TwoClassClosedForm) {
  const double e = std::exp(1.0);
  const Tensor p = softmax(Tensor::from({1, 2}, {1, 0}));
  EXPECT_NEAR(p.at(0, 0), e / (e + 1.0), 1e-12);
  EXPECT_NEAR(p.at(0, 1), 1.0 / (e + 1.0), 1e-12);
  EXPECT_NEAR(p.at(0, 0), 0.7311, 1e-4);
  EXPECT_NEAR(p.at(0, 1), 0.2689, 1e-4);
}

TEST(LogSoftmax, NonFiniteLogitsAreRejected) {
  EXPECT_THROW(log_softmax(Tensor::from({1, 2}, {NAN, 0})), NumericError);
  EXPECT_THROW(log_softmax(Tensor::from({1, 2}, {INFINITY, 0})), NumericError);
  EXPECT_THROW(log_softmax(Tensor::from({1, 1}, {0})), DimensionError);
}

TEST(LogSoftmax, RowsExponentiateToDistributionsUpToMagnitude1e4) {
  std::mt19937_64 rng(5);
  for (double magnitude : {1.0, 1e2, 1e3, 1e4}) {
    std::uniform_real_distribution<double> u(-magnitude, magnitude);
    std::vector<double> v(50 * 7);
    for (double& x : v) x = u(rng);
    const Tensor p = softmax(Tensor::from({50, 7}, v));
    for (std::size_t i = 0; i < 50; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(p.at(i, j), 0.0);
        total += p.at(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-9) << "magnitude " << magnitude;
    }
  }
}

TEST(LogSoftmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor z = random_matrix(4, 3, rng, true);
  const Tensor w = random_matrix(4, 3, rng);
  EXPECT_LT(gradcheck([&] { return sum(mul(log_softmax(z), w)); }, {z}).max_rel_error, 1e-6);
}

// ---------------------------------------------------------------------------
// grad_reverse

TEST(GradReverse, ForwardIsIdentity) {
  const Tensor x = Tensor::from({2}, {1, 2});
  const Tensor y = grad_reverse(x, 1.0);
  EXPECT_EQ(y.data()[0], 1.0);
  EXPECT_EQ(y.data()[1], 2.0);
}

TEST(GradReverse, ForwardIsBitwiseEqual) {
  std::mt19937_64 rng(13);
  const Tensor x = random_matrix(6, 5, rng, true, 1e3);
  const Tensor y = grad_reverse(x, 0.37);
  EXPECT_EQ(0, std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(double)));
}

TEST(GradReverse, BackwardNegatesAndScales) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  sum(grad_reverse(x, 1.0)).backward();
  EXPECT_EQ(x.grad()[0], -1.0);
  EXPECT_EQ(x.grad()[1], -1.0);

  Tensor x0 = Tensor::from({2}, {1, 2}, true);
  sum(grad_reverse(x0, 0.0)).backward();
  EXPECT_EQ(x0.grad()[0], 0.0);
  EXPECT_EQ(x0.grad()[1], 0.0);
}

TEST(GradReverse, NegativeLambdaIsRejected) {
  EXPECT_THROW(grad_reverse(Tensor::from({1}, {1}), -0.5), ParameterError);
}

// ---------------------------------------------------------------------------
// backward

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossIsAContractError) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(mul(x, x).backward(), ContractError);
}

TEST(Backward, RepeatedCallsAccumulateUntilZeroed) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Backward, SharedSubexpressionReceivesBothContributions) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  const Tensor y = mul(x, x);  // used twice below
  sum(add(y, scale(y, 2.0))).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0 * 2.0 * 3.0);
}

TEST(Backward, EveryReachableLeafGetsAGradient) {
  std::mt19937_64 rng(17);
  Tensor a = random_matrix(2, 3, rng, true);
  Tensor b = Tensor::from({3}, {0.1, 0.2, 0.3}, true);
  Tensor unused = Tensor::zeros({2}, true);
  mean(relu(add_bias(a, b))).backward();
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_FALSE(unused.has_grad());
}

TEST(Backward, NoGradGuardStopsRecording) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(sum(x).requires_grad());
  }
  EXPECT_TRUE(sum(x).requires_grad());
}

TEST(Graph, TraceListsInputsBeforeConsumers) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  const Tensor y = mul(x, x);
  const Tensor z = sum(y);
  const Graph g = Graph::trace(z);
  ASSERT_EQ(g.nodes.size(), 3U);
  EXPECT_EQ(g.nodes[0], x.node());
  EXPECT_EQ(g.nodes[1], y.node());
  EXPECT_EQ(g.nodes[2], z.node());
}

// ---------------------------------------------------------------------------
// remaining differentiable ops

TEST(Ops, ElementwiseAndReductionGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(19);
  Tensor a = random_matrix(3, 4, rng, true);
  Tensor b = random_matrix(3, 4, rng, true);
  Tensor bias = Tensor::from({4}, {0.3, -0.2, 0.1, 0.5}, true);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  std::vector<double> pos(12);
  for (double& v : pos) v = u(rng);
  Tensor c = Tensor::from({3, 4}, pos, true);
  const std::vector<int> cols{0, 3, 1};
  const std::vector<std::size_t> rows{2, 0, 2};

  auto loss = [&] {
    Tensor t = add_bias(sub(mul(a, b), scale(a, 0.5)), bias);
    t = add(t, log(c));
    t = add(t, exp(scale(b, 0.3)));
    Tensor picked = gather(t, cols);
    Tensor selected = select_rows(t, rows);
    Tensor stacked = concat_rows(selected, t);
    return add(mean(picked), sum(row_sum(mul(stacked, stacked))));
  };
  EXPECT_LT(gradcheck(loss, {a, b, bias, c}).max_rel_error, 1e-6);
}

TEST(Ops, ClampMinHasZeroGradientBelowFloor) {
  Tensor x = Tensor::from({3}, {1e-12, 0.5, 2.0}, true);
  sum(clamp_min(x, 1e-8)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
}

TEST(Ops, GatherRejectsOutOfRangeIndex) {
  const std::vector<int> bad{0, 5};
  EXPECT_THROW(gather(Tensor::zeros({2, 3}), bad), ContractError);
}

// ---------------------------------------------------------------------------
// sgd_step

TEST(Sgd, PlainGradientDescent) {
  std::vector<Tensor> p{Tensor::scalar(1.0)}, g{Tensor::scalar(2.0)}, v{Tensor::scalar(0.0)};
  sgd_step(p, g, 0.1, 0.0, v);
  EXPECT_DOUBLE_EQ(p[0].item(), 0.8);
}

TEST(Sgd, MomentumRecurrence) {
  std::vector<Tensor> p{Tensor::scalar(0.0)}, g{Tensor::scalar(1.0)}, v{Tensor::scalar(0.0)};
  sgd_step(p, g, 0.1, 0.9, v);
  EXPECT_NEAR(p[0].item(), -0.1, 1e-15);
  sgd_step(p, g, 0.1, 0.9, v);
  EXPECT_NEAR(p[0].item(), -0.29, 1e-15);
  EXPECT_NEAR(v[0].item(), 1.9, 1e-15);
}

TEST(Sgd, ZeroGradientIsAFixedPoint) {
  std::vector<Tensor> p{Tensor::from({3}, {1, -2, 3})}, g{Tensor::zeros({3})}, v{Tensor::zeros({3})};
  sgd_step(p, g, 0.5, 0.9, v);
  EXPECT_EQ(std::vector<double>(p[0].data().begin(), p[0].data().end()), (std::vector<double>{1, -2, 3}));
}

TEST(Sgd, MisalignedShapesAreRejected) {
  std::vector<Tensor> p{Tensor::zeros({3})}, g{Tensor::zeros({2})}, v{Tensor::zeros({3})};
  EXPECT_THROW(sgd_step(p, g, 0.1, 0.9, v), DimensionError);
  std::vector<Tensor> g2{Tensor::zeros({3}), Tensor::zeros({3})};
  EXPECT_THROW(sgd_step(p, g2, 0.1, 0.9, v), DimensionError);
}

// ---------------------------------------------------------------------------
// composed network

TEST(MlpGradients, MatchFiniteDifferencesOver100Seeds) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Mlp net(MlpSpec{{3, 8, 4}, 0.5}, seed);
    std::mt19937_64 rng(seed + 1000);
    const Tensor x = random_matrix(5, 3, rng);
    std::vector<int> y(5);
    for (int& v : y) v = static_cast<int>(rng() % 4);
    auto loss = [&] { return scale(mean(gather(log_softmax(net.logits(x)), y)), -1.0); };
    worst = std::max(worst, gradcheck(loss, net.parameters()).max_rel_error);
  }
  EXPECT_LT(worst, 1e-4);
}
