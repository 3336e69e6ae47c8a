#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "metaworld/numcore/adam.hpp"
#include "metaworld/numcore/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/primitive_cases.hpp"

namespace nc = metaworld::numcore;
using metaworld::NumericalError;
using metaworld::ShapeError;
using nc::Graph;
using nc::Parameter;
using nc::Tensor;

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor<double>({0, 2}), ShapeError);
}

TEST(Primitives, MatmulHandValue) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>::matrix({{1, 2}, {3, 4}}));
  auto b = g.constant(Tensor<double>::matrix({{1}, {1}}));
  auto c = nc::matmul(a, b);
  EXPECT_EQ(c.shape(), (nc::Shape{2, 1}));
  EXPECT_EQ(c.value()[0], 3);
  EXPECT_EQ(c.value()[1], 7);
}

TEST(Primitives, SigmoidAtZero) {
  Graph<double> g;
  auto x = g.variable(Tensor<double>::scalar(0.0));
  auto y = nc::sigmoid(x);
  EXPECT_DOUBLE_EQ(y.value().item(), 0.5);
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 0.25);
}

TEST(Primitives, SumOfOnes) {
  Graph<double> g;
  auto x = g.variable(Tensor<double>({2, 3}, 1.0));
  auto s = nc::sum(x);
  EXPECT_EQ(s.value().item(), 6);
  g.backward(s);
  EXPECT_EQ(g.grad(x), Tensor<double>({2, 3}, 1.0));
}

TEST(Primitives, ShapeErrorsNameThePrimitive) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 3}));
  auto b = g.constant(Tensor<double>({2, 3}));
  try {
    nc::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(nc::add(a, g.constant(Tensor<double>({3, 2}))), ShapeError);
  EXPECT_THROW(nc::slice(a, 1, 2, 4), ShapeError);
  EXPECT_THROW(nc::reshape(a, {4}), ShapeError);
  EXPECT_THROW(nc::add_bias(a, g.constant(Tensor<double>({1, 2}))), ShapeError);
}

TEST(Backward, SquareDerivative) {
  Graph<double> g;
  auto x = g.variable(Tensor<double>::scalar(3.0));
  g.backward(nc::square(x));
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 6.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Graph<double> g;
  auto x = g.variable(Tensor<double>({2, 2}, 1.0));
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Backward, DisconnectedParameterGetsZero) {
  Parameter<double> used("used", Tensor<double>({1, 2}, 1.0));
  Parameter<double> unused("unused", Tensor<double>({1, 2}, 1.0));
  Graph<double> g;
  auto u = g.param(used);
  g.param(unused);
  g.backward(nc::sum(nc::square(u)));
  EXPECT_EQ(used.grad, Tensor<double>({1, 2}, 2.0));
  EXPECT_EQ(unused.grad, Tensor<double>({1, 2}, 0.0));
}

TEST(Backward, SumSigmoidMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto w = metaworld::testing::random_tensor(rng, {3, 4}, -0.5, 0.5);
  auto x = metaworld::testing::random_tensor(rng, {4, 2}, -0.5, 0.5);
  auto build = [](Graph<double>&, const std::vector<nc::Var<double>>& v) {
    return nc::sum(nc::sigmoid(nc::matmul(v[0], v[1])));
  };
  EXPECT_LT(metaworld::testing::max_gradient_error(build, {w, x}), 1e-4);
}

TEST(Backward, EveryPrimitivePassesRandomisedGradientCheck) {
  for (const auto& pc : metaworld::testing::primitive_cases()) {
    std::mt19937_64 rng(1234);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      auto c = pc.make(rng);
      worst = std::max(worst, metaworld::testing::max_gradient_error(c.build, c.inputs));
    }
    EXPECT_LT(worst, 1e-4) << pc.name;
  }
}

TEST(Backward, IsDeterministic) {
  std::mt19937_64 rng(5);
  auto a = metaworld::testing::random_tensor(rng, {5, 7});
  auto b = metaworld::testing::random_tensor(rng, {7, 3});
  auto run = [&] {
    Graph<double> g;
    auto va = g.variable(a);
    auto vb = g.variable(b);
    g.backward(nc::sum(nc::tanh(nc::matmul(va, vb))));
    return std::make_pair(g.grad(va), g.grad(vb));
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, ChainOfTwoStagesMatchesJacobianProduct) {
  // d/dx sum(exp(tanh(x))) = exp(tanh x) * (1 - tanh^2 x), stage by stage.
  std::mt19937_64 rng(21);
  auto x = metaworld::testing::random_tensor(rng, {3, 3});
  Graph<double> g;
  auto vx = g.variable(x);
  g.backward(nc::sum(nc::exp(nc::tanh(vx))));
  auto grad = g.grad(vx);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double t = std::tanh(x[k]);
    EXPECT_NEAR(grad[k], std::exp(t) * (1 - t * t), 1e-12);
  }
}

TEST(Backward, SparseConstantOperandMatchesDensePath) {
  std::mt19937_64 rng(3);
  Tensor<double> frames({6, 64});
  for (std::size_t r = 0; r < 6; ++r) frames.at(r, (r * 7) % 64) = 1.0;
  auto w = metaworld::testing::random_tensor(rng, {64, 5});

  Graph<double> sparse;
  auto ws = sparse.variable(w);
  auto ys = nc::matmul(sparse.constant(frames), ws);
  sparse.backward(nc::sum(nc::square(ys)));

  Graph<double> dense;
  auto wd = dense.variable(w);
  auto yd = nc::matmul(dense.variable(frames), wd);
  dense.backward(nc::sum(nc::square(yd)));

  for (std::size_t k = 0; k < ys.value().size(); ++k) EXPECT_NEAR(ys.value()[k], yd.value()[k], 1e-12);
  auto gs = sparse.grad(ws), gd = dense.grad(wd);
  for (std::size_t k = 0; k < gs.size(); ++k) EXPECT_NEAR(gs[k], gd[k], 1e-12);
}

TEST(Backward, CheckedModeFlagsNonFinite) {
  Graph<double> g(true);
  auto x = g.constant(Tensor<double>::scalar(1000.0));
  EXPECT_THROW(nc::exp(x), NumericalError);
}

TEST(Adam, ZeroGradientDecaysMoments) {
  Parameter<double> p("p", Tensor<double>::scalar(1.5));
  nc::Adam<double> opt({&p}, {});
  p.grad[0] = 1.0;
  opt.step();
  const double m_before = opt.first_moment(0)[0];
  const double v_before = opt.second_moment(0)[0];
  p.grad[0] = 0.0;
  opt.step();
  EXPECT_DOUBLE_EQ(opt.first_moment(0)[0], 0.9 * m_before);
  EXPECT_DOUBLE_EQ(opt.second_moment(0)[0], 0.999 * v_before);
}

TEST(Adam, FromZeroStateZeroGradientIsFixedPoint) {
  Parameter<double> p("p", Tensor<double>({2, 2}, 0.7));
  nc::Adam<double> opt({&p}, {});
  p.zero_grad();
  opt.step();
  EXPECT_EQ(p.value, Tensor<double>({2, 2}, 0.7));
}

TEST(Adam, FirstStepIsLearningRateSized) {
  // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  Parameter<double> p("p", Tensor<double>::scalar(0.0));
  nc::Adam<double> opt({&p}, {.learning_rate = 0.1});
  p.grad[0] = 1.0;
  opt.step();
  EXPECT_NEAR(p.value[0], -0.1, 1e-8);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Adam, IdenticalParamsGetIdenticalUpdates) {
  Parameter<double> a("a", Tensor<double>({3}, 0.2));
  Parameter<double> b("b", Tensor<double>({3}, 0.2));
  nc::Adam<double> opt({&a, &b}, {.learning_rate = 0.01});
  for (int i = 0; i < 5; ++i) {
    a.grad = Tensor<double>({3}, std::vector<double>{0.1 * i, -0.3, 2.0});
    b.grad = a.grad;
    opt.step();
  }
  EXPECT_EQ(a.value, b.value);
}

TEST(Adam, NanGradientAbortsAndNamesParameter) {
  Parameter<double> ok("ok", Tensor<double>::scalar(1.0));
  Parameter<double> bad("decoder.w", Tensor<double>::scalar(1.0));
  nc::Adam<double> opt({&ok, &bad}, {});
  ok.grad[0] = 1.0;
  bad.grad[0] = std::nan("");
  try {
    opt.step();
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.w"), std::string::npos);
  }
  EXPECT_EQ(ok.value[0], 1.0);
  EXPECT_EQ(opt.step_count(), 0u);
}
