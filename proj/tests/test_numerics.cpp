#include <gtest/gtest.h>

#include <cmath>

#include "vistab/numerics/grad_check.hpp"
#include "vistab/numerics/nn.hpp"
#include "vistab/numerics/optim.hpp"
#include "vistab/numerics/ops.hpp"
#include "vistab/numerics/rng.hpp"

using namespace vistab;

namespace {

Tensord random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensord t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Matmul, IdentityTimesIdentity) {
  EXPECT_EQ(matmul(Tensord::identity(2), Tensord::identity(2)), Tensord::identity(2));
}

TEST(Matmul, UnitColumnSelectsSecondColumn) {
  auto r = matmul(Tensord::matrix({{1, 2}, {3, 4}}), Tensord::matrix({{0}, {1}}));
  EXPECT_EQ(r, Tensord::matrix({{2}, {4}}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(3);
  auto a = random_tensor({5, 7}, rng).cast<float>();
  auto b = random_tensor({7, 3}, rng).cast<float>();
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0;
      for (std::size_t k = 0; k < 7; ++k) ref += double(a(i, k)) * double(b(k, j));
      EXPECT_NEAR(c(i, j), ref, 1e-6);
    }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensord({2, 3}), Tensord({2, 3})), DimensionError);
}

TEST(Matmul, RightIdentityIsExact) {
  auto a = Tensord::matrix({{1, -2, 3}, {4, 5, -6}});
  EXPECT_EQ(matmul(a, Tensord::identity(3)), a);
}

TEST(Softmax, Examples) {
  auto s = softmax_rows(Tensord::matrix({{0, 0}, {1000, 1000}}));
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s(1, 1), 0.5);
  auto e = softmax_rows(Tensord::matrix({{std::log(1.0), std::log(2.0), std::log(3.0)}}));
  EXPECT_NEAR(e(0, 0), 1.0 / 6, 1e-15);
  EXPECT_NEAR(e(0, 1), 2.0 / 6, 1e-15);
  EXPECT_NEAR(e(0, 2), 3.0 / 6, 1e-15);
}

TEST(Softmax, RowsSumToOneProperty) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(9);
    const double spread = std::pow(10.0, rng.uniform(-2, 3));
    auto x = random_tensor({m, n}, rng, -spread, spread).cast<float>();
    auto s = softmax_rows(x);
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(s(i, j), 0.0f);
        total += s(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  const bool mask[] = {true, false, true, true};
  auto s = softmax_rows(Tensord::matrix({{0, 50, 0, 0}}), mask);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_NEAR(s(0, 0), 1.0 / 3, 1e-15);
}

TEST(Activations, ScalarValues) {
  EXPECT_EQ(elu(0.0), 0.0);
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_EQ(std::tanh(0.0), 0.0);
  EXPECT_NEAR(elu(-50.0), -1.0, 1e-15);
  EXPECT_EQ(elu(2.5), 2.5);
  EXPECT_EQ(relu(-1.0), 0.0);
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  auto y = layer_norm(Tensord::matrix({{3, 3, 3, 3}}), Tensord::ones({4}), Tensord({4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(GradCheck, QuadraticIsExact) {
  std::function<Var<double>(Tape<double>&, Var<double>)> f = [](Tape<double>&, Var<double> x) {
    return sum(square(x));
  };
  auto r = grad_check(f, Tensord::vector({3.0}), 1e-3);
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(GradCheck, NonFiniteLossIsDiagnosed) {
  std::function<Var<double>(Tape<double>&, Var<double>)> f = [](Tape<double>&, Var<double> x) {
    return sum(log(x));
  };
  EXPECT_THROW(grad_check(f, Tensord::vector({-1.0}), 1e-3), NumericalError);
}

TEST(GradCheck, ScalarProbesOfSoftmaxLayerNormElu) {
  Rng rng(5);
  const Tensord w = random_tensor({3, 5}, rng);
  using Block = std::function<Var<double>(Tape<double>&, Var<double>)>;
  Block soft = [&](Tape<double>&, Var<double> x) { return weighted_sum(softmax_rows(x), w); };
  Block lnorm = [&](Tape<double>& t, Var<double> x) {
    auto g = t.constant(Tensord::vector({1.5, -0.5, 2.0, 1.0, 0.7}));
    auto b = t.constant(Tensord::vector({0.1, 0.2, 0.3, 0.4, 0.5}));
    return weighted_sum(layer_norm(x, g, b), w);
  };
  Block el = [&](Tape<double>&, Var<double> x) { return weighted_sum(elu(x), w); };
  for (const Block* b : {&soft, &lnorm, &el}) {
    auto r = grad_check(*b, random_tensor({3, 5}, rng, -2, 2), 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-5) << r.worst;
  }
}

TEST(GradCheck, EveryPrimitiveOp) {
  Rng rng(9);
  using Block = std::function<Var<double>(Tape<double>&, Var<double>)>;
  const Tensord other = random_tensor({4, 4}, rng, 0.5, 1.5);
  const Tensord w = random_tensor({4, 4}, rng);
  std::vector<Block> blocks = {
      [&](Tape<double>& t, Var<double> x) { return weighted_sum(matmul(x, t.constant(other)), w); },
      [&](Tape<double>& t, Var<double> x) { return weighted_sum(matmul(t.constant(other), x), w); },
      [&](Tape<double>& t, Var<double> x) { return weighted_sum(x / t.constant(other), w); },
      [&](Tape<double>& t, Var<double> x) { return weighted_sum(t.constant(other) / (x + t.constant(other)), w); },
      [&](Tape<double>& t, Var<double> x) { return weighted_sum(x * x - transpose(x), w); },
      [&](Tape<double>&, Var<double> x) { return weighted_sum(sigmoid(x) + tanh(x), w); },
      [&](Tape<double>&, Var<double> x) { return weighted_sum(exp(x), w); },
      [&](Tape<double>&, Var<double> x) { return weighted_sum(log_softmax_rows(x), w); },
      [&](Tape<double>& t, Var<double> x) { return weighted_sum(maximum(x, t.constant(w)), other); },
      [&](Tape<double>&, Var<double> x) {
        return sum(square(concat_cols(std::vector{x, slice_rows(x, 0, 4)})));
      },
      [&](Tape<double>&, Var<double> x) {
        return weighted_sum(reshape(concat_rows(std::vector{slice_rows(x, 1, 3), slice_rows(x, 0, 2)}), {4, 4}), w);
      },
      [&](Tape<double>& t, Var<double> x) {
        return mean(square(add_row(x, t.constant(Tensord::vector({1, 2, 3, 4})))));
      },
  };
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    auto r = grad_check(blocks[k], random_tensor({4, 4}, rng), 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-5) << "block " << k << " at " << r.worst;
  }
}

TEST(GradCheck, ConvolutionAndTransposedConvolution) {
  Rng rng(21);
  Parameter<double> w1("w1", random_tensor({3, 2, 3, 3}, rng));
  Parameter<double> b1("b1", random_tensor({3}, rng));
  Parameter<double> w2("w2", random_tensor({3, 2, 3, 3}, rng));
  Parameter<double> b2("b2", random_tensor({2}, rng));
  const Tensord input = random_tensor({2, 2, 7, 7}, rng);
  const Tensord weights = random_tensor({2, 2, 7, 7}, rng);
  Parameter<double> x("x", input);
  std::function<Var<double>(Tape<double>&)> block = [&](Tape<double>& t) {
    auto h = tanh(conv2d(t.param(x), t.param(w1), t.param(b1), 2, 1));
    EXPECT_EQ(h.value().shape(), (Shape{2, 3, 4, 4}));
    auto y = conv_transpose2d(h, t.param(w2), t.param(b2), 2, 1);
    EXPECT_EQ(y.value().shape(), (Shape{2, 2, 7, 7}));
    return weighted_sum(y, weights);
  };
  auto r = grad_check(block, {&x, &w1, &b1, &w2, &b2}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-5) << r.worst;
}

TEST(Tape, UnusedParameterGetsZeroGradient) {
  Rng rng(1);
  Parameter<double> used("used", random_tensor({2, 2}, rng));
  Parameter<double> unused("unused", random_tensor({2, 2}, rng));
  used.zero_grad();
  unused.zero_grad();
  Tape<double> tape;
  auto loss = sum(square(tape.param(used)));
  tape.param(unused);
  tape.backward(loss);
  for (double g : unused.grad().data()) EXPECT_EQ(g, 0.0);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(used.grad()[k], 2 * used.value()[k]);
}

TEST(Tape, SharedParameterAccumulates) {
  Parameter<double> p("p", Tensord::matrix({{2}}));
  p.zero_grad();
  Tape<double> tape;
  auto a = tape.param(p);
  auto b = tape.param(p);
  EXPECT_EQ(a.id(), b.id());
  tape.backward(sum(a * b + a));
  EXPECT_DOUBLE_EQ(p.grad()[0], 5.0);
}

TEST(Tape, FrozenTapeLeavesParametersAlone) {
  Parameter<double> p("p", Tensord::matrix({{2}}));
  p.zero_grad();
  Tape<double> tape;
  tape.set_frozen(true);
  auto loss = sum(square(tape.param(p)));
  EXPECT_FALSE(tape.needs_grad(loss));
}

TEST(Adam, MinimizesQuadratic) {
  Parameter<double> p("p", Tensord::vector({5.0, -3.0}));
  Adam<double> opt({&p}, {.learning_rate = 0.1});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    Tape<double> tape;
    auto loss = sum(square(tape.param(p)));
    tape.backward(loss);
    opt.step();
  }
  EXPECT_NEAR(p.value()[0], 0.0, 1e-2);
  EXPECT_NEAR(p.value()[1], 0.0, 1e-2);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
  Rng c(7);
  const auto s = c.state();
  const double x = c.normal();
  c.set_state(s);
  EXPECT_EQ(c.normal(), x);
}

TEST(Rng, NormalMoments) {
  Rng rng(123);
  double s1 = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s1 += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}
