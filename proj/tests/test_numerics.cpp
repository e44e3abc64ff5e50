#include <gtest/gtest.h>

#include <cmath>

#include "bevkit/error.hpp"
#include "bevkit/rng.hpp"
#include "bevkit/tape.hpp"
#include "bevkit/tensor.hpp"

using namespace bevkit;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  Tensor x(std::move(shape));
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST(Linear, IdentityWeights) {
  Tape t;
  const Var y = ad::linear(t, t.constant(Tensor({2}, {1, 2})), t.constant(Tensor({2, 2}, {1, 0, 0, 1})),
                           t.constant(Tensor({2}, {0, 0})));
  EXPECT_EQ(t.value(y), Tensor({2}, {1, 2}));
}

TEST(Linear, RowSumPlusBias) {
  Tape t;
  const Var y = ad::linear(t, t.constant(Tensor({2}, {1, 1})), t.constant(Tensor({1, 2}, {1, 1})),
                           t.constant(Tensor({1}, {1})));
  EXPECT_EQ(t.value(y), Tensor({1}, {3}));
}

TEST(Linear, MatchesElementLoop) {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor x = random_tensor(rng, {3, 4});
    const Tensor w = random_tensor(rng, {5, 4});
    const Tensor b = random_tensor(rng, {5});
    Tape t(false);
    const Tensor y = t.value(ad::linear(t, t.constant(x), t.constant(w), t.constant(b)));
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t o = 0; o < 5; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < 4; ++i) acc += x[r * 4 + i] * w[o * 4 + i];
        EXPECT_NEAR(y[r * 5 + o], acc, 1e-12);
      }
    }
  }
}

TEST(Linear, ShapeMismatchIsDimensionError) {
  Tape t;
  try {
    ad::linear(t, t.constant(Tensor({3})), t.constant(Tensor({2, 2})));
    FAIL() << "expected a dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(Softmax, Symmetric) {
  const Tensor y = kernels::softmax(Tensor({2}, {0, 0}), 0);
  EXPECT_EQ(y, Tensor({2}, {0.5, 0.5}));
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const Tensor y = kernels::softmax(Tensor({2}, {1000, 0}), 0);
  EXPECT_TRUE(y.all_finite());
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_LT(y[1], 1e-300);
}

TEST(Softmax, LogWeights) {
  const Tensor y = kernels::softmax(Tensor({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
  EXPECT_NEAR(y[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(y[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(y[2], 3.0 / 6.0, 1e-15);
}

TEST(Backward, SigmoidAtZero) {
  Tape t;
  const Var x = t.input(Tensor({1}, {0.0}));
  const Var loss = ad::sum(t, ad::sigmoid(t, x));
  EXPECT_DOUBLE_EQ(t.backward(loss)[x][0], 0.25);
}

TEST(Backward, LinearChainIsOuterProduct) {
  Tape t;
  const Tensor xv({3}, {1.0, -2.0, 0.5});
  const Var w = t.input(Tensor({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
  const Var loss = ad::sum(t, ad::linear(t, t.constant(xv), w));
  const Tensor g = t.backward(loss)[w];
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g[o * 3 + i], xv[i]);
  }
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape t;
  const Var x = t.input(Tensor({2}, {1, 2}));
  try {
    t.backward(ad::sigmoid(t, x));
    FAIL() << "expected a contract error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
}

TEST(FiniteDiff, Square) {
  const double err = finite_diff_check([](Tape& t, Var x) { return ad::sum(t, ad::mul(t, x, x)); },
                                       Tensor({1}, {3.0}));
  EXPECT_LT(err, 1e-8);
}

TEST(FiniteDiff, ConstantFunction) {
  const double err = finite_diff_check(
      [](Tape& t, Var x) { return ad::sum(t, ad::scale(t, x, 0.0)); }, Tensor({3}, {1, 2, 3}));
  EXPECT_EQ(err, 0.0);
}

TEST(FiniteDiff, ComposedGraph) {
  Rng rng(5);
  const Tensor w = random_tensor(rng, {4, 3});
  const double err = finite_diff_check(
      [&](Tape& t, Var x) {
        const Var h = ad::relu(t, ad::linear(t, x, t.constant(w)));
        return ad::sum(t, ad::mul(t, ad::softmax(t, h, 1), h));
      },
      random_tensor(rng, {2, 3}));
  EXPECT_LT(err, 1e-4);
}

TEST(Tape, NonFiniteValueIsNumericError) {
  Tape t;
  try {
    t.record(Tensor({1}, {INFINITY}), {}, nullptr, "probe");
    FAIL() << "expected a numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}
