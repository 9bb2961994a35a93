#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "priq/gradcheck.hpp"
#include "priq/ops.hpp"
#include "priq/testing/oracles.hpp"
#include "priq/testing/suites.hpp"

using namespace priq;
using priq::testing::random_tensor;
using priq::testing::to_buffer;
using D = Tensor<double>;

namespace {

D tensor(Shape s, std::vector<double> v, bool rg = false) { return D(std::move(s), std::move(v), rg); }

std::vector<double> vals(const D& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Tensor, ShapeAndValueCountMustAgree) {
  EXPECT_THROW(D({2, 3}, std::vector<double>(5)), ShapeError);
  D t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at(1, 2), 0.0);
}

TEST(Tensor, ForwardOpsRejectNonFiniteResults) {
  D big = tensor({2}, {1e308, 1e308});
  EXPECT_THROW(ops::add(big, big), NumericalError);
}

TEST(Conv2d, IdentityKernelReturnsInput) {
  D x = tensor({1, 1, 2, 2}, {1, 2, 3, 4});
  D y = ops::conv2d(x, tensor({1, 1, 1, 1}, {1}), tensor({1}, {0}));
  EXPECT_EQ(vals(y), vals(x));
}

TEST(Conv2d, OnesKernelSums) {
  D y = ops::conv2d(D::full({1, 1, 3, 3}, 1.0), D::full({1, 1, 3, 3}, 1.0), tensor({1}, {0}));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 9.0);
}

TEST(Conv2d, StridedPaddedMatchesLoopOracle) {
  Rng rng(1);
  D x = random_tensor<double>({2, 3, 8, 8}, rng), k = random_tensor<double>({4, 3, 3, 3}, rng),
    b = random_tensor<double>({4}, rng);
  D y = ops::conv2d(x, k, b, 2, 1);
  std::size_t oh = 0, ow = 0;
  const auto want = oracle::conv2d(to_buffer(x), 2, 3, 8, 8, to_buffer(k), 4, 3, 3, to_buffer(b), 2, 1, oh, ow);
  ASSERT_EQ(y.shape(), (Shape{2, 4, oh, ow}));
  EXPECT_EQ(oh, 4u);
  EXPECT_LE(priq::testing::max_abs_diff(vals(y), want), 1e-12);
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  try {
    ops::conv2d(D({1, 2, 4, 4}), D({1, 3, 3, 3}), D({1}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("C_in"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ops::conv2d(D({1, 1, 2, 2}), D({1, 1, 3, 3}), D({1})), ShapeError);
}

TEST(Linear, IdentityAndHandArithmetic) {
  D x = tensor({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vals(ops::linear(x, tensor({2, 2}, {1, 0, 0, 1}), tensor({2}, {0, 0}))), vals(x));
  D y = ops::linear(tensor({1, 2}, {1, 2}), tensor({1, 2}, {3, 4}), tensor({1}, {5}));
  EXPECT_EQ(y[0], 16.0);
  EXPECT_THROW(ops::linear(x, D({2, 3}), D({2})), ShapeError);
}

TEST(Linear, MatchesLoopOracle) {
  Rng rng(2);
  D x = random_tensor<double>({5, 7}, rng), w = random_tensor<double>({3, 7}, rng), b = random_tensor<double>({3}, rng);
  EXPECT_LE(priq::testing::max_abs_diff(vals(ops::linear(x, w, b)), oracle::linear(to_buffer(x), 5, 7, to_buffer(w), 3, to_buffer(b))), 1e-12);
}

TEST(Softmax, ClosedForms) {
  for (double v : vals(ops::softmax_along(D::full({5}, 3.0), 0))) EXPECT_NEAR(v, 0.2, 1e-15);
  D p = ops::softmax_along(tensor({2}, {0, std::log(3.0)}), 0);
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
  D s = ops::softmax_along(tensor({3}, {1e4, 0, -5}), 0);
  EXPECT_TRUE(std::isfinite(s[0]));
  EXPECT_NEAR(s[0] + s[1] + s[2], 1.0, 1e-12);
  EXPECT_THROW(ops::softmax_along(D({2, 2}), 2), ShapeError);
}

TEST(Softmax, SlicesSumToOneOnRandomInputs) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    D x = random_tensor<double>({3, 4, 5}, rng, -30, 30);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      D s = ops::sum(ops::softmax_along(x, axis), {axis});
      for (double v : s.values()) ASSERT_NEAR(v, 1.0, 1e-9);
    }
  }
}

TEST(Reduce, Examples) {
  D x = tensor({2, 2}, {1, 3, 5, 7});
  EXPECT_EQ(ops::mean(x, {0, 1}).item(), 4.0);
  EXPECT_EQ(vals(ops::sum(tensor({2, 2}, {1, 2, 3, 4}), {0})), (std::vector<double>{4, 6}));
  EXPECT_THROW(ops::sum(D({0, 3}), {0}), ShapeError);
  EXPECT_THROW(ops::sum(x, {0, 0}), ShapeError);
}

TEST(Elementwise, Examples) {
  Rng rng(4);
  D x = random_tensor<double>({2, 3}, rng);
  EXPECT_EQ(vals(ops::mul(x, D::full({2, 3}, 1.0))), vals(x));
  D neg = x.clone();
  for (auto& v : neg.mutable_values()) v = -v;
  const D zero = ops::add(x, neg);
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(ops::add(D({2, 3}), D({3, 2})), ShapeError);
}

TEST(Elementwise, LocationWeightsBroadcastOverChannels) {
  Rng rng(5);
  D w = random_tensor<double>({2, 1, 3, 4}, rng), z = random_tensor<double>({2, 5, 3, 4}, rng);
  D y = ops::mul(z, w);
  ASSERT_EQ(y.shape(), z.shape());
  double worst = 0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t q = 0; q < 4; ++q) worst = std::max(worst, std::abs(y.at(n, c, h, q) - w.at(n, 0, h, q) * z.at(n, c, h, q)));
  EXPECT_LE(worst, 1e-12);
}

TEST(Pooling, Examples) {
  EXPECT_EQ(vals(ops::relu(tensor({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(ops::max_pool2d(tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2).item(), 4.0);
  EXPECT_THROW(ops::max_pool2d(D({1, 1, 2, 2}), 3, 1), ShapeError);
  EXPECT_THROW(ops::avg_pool2d(D({1, 1, 2, 2}), 5, 1, 1), ShapeError);
}

TEST(Pooling, MaxPoolTieRoutesGradientToFirstIndex) {
  D x = D::full({1, 1, 2, 2}, 1.0, true);
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    tape.backward(ops::sum_all(ops::max_pool2d(x, 2, 2)));
  }
  EXPECT_EQ(vals(D(x.shape(), std::vector<double>(x.grad().begin(), x.grad().end()))), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Huber, ClosedForms) {
  D p = tensor({3}, {0.5, 1, 2});
  EXPECT_EQ(ops::huber_loss(p, p.clone(), 1.0).item(), 0.0);
  EXPECT_EQ(ops::huber_loss(tensor({1}, {2}), tensor({1}, {0}), 1.0).item(), 1.5);
  EXPECT_THROW(ops::huber_loss(D({2}), D({3}), 1.0), ShapeError);
  EXPECT_THROW(ops::huber_loss(D({2}), D({2}), 0.0), ConfigError);
}

TEST(Huber, MatchesScalarLoop) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    D a = random_tensor<double>({9}, rng, -3, 3), b = random_tensor<double>({9}, rng, -3, 3);
    const double delta = 0.5 + trial * 0.1;
    double want = 0;
    for (std::size_t i = 0; i < 9; ++i) {
      const double e = std::abs(a[i] - b[i]);
      want += e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
    }
    EXPECT_NEAR(ops::huber_loss(a, b, delta).item(), want / 9, 1e-12);
  }
}

TEST(Backward, SumAndSquare) {
  Rng rng(7);
  D x = random_tensor<double>({4}, rng, -1, 1, true);
  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    tape.backward(ops::sum_all(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  x.zero_grad();
  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    tape.backward(ops::sum_all(ops::mul(x, x)));
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, TwoUsesAccumulateExactly) {
  Rng rng(8);
  D x = random_tensor<double>({5}, rng, -1, 1, true);
  D a = random_tensor<double>({5}, rng), b = random_tensor<double>({5}, rng);
  auto grad_of = [&](auto&& build) {
    x.zero_grad();
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    tape.backward(build());
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto ga = grad_of([&] { return ops::sum_all(ops::mul(x, a)); });
  const auto gb = grad_of([&] { return ops::sum_all(ops::mul(x, b)); });
  const auto both = grad_of([&] { return ops::add(ops::sum_all(ops::mul(x, a)), ops::sum_all(ops::mul(x, b))); });
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(both[i], ga[i] + gb[i]);
}

TEST(Backward, ReverseOrderAndExhaustion) {
  D x = D::full({2}, 1.0, true);
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  D y = ops::relu(ops::mul(x, x));
  D loss = ops::sum_all(y);
  EXPECT_EQ(tape.op_names(), (std::vector<std::string>{"elementwise", "relu", "reduce"}));
  tape.backward(loss);
  EXPECT_TRUE(tape.exhausted());
  EXPECT_THROW(tape.backward(loss), TapeError);
  EXPECT_THROW(tape.backward(y), TapeError);
}

TEST(Backward, RejectsNonScalarAndForeignLoss) {
  D x = D::full({2}, 1.0, true);
  Tape<double> tape;
  Tape<double>::Scope scope(tape);
  EXPECT_THROW(tape.backward(ops::mul(x, x)), TapeError);
  Tape<double> other;
  EXPECT_THROW(other.backward(ops::sum_all(x)), TapeError);
}

TEST(GradCheck, Examples) {
  Rng rng(9);
  D x = random_tensor<double>({3, 4}, rng);
  std::function<D(const D&)> id_sum = [](const D& t) { return ops::sum_all(t); };
  EXPECT_LT(finite_diff_check<double>(id_sum, x, 1e-6), 1e-9);
  std::function<D(const D&)> soft_sq = [](const D& t) {
    D s = ops::softmax_along(t, 1);
    return ops::sum_all(ops::mul(s, s));
  };
  EXPECT_LT(finite_diff_check<double>(soft_sq, x, 1e-6), 1e-6);
  D ref = random_tensor<double>({4, 5, 5}, rng, 0, 1);
  std::function<D(const D&)> ssim = [&](const D& t) { return priq::testing::project(channel_ssim(t, ref), 3); };
  EXPECT_LT(finite_diff_check<double>(ssim, random_tensor<double>({4, 5, 5}, rng, 0, 1), 1e-6), 1e-4);
}

TEST(GradCheck, RejectsBadEpsilonAndNondeterminism) {
  D x = D::full({2}, 1.0);
  std::function<D(const D&)> f = [](const D& t) { return ops::sum_all(t); };
  EXPECT_THROW(finite_diff_check<double>(f, x, 1e-2), ConfigError);
  int calls = 0;
  std::function<D(const D&)> noisy = [&](const D& t) { return ops::add(ops::sum_all(t), D::scalar(++calls)); };
  EXPECT_THROW(finite_diff_check<double>(noisy, x, 1e-6), NumericalError);
}

TEST(Suites, GradientSuitePasses) {
  const auto r = priq::testing::gradient_suite();
  for (const auto& c : r.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.value << " " << c.detail;
}

TEST(Suites, OracleSuitePassesOnAtLeastTwentyCases) {
  const auto r = priq::testing::oracle_suite(24);
  EXPECT_GE(r.checks.size(), 8u);
  for (const auto& c : r.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.value;
}
