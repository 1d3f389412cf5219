#include <gtest/gtest.h>

#include <cmath>

#include "spkmoco/errors.hpp"
#include "spkmoco/gradcheck.hpp"
#include "spkmoco/objectives.hpp"
#include "test_util.hpp"

using namespace spkmoco;
using spkmoco::testing::random_tensor;

namespace {

double ce_long_double(const Tensor& logits, const std::vector<int>& labels) {
  long double total = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    long double m = logits.at(r, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) m = std::max<long double>(m, logits.at(r, c));
    long double z = 0;
    for (std::size_t c = 0; c < logits.cols(); ++c) z += std::exp((long double)logits.at(r, c) - m);
    total += -((long double)logits.at(r, labels[r]) - m - std::log(z));
  }
  return double(total / logits.rows());
}

Tensor cosines_of(const Tensor& e, const Tensor& w) {
  Tensor c({e.rows(), w.rows()});
  for (std::size_t i = 0; i < e.rows(); ++i)
    for (std::size_t j = 0; j < w.rows(); ++j) {
      double dot = 0, ne = 0, nw = 0;
      for (std::size_t k = 0; k < e.cols(); ++k) {
        dot += e.at(i, k) * w.at(j, k);
        ne += e.at(i, k) * e.at(i, k);
        nw += w.at(j, k) * w.at(j, k);
      }
      c.at(i, j) = dot / std::sqrt(ne * nw);
    }
  return c;
}

}  // namespace

TEST(CrossEntropy, EqualLogits) {
  EXPECT_NEAR(cross_entropy_value(Tensor({2, 4}, 0.3), std::vector<int>{1, 3}), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, HugeLogitStable) {
  Tensor l({1, 3}, 0.0);
  l.at(0, 2) = 1000;
  const double v = cross_entropy_value(l, std::vector<int>{2});
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 0.0, 1e-300);
  Graph g;
  EXPECT_NO_THROW(cross_entropy(g.constant(l), std::vector<int>{0}));
}

TEST(CrossEntropy, ExtendedPrecisionOracle) {
  Rng rng(1);
  const Tensor l = random_tensor({3, 5}, rng, 3.0);
  const std::vector<int> y{4, 0, 2};
  EXPECT_NEAR(cross_entropy_value(l, y), ce_long_double(l, y), 1e-12);
  Graph g;
  EXPECT_NEAR(cross_entropy(g.constant(l), y).value()[0], ce_long_double(l, y), 1e-12);
}

TEST(CrossEntropy, BadLabel) {
  EXPECT_THROW(cross_entropy_value(Tensor({2, 3}), std::vector<int>{0, 3}), ParameterError);
  EXPECT_THROW(cross_entropy_value(Tensor({2, 3}), std::vector<int>{-1, 0}), ParameterError);
}

TEST(Aam, MarginFreeReducesToCosineCe) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor e = random_tensor({6, 8}, rng), w = random_tensor({5, 8}, rng);
    std::vector<int> y(6);
    for (auto& v : y) v = int(rng.uniform_int(0, 4));
    const double aam = aam_loss_value(e, w, y, {1.0, 0.0});
    Graph g;
    const double ce = cross_entropy(cosine_logits(g.constant(e), g.constant(w)), y).value()[0];
    EXPECT_NEAR(aam, ce, 1e-12);
  }
}

TEST(Aam, SingleClassIsZero) {
  Rng rng(3);
  EXPECT_EQ(aam_loss_value(random_tensor({4, 5}, rng), random_tensor({1, 5}, rng), std::vector<int>{0, 0, 0, 0}, {}),
            0.0);
}

TEST(Aam, DirectFormulaOracle) {
  const Tensor e = Tensor::matrix(1, 3, {1, 0, 0});
  const Tensor w = Tensor::matrix(2, 3, {0.8, 0.6, 0.0, 0.1, 0.0, std::sqrt(0.99)});
  const double s = 32, m = 0.3;
  const double target = std::exp(s * std::cos(std::acos(0.8) + m));
  const double other = std::exp(s * 0.1);
  const double oracle = -std::log(target / (target + other));
  EXPECT_NEAR(aam_loss_value(e, w, std::vector<int>{0}, {s, m}), oracle, 1e-12);
}

TEST(Aam, FallbackBranchBeyondPiMinusMargin) {
  // cos(theta_y) = -0.99 <= cos(pi - 0.3) ≈ -0.955.
  const double c = -0.99;
  const Tensor e = Tensor::matrix(1, 2, {1, 0});
  const Tensor w = Tensor::matrix(2, 2, {c, std::sqrt(1 - c * c), 0, 1});
  const double s = 32, m = 0.3;
  const double t = std::exp(s * (c - m * std::sin(m))), o = std::exp(0.0);
  EXPECT_NEAR(aam_loss_value(e, w, std::vector<int>{0}, {s, m}), -std::log(t / (t + o)), 1e-10);
}

TEST(Aam, ScaleInvariance) {
  Rng rng(4);
  const Tensor e = random_tensor({5, 6}, rng), w = random_tensor({3, 6}, rng);
  const std::vector<int> y{0, 1, 2, 1, 0};
  Tensor scaled = e;
  for (auto& v : scaled.values()) v *= 7.3;
  EXPECT_NEAR(aam_loss_value(e, w, y, {}), aam_loss_value(scaled, w, y, {}), 1e-10);
}

TEST(Aam, MarginNeverLowersLoss) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor e = random_tensor({4, 6}, rng), w = random_tensor({5, 6}, rng);
    std::vector<int> y(4);
    for (auto& v : y) v = int(rng.uniform_int(0, 4));
    const double m = rng.uniform(0.01, 1.2);
    EXPECT_GE(aam_loss_value(e, w, y, {32, m}), aam_loss_value(e, w, y, {32, 0.0}));
  }
}

TEST(Aam, ZeroEmbeddingIsNumericError) {
  EXPECT_THROW(aam_loss_value(Tensor({1, 3}, 0.0), Tensor({2, 3}, 1.0), std::vector<int>{0}, {}), DataError);
}

TEST(Aam, InvalidParams) {
  EXPECT_THROW((AamParams{0.0, 0.3}.validate()), ParameterError);
  EXPECT_THROW((AamParams{32, M_PI / 2}.validate()), ParameterError);
  EXPECT_THROW((AamParams{32, -0.1}.validate()), ParameterError);
}

class LossGradients : public ::testing::TestWithParam<int> {};

TEST_P(LossGradients, CeAndAam) {
  Rng rng(static_cast<std::uint64_t>(GetParam()) + 100);
  const Tensor logits = random_tensor({4, 5}, rng, 2.0);
  const Tensor e = random_tensor({4, 6}, rng), w = random_tensor({5, 6}, rng);
  std::vector<int> y(4);
  for (auto& v : y) v = int(rng.uniform_int(0, 4));
  EXPECT_LT(grad_check([&](Graph&, Var x) { return cross_entropy(x, y); }, logits), 1e-3);
  const AamParams p{32, 0.3};
  // s = 32 puts some loss values above 20 while single weight gradients reach
  // 1e-8; a 1e-3 step keeps cancellation error below the 1e-3 tolerance.
  EXPECT_LT(grad_check([&](Graph& g, Var x) { return aam_loss(x, g.constant(w), y, p); }, e, 1e-3), 1e-3);
  EXPECT_LT(grad_check([&](Graph& g, Var x) { return aam_loss(g.constant(e), x, y, p); }, w, 1e-3), 1e-3);
}

INSTANTIATE_TEST_SUITE_P(TwentySeeds, LossGradients, ::testing::Range(0, 20));

TEST(CosineLogits, MatchesDirectCosines) {
  Rng rng(6);
  const Tensor e = random_tensor({3, 4}, rng), w = random_tensor({2, 4}, rng);
  Graph g;
  EXPECT_LT(max_abs_diff(cosine_logits(g.constant(e), g.constant(w)).value(), cosines_of(e, w)), 1e-15);
}
