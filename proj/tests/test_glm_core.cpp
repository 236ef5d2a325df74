#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "postdrift/glm_core.hpp"

using namespace postdrift;

TEST(Sigmoid, Examples) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(logit(0.75)), 0.75, 1e-15);
  // 1/(1+e^-1), evaluated with mpmath at 40 digits.
  EXPECT_NEAR(sigmoid(1.0), 0.7310585786300048792, 1e-15);
}

TEST(Sigmoid, ExtremeArgumentsStayInRange) {
  EXPECT_EQ(sigmoid(-1000.0), 0.0);
  EXPECT_EQ(sigmoid(1000.0), 1.0);
  EXPECT_GT(sigmoid(-700.0), 0.0);
  EXPECT_TRUE(std::isnan(sigmoid(std::nan(""))));
}

TEST(Logit, Examples) {
  EXPECT_EQ(logit(0.5), 0.0);
  EXPECT_NEAR(logit(0.75), std::log(3.0), 1e-15);
  EXPECT_NEAR(logit(sigmoid(-2.5)), -2.5, 1e-14);
}

TEST(Logit, RejectsOutsideOpenInterval) {
  EXPECT_THROW(logit(0.0), std::domain_error);
  EXPECT_THROW(logit(1.0), std::domain_error);
  EXPECT_THROW(logit(-0.1), std::domain_error);
  EXPECT_THROW(logit(std::nan("")), std::domain_error);
}

TEST(Logit, RoundTripOnGrid) {
  for (int k = 0; k <= 1000; ++k) {
    const double p = 1e-6 + (1.0 - 2e-6) * k / 1000.0;
    EXPECT_NEAR(sigmoid(logit(p)), p, 1e-12) << p;
  }
  // sigmoid(a) near 1 is stored to within half an ulp of 1, so the logit can
  // only be recovered to about eps / (p (1 - p)).
  for (double a = -30.0; a <= 30.0; a += 0.25) {
    const double p = sigmoid(a);
    EXPECT_NEAR(logit(p), a, 1e-12 + 2.5e-16 / (p * (1.0 - p))) << a;
  }
}

TEST(EntropyLoss, Examples) {
  EXPECT_NEAR(entropy_loss(1, 0), std::log(2.0), 1e-15);
  EXPECT_NEAR(entropy_loss(0, 0), std::log(2.0), 1e-15);
  // log(1+e^-5), mpmath at 40 digits.
  EXPECT_NEAR(entropy_loss(1, 5), 0.0067153484891180686, 1e-16);
}

TEST(EntropyLoss, MatchesNaiveFormulaInSafeRange) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> a(-20.0, 20.0);
  for (int k = 0; k < 1000; ++k) {
    const double x = a(rng);
    for (double y : {0.0, 1.0, 0.3}) EXPECT_NEAR(entropy_loss(y, x), oracle::naive_loss(y, x), 1e-12);
  }
}

TEST(EntropyLoss, NoOverflowAtLargeMargins) {
  EXPECT_LT(entropy_loss(1, 40), 1e-17);
  EXPECT_LT(entropy_loss(0, -40), 1e-17);
  EXPECT_GE(entropy_loss(1, 40), 0.0);
  EXPECT_NEAR(entropy_loss(1, -800), 800.0, 1e-9);
  EXPECT_TRUE(std::isfinite(entropy_loss(0, 800)));
}

TEST(EntropyLoss, ConvexAlongRandomChords) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> a(-50.0, 50.0);
  for (int k = 0; k < 5000; ++k) {
    const double x = a(rng), z = a(rng);
    const double y = (k % 2) ? 1.0 : 0.0;
    EXPECT_LE(entropy_loss(y, 0.5 * (x + z)), 0.5 * (entropy_loss(y, x) + entropy_loss(y, z)) + 1e-12);
  }
}

TEST(EntropyLoss, DerivativeIsSigmoidMinusLabel) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> a(-10.0, 10.0);
  for (int k = 0; k < 500; ++k) {
    const double x = a(rng);
    const double y = (k % 2) ? 1.0 : 0.0;
    const double fd = oracle::central_difference([&](double t) { return entropy_loss(y, t); }, x, 1e-5);
    EXPECT_NEAR(fd, sigmoid(x) - y, 1e-6);
  }
}

TEST(InverseLink, Examples) {
  EXPECT_NEAR(inverse_link(LinkKind::cauchit, 0.0), 0.5, 1e-15);
  EXPECT_NEAR(inverse_link(LinkKind::cauchit, 1.0), 0.75, 1e-15);
  EXPECT_NEAR(inverse_link(LinkKind::cloglog, 0.0), 0.63212055882855767840, 1e-15);
  EXPECT_EQ(inverse_link(LinkKind::logit, 0.3), sigmoid(0.3));
}

TEST(InverseLink, ProbitMatchesKnownQuantiles) {
  EXPECT_NEAR(inverse_link(LinkKind::probit, 0.0), 0.5, 1e-15);
  // Phi(1.959963984540054) = 0.975 and Phi(-1) = 0.158655253931457 (standard tables).
  EXPECT_NEAR(inverse_link(LinkKind::probit, 1.959963984540054), 0.975, 1e-13);
  EXPECT_NEAR(inverse_link(LinkKind::probit, -1.0), 0.15865525393145705, 1e-13);
}

TEST(InverseLink, AllLinksStrictlyMonotoneAndInUnitInterval) {
  for (auto kind : {LinkKind::logit, LinkKind::probit, LinkKind::cauchit, LinkKind::cloglog}) {
    double prev = -1.0;
    for (double a = -3.0; a <= 3.0; a += 0.01) {
      const double p = inverse_link(kind, a);
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
      EXPECT_GT(p, prev) << to_string(kind) << " at " << a;
      prev = p;
    }
  }
}

TEST(LinkKind, ParsesNames) {
  for (auto kind : {LinkKind::logit, LinkKind::probit, LinkKind::cauchit, LinkKind::cloglog})
    EXPECT_EQ(parse_link(to_string(kind)), kind);
  EXPECT_THROW(parse_link("identity"), ConfigError);
}
