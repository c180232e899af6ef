// Copyright 2026 The dpadam Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "dpadam/accountant.hpp"
#include "dpadam/error.hpp"
#include "dpadam/random.hpp"
#include "oracles.hpp"

namespace dpadam {
namespace {

std::vector<double> RandomDistribution(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (double& v : p) sum += (v = 0.05 + rng.Uniform());
  for (double& v : p) v /= sum;
  return p;
}

TEST(RenyiTest, Examples) {
  const std::vector<double> p{0.3, 0.7};
  for (double a : {0.5, 2.0, 10.0}) EXPECT_EQ(RenyiDivergence(p, p, a), 0.0);
  const std::vector<double> one{1.0, 0.0}, half{0.5, 0.5};
  EXPECT_NEAR(RenyiDivergence(one, half, 2.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(KlDivergence(one, half), std::log(2.0), 1e-15);
  EXPECT_EQ(KlDivergence(p, p), 0.0);
}

TEST(RenyiTest, Errors) {
  const std::vector<double> p{0.5, 0.5}, zero_q{1.0, 0.0}, bad_sum{0.5, 0.6};
  EXPECT_THROW(RenyiDivergence(p, p, 1.0), Error);
  EXPECT_THROW(RenyiDivergence(p, zero_q, 2.0), Error);
  EXPECT_THROW(RenyiDivergence(bad_sum, p, 2.0), Error);
  EXPECT_THROW(KlDivergence(p, zero_q), Error);
  EXPECT_THROW(RenyiDivergence(p, std::vector<double>{1.0}, 2.0), Error);
}

TEST(RenyiTest, ApproachesKlAndIsMonotoneInAlpha) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = RandomDistribution(rng, 6);
    const auto q = RandomDistribution(rng, 6);
    EXPECT_NEAR(RenyiDivergence(p, q, 1.0001), KlDivergence(p, q), 1e-3);
    double prev = 0.0;
    for (double a : {0.25, 0.5, 0.9, 1.1, 2.0, 4.0, 16.0}) {
      const double d = RenyiDivergence(p, q, a);
      EXPECT_GE(d, prev - 1e-15);
      EXPECT_GT(d, 0.0);
      prev = d;
    }
  }
}

TEST(RdpGaussianTest, ClosedFormMatchesQuadrature) {
  EXPECT_DOUBLE_EQ(RdpGaussian(2.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(RdpGaussian(3.0, 2.0), 0.375);
  EXPECT_NEAR(oracle::QuadratureRdp(1.0, 1.0, 2.0), 1.0, 1e-9);
  EXPECT_NEAR(oracle::QuadratureRdp(2.0, 1.0, 3.0), 0.375, 1e-9);
  EXPECT_THROW(RdpGaussian(1.0, 1.0), Error);
  EXPECT_THROW(RdpGaussian(2.0, 0.0), Error);
}

TEST(RdpSubsampledTest, BoundaryCases) {
  EXPECT_DOUBLE_EQ(RdpSubsampledGaussian({1.0, 1.0}, 2.0), 1.0);
  EXPECT_EQ(RdpSubsampledGaussian({1.0, 0.0}, 5.0), 0.0);
  EXPECT_LT(RdpSubsampledGaussian({1.0, 1e-8}, 5.0), 1e-12);
  EXPECT_THROW(RdpSubsampledGaussian({1.0, 0.5}, 2.5), Error);
  EXPECT_THROW(RdpSubsampledGaussian({1.0, 0.5}, 1.0), Error);
}

TEST(RdpSubsampledTest, MatchesQuadratureAndBinomialOracles) {
  EXPECT_NEAR(RdpSubsampledGaussian({1.0, 0.01}, 2.0),
              oracle::QuadratureRdp(1.0, 0.01, 2.0),
              0.01 * oracle::QuadratureRdp(1.0, 0.01, 2.0));
  for (double sigma : {0.7, 1.0, 2.0, 4.0}) {
    for (double q : {0.01, 0.1, 0.5}) {
      for (int alpha : {2, 3, 5, 8, 13}) {
        const double lib = RdpSubsampledGaussian({sigma, q}, alpha);
        EXPECT_NEAR(lib, oracle::BinomialRdp(sigma, q, alpha), 1e-9 * lib)
            << sigma << " " << q << " " << alpha;
        EXPECT_NEAR(lib, oracle::QuadratureRdp(sigma, q, alpha), 1e-8 * lib)
            << sigma << " " << q << " " << alpha;
      }
    }
  }
}

TEST(CurveTest, ComposeIsAdditive) {
  const RdpCurve c = MakeRdpCurve({1.3, 0.05});
  const RdpCurve a = Compose(Compose(c, 3), 4);
  const RdpCurve b = Compose(c, 7);
  EXPECT_EQ(a.step_count, 7);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(a.Rdp(i), b.Rdp(i));
    EXPECT_EQ(Compose(c, 2).Rdp(i), 2.0 * Compose(c, 1).Rdp(i));
    EXPECT_EQ(Compose(c, 0).Rdp(i), 0.0);
  }
  EXPECT_THROW(Compose(c, -1), Error);
}

TEST(CurveTest, GridDropsFractionalOrdersWhenSubsampled) {
  const RdpCurve sub = MakeRdpCurve({1.0, 0.1});
  for (double a : sub.alphas) EXPECT_EQ(a, std::floor(a));
  EXPECT_EQ(sub.alphas.front(), 2.0);
  const RdpCurve full = MakeRdpCurve({1.0, 1.0});
  EXPECT_LT(full.alphas.front(), 2.0);
  for (std::size_t i = 1; i < full.size(); ++i) {
    EXPECT_GT(full.alphas[i], full.alphas[i - 1]);
  }
  const std::vector<double> bad{3.0, 2.0};
  EXPECT_THROW(MakeRdpCurve({1.0, 1.0}, bad), Error);
}

TEST(EpsDeltaTest, SingleGaussianStepMatchesGridOracle) {
  const std::vector<double> integers = [] {
    std::vector<double> a;
    for (int k = 2; k <= 64; ++k) a.push_back(k);
    return a;
  }();
  const PrivacySpent s =
      ToEpsDelta(Compose(MakeRdpCurve({1.0, 1.0}, integers), 1), 1e-5);
  const oracle::EpsilonAt o = oracle::IntegerGridGaussianEpsilon(1.0, 1, 1e-5, 64);
  EXPECT_NEAR(s.epsilon, o.epsilon, 1e-12);
  EXPECT_EQ(s.optimal_alpha, 6.0);
  EXPECT_NEAR(s.epsilon, 5.3026, 5e-4);
}

TEST(EpsDeltaTest, ZeroStepsAndInfiniteSigma) {
  const PrivacySpent zero = ToEpsDelta(MakeRdpCurve({1.0, 0.1}), 1e-5);
  EXPECT_EQ(zero.epsilon, 0.0);
  const PrivacySpent inf = ToEpsDelta(
      Compose(MakeRdpCurve({std::numeric_limits<double>::infinity(), 0.1}), 100),
      1e-5);
  EXPECT_EQ(inf.epsilon, 0.0);
  const PrivacySpent none = ToEpsDelta(Compose(MakeRdpCurve({0.0, 0.1}), 1), 1e-5);
  EXPECT_TRUE(std::isinf(none.epsilon));
  EXPECT_THROW(ToEpsDelta(zero.epsilon == 0 ? MakeRdpCurve({1.0, 1.0}) : RdpCurve{}, 0.0),
               Error);
}

TEST(EpsDeltaTest, MonotoneInSigmaStepsAndQ) {
  for (double q : {0.01, 0.1, 1.0}) {
    double prev = 0.0;
    for (std::int64_t t : {1, 2, 10, 100, 1000}) {
      const double e = EpsilonFor(1.5, q, t, 1e-5).epsilon;
      EXPECT_GE(e, prev);
      prev = e;
    }
  }
  for (std::int64_t t : {1, 100}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double s : {0.5, 0.8, 1.0, 2.0, 4.0}) {
      const double e = EpsilonFor(s, 0.1, t, 1e-5).epsilon;
      EXPECT_LT(e, prev);
      prev = e;
    }
    prev = 0.0;
    for (double q : {0.001, 0.01, 0.1, 0.5, 1.0}) {
      const double e = EpsilonFor(1.0, q, t, 1e-5).epsilon;
      EXPECT_GE(e, prev);
      prev = e;
    }
  }
}

TEST(EpsDeltaTest, NeverBelowTheContinuousOracle) {
  for (double sigma : {0.8, 1.5, 3.0}) {
    for (double q : {0.02, 0.3, 1.0}) {
      const double ours = EpsilonFor(sigma, q, 50, 1e-5).epsilon;
      const double truth = oracle::ContinuousEpsilon(sigma, q, 50, 1e-5).epsilon;
      EXPECT_GE(ours, truth * (1 - 1e-9));
    }
  }
}

TEST(CalibrateTest, InvertsTheForwardAccountant) {
  const double sigma = CalibrateSigma(5.3026, 1e-5, 1.0, 1);
  EXPECT_NEAR(sigma, 1.0, 0.005);
  for (double target : {0.5, 2.0, 10.0, 1000.0}) {
    const double s = CalibrateSigma(target, 1e-5, 0.02, 500);
    EXPECT_LE(EpsilonFor(s, 0.02, 500, 1e-5).epsilon, target);
    EXPECT_GT(EpsilonFor(s / (1 + 2e-3), 0.02, 500, 1e-5).epsilon, target);
    EXPECT_LE(EpsilonFor(1.01 * s, 0.02, 500, 1e-5).epsilon,
              EpsilonFor(s, 0.02, 500, 1e-5).epsilon);
  }
  double prev = 0.0;
  for (std::int64_t t : {1, 10, 100, 1000}) {
    const double s = CalibrateSigma(2.0, 1e-5, 0.05, t);
    EXPECT_GE(s, prev);
    prev = s;
  }
}

TEST(CalibrateTest, UnreachableTargetFails) {
  try {
    CalibrateSigma(1e-9, 1e-5, 1.0, 100000);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCalibrationFailed);
  }
  EXPECT_THROW(CalibrateSigma(1.0, 1e-5, 0.1, 0), Error);
}

TEST(ClassicSigmaTest, FormulaAndScaling) {
  EXPECT_NEAR(ClassicGaussianSigma(1.0, 1e-5, 1.0), std::sqrt(2 * std::log(125000.0)),
              1e-12);
  EXPECT_NEAR(ClassicGaussianSigma(1.0, 1e-5, 1.0), 4.8445, 1e-3);
  EXPECT_DOUBLE_EQ(ClassicGaussianSigma(0.5, 1e-5, 2.0),
                   4.0 * ClassicGaussianSigma(1.0, 1e-5, 1.0));
  EXPECT_LT(ClassicGaussianSigma(0.5, 0.999, 1.0), ClassicGaussianSigma(0.5, 0.5, 1.0));
  EXPECT_THROW(ClassicGaussianSigma(1.5, 1e-5, 1.0), Error);
  EXPECT_THROW(ClassicGaussianSigma(0.5, 1e-5, 0.0), Error);
}

TEST(AccountantJsonTest, ForwardAndInverse) {
  const auto fwd = AccountantQuery(1.0, 1.0, 1, 1e-5);
  EXPECT_NEAR(fwd["epsilon"].get<double>(), 5.3026, 5e-4);
  EXPECT_EQ(fwd["optimal_alpha"].get<double>(), 6.0);
  EXPECT_FALSE(fwd["curve"].empty());
  EXPECT_EQ(fwd["curve"][0].size(), 2u);

  nlohmann::json q = {{"target_eps", 10.0}, {"q", 0.01}, {"steps", 3000}, {"delta", 1e-5}};
  const auto inv = AccountantQueryFromJson(q);
  const double sigma = inv["sigma"].get<double>();
  EXPECT_LE(EpsilonFor(sigma, 0.01, 3000, 1e-5).epsilon, 10.0);
  EXPECT_THROW(AccountantQueryFromJson({{"sigma", 1.0}}), Error);
}

}  // namespace
}  // namespace dpadam
