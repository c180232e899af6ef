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
#include <vector>

#include <gtest/gtest.h>

#include "dpadam/error.hpp"
#include "dpadam/privacy.hpp"
#include "dpadam/random.hpp"

namespace dpadam {
namespace {

GradientSet RandomGradient(Rng& rng, double scale) {
  std::vector<Tensor> t;
  t.emplace_back(Shape{3, 2});
  t.emplace_back(Shape{2});
  for (Tensor& x : t) {
    for (double& v : x.data()) v = scale * rng.Normal();
  }
  return GradientSet(std::move(t));
}

TEST(ClipTest, SpecExamples) {
  const GradientSet g({Tensor::Vector({3.0, 4.0})});
  EXPECT_EQ(ClipGradient(g, {10.0}), g);
  const GradientSet c = ClipGradient(g, {1.0});
  EXPECT_NEAR(c[0][0], 0.6, 1e-15);
  EXPECT_NEAR(c[0][1], 0.8, 1e-15);
  const GradientSet zero({Tensor::Vector({0.0, 0.0})});
  EXPECT_EQ(ClipGradient(zero, {1.0}), zero);
}

TEST(ClipTest, NormIsGlobalAcrossTensors) {
  const GradientSet g({Tensor::Vector({3.0}), Tensor::Vector({4.0})});
  const GradientSet c = ClipGradient(g, {1.0});
  EXPECT_NEAR(c[0][0], 0.6, 1e-15);
  EXPECT_NEAR(c[1][0], 0.8, 1e-15);
}

TEST(ClipTest, BoundAndHomogeneity) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const GradientSet g = RandomGradient(rng, std::exp(3.0 * rng.Normal()));
    const double r = 0.1 + rng.Uniform();
    const GradientSet c = ClipGradient(g, {r});
    EXPECT_LE(c.GlobalL2Norm(), r * (1 + 1e-12));
    const double k = 0.5 + 3.0 * rng.Uniform();
    const GradientSet lhs = ClipGradient(g.Scaled(k), {k * r});
    const GradientSet rhs = c.Scaled(k);
    for (std::size_t t = 0; t < lhs.size(); ++t) {
      for (std::size_t j = 0; j < lhs[t].size(); ++j) {
        EXPECT_NEAR(lhs[t][j], rhs[t][j], 1e-12 * std::max(1.0, std::abs(rhs[t][j])));
      }
    }
  }
}

TEST(ClipTest, RejectsNonFiniteInputAndBadBound) {
  const GradientSet g({Tensor::Vector({NAN, 1.0})});
  try {
    ClipGradient(g, {1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
  const GradientSet ok({Tensor::Vector({1.0})});
  EXPECT_THROW(ClipGradient(ok, {0.0}), Error);
  EXPECT_THROW(ClipGradient(ok, {-1.0}), Error);
  EXPECT_THROW(ClipGradient(ok, {INFINITY}), Error);
}

TEST(NoiseTest, ZeroScaleIsZeroAndDrawsNothing) {
  Rng a(3), b(3);
  const std::vector<Shape> shapes{{2, 2}};
  const GradientSet z = GaussianNoise(shapes, 0.0, a);
  EXPECT_EQ(z.GlobalL2Norm(), 0.0);
  EXPECT_EQ(a.NextU64(), b.NextU64());
}

TEST(NoiseTest, DeterministicPerSeed) {
  const std::vector<Shape> shapes{{3}, {2, 2}};
  Rng a(8), b(8);
  EXPECT_EQ(GaussianNoise(shapes, 1.5, a), GaussianNoise(shapes, 1.5, b));
  EXPECT_THROW(GaussianNoise(shapes, -1.0, a), Error);
}

TEST(AggregateTest, ZeroNoiseIsMeanOfClipped) {
  Rng rng(4);
  const std::vector<GradientSet> batch{
      GradientSet({Tensor::Vector({3.0, 4.0})}),
      GradientSet({Tensor::Vector({0.1, 0.2})})};
  for (NoiseMode mode : {NoiseMode::kNoiseAfterAverage, NoiseMode::kSumThenAverage}) {
    const GradientSet v = AggregateNoisy(batch, {1.0}, {0.0, 0}, mode, rng);
    EXPECT_NEAR(v[0][0], (0.6 + 0.1) / 2, 1e-15);
    EXPECT_NEAR(v[0][1], (0.8 + 0.2) / 2, 1e-15);
  }
}

TEST(AggregateTest, IdenticalOversizedGradientsScaleToR) {
  Rng rng(5);
  const double r = 0.7;
  const GradientSet g({Tensor::Vector({2 * r * 0.6, 2 * r * 0.8})});
  const std::vector<GradientSet> batch(4, g);
  AggregateStats stats;
  const GradientSet v =
      AggregateNoisy(batch, {r}, {0.0, 0}, NoiseMode::kNoiseAfterAverage, rng, &stats);
  EXPECT_NEAR(v[0][0], r * 0.6, 1e-15);
  EXPECT_NEAR(v[0][1], r * 0.8, 1e-15);
  EXPECT_NEAR(stats.max_norm, 2 * r, 1e-15);
  EXPECT_NEAR(stats.max_clipped_norm, r, 1e-15);
}

TEST(AggregateTest, ModesDifferByNoiseScaling) {
  Rng grng(6);
  std::vector<GradientSet> batch;
  for (int i = 0; i < 5; ++i) batch.push_back(RandomGradient(grng, 2.0));
  const double sigma = 1.3, r = 0.8;
  Rng a(77), b(77), n(77);
  const GradientSet lit = AggregateNoisy(batch, {r}, {sigma, 0},
                                         NoiseMode::kNoiseAfterAverage, a);
  const GradientSet sta = AggregateNoisy(batch, {r}, {sigma, 0},
                                         NoiseMode::kSumThenAverage, b);
  const GradientSet z = GaussianNoise(lit.Shapes(), sigma * r, n);
  const double bsz = 5.0;
  for (std::size_t t = 0; t < lit.size(); ++t) {
    for (std::size_t i = 0; i < lit[t].size(); ++i) {
      EXPECT_NEAR(sta[t][i] - lit[t][i], z[t][i] * (1.0 / bsz - 1.0), 1e-12);
    }
  }
}

TEST(AggregateTest, ModesCoincideForSingleSample) {
  Rng grng(7);
  const std::vector<GradientSet> batch{RandomGradient(grng, 3.0)};
  Rng a(1), b(1);
  EXPECT_EQ(AggregateNoisy(batch, {1.0}, {2.0, 0}, NoiseMode::kNoiseAfterAverage, a),
            AggregateNoisy(batch, {1.0}, {2.0, 0}, NoiseMode::kSumThenAverage, b));
}

TEST(AggregateTest, EmptyBatchAndShapeMismatch) {
  Rng rng(8);
  try {
    AggregateNoisy({}, {1.0}, {1.0, 0}, NoiseMode::kNoiseAfterAverage, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyBatch);
  }
  const std::vector<GradientSet> bad{GradientSet({Tensor::Vector({1.0})}),
                                     GradientSet({Tensor::Vector({1.0, 2.0})})};
  EXPECT_THROW(
      AggregateNoisy(bad, {1.0}, {1.0, 0}, NoiseMode::kNoiseAfterAverage, rng),
      Error);
}

TEST(NoiseModeTest, NamesRoundTrip) {
  for (NoiseMode m : {NoiseMode::kNoiseAfterAverage, NoiseMode::kSumThenAverage}) {
    EXPECT_EQ(ParseNoiseMode(NoiseModeName(m)), m);
  }
  EXPECT_THROW(ParseNoiseMode("other"), Error);
}

}  // namespace
}  // namespace dpadam
