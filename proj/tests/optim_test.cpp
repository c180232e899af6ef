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

#include "dpadam/accountant.hpp"
#include "dpadam/dataset.hpp"
#include "dpadam/error.hpp"
#include "dpadam/model.hpp"
#include "dpadam/optim.hpp"
#include "dpadam/random.hpp"

namespace dpadam {
namespace {

Dataset SmallData(std::size_t n, std::size_t dim, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n = n;
  spec.dim = dim;
  spec.seed = seed;
  Dataset d = SyntheticDataset(spec);
  Standardize(d);
  return d;
}

TEST(PoissonSubsampleTest, RateAndOrdering) {
  Rng rng(3);
  EXPECT_TRUE(PoissonSubsample(100, 0.0, rng).empty());
  EXPECT_EQ(PoissonSubsample(100, 1.0, rng).size(), 100u);
  std::size_t total = 0;
  for (int k = 0; k < 200; ++k) {
    const auto s = PoissonSubsample(1000, 0.05, rng);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
    total += s.size();
  }
  // 200 * 1000 * 0.05 = 10000 expected, std about 97.
  EXPECT_NEAR(static_cast<double>(total), 10000.0, 500.0);
  EXPECT_THROW(PoissonSubsample(10, 1.5, rng), Error);
}

TEST(AdamConfigTest, Validation) {
  AdamConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.beta1 = 1.0;
  EXPECT_THROW(c.Validate(), Error);
  c = AdamConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.Validate(), Error);
  c = AdamConfig{};
  c.stabilizer = 0.0;
  EXPECT_THROW(c.Validate(), Error);
  EXPECT_EQ(ParseAdamVariant(AdamVariantName(AdamVariant::kUnrooted)),
            AdamVariant::kUnrooted);
  EXPECT_THROW(ParseAdamVariant("rooted"), Error);
}

// Single-weight model so the update can be checked by hand.
struct TinyProblem {
  Model model = BuildMlp({1, 1}, NormSpec::None(), 0);
  GradientSet grad;
  TinyProblem(double w, double g) {
    model.mutable_parameters()[0][0] = w;
    model.mutable_parameters()[1][0] = 0.0;
    grad = GradientSet::ZerosLike(model.ParameterShapes());
    grad[0][0] = g;
  }
};

TEST(AdamStepTest, StandardFirstStepMovesByLr) {
  TinyProblem p(0.5, 0.3);
  AdamConfig c;
  c.lr = 0.01;
  DpAdamState s = DpAdamState::Init(p.model, c);
  AdamStep(p.model, p.grad, s);
  EXPECT_EQ(s.t, 1);
  EXPECT_NEAR(p.model.parameters()[0][0], 0.5 - 0.01, 1e-9);
  EXPECT_NEAR(s.m[0][0], 0.1 * 0.3, 1e-15);
  EXPECT_NEAR(s.u[0][0], 0.001 * 0.09, 1e-15);
  EXPECT_EQ(p.model.parameters()[1][0], 0.0);  // zero gradient, zero step
}

TEST(AdamStepTest, HandComputedTwoSteps) {
  for (AdamVariant variant : {AdamVariant::kStandard, AdamVariant::kUnrooted}) {
    TinyProblem p(1.0, 0.2);
    AdamConfig c;
    c.lr = 0.05;
    c.beta1 = 0.8;
    c.beta2 = 0.9;
    c.stabilizer = 1e-3;
    c.variant = variant;
    DpAdamState s = DpAdamState::Init(p.model, c);
    double theta = 1.0, m = 0.0, u = 0.0;
    for (int t = 1; t <= 2; ++t) {
      const double g = t == 1 ? 0.2 : -0.4;
      p.grad[0][0] = g;
      AdamStep(p.model, p.grad, s);
      m = 0.8 * m + 0.2 * g;
      u = 0.9 * u + 0.1 * g * g;
      const double w =
          variant == AdamVariant::kUnrooted
              ? m / (u + 1e-3)
              : (m / (1 - std::pow(0.8, t))) /
                    (std::sqrt(u / (1 - std::pow(0.9, t))) + 1e-3);
      theta -= 0.05 * w;
      EXPECT_NEAR(p.model.parameters()[0][0], theta, 1e-14) << t;
    }
  }
}

TEST(AdamStepTest, NoBiasCorrection) {
  TinyProblem p(0.0, 1.0);
  AdamConfig c;
  c.bias_correction = false;
  c.lr = 1.0;
  DpAdamState s = DpAdamState::Init(p.model, c);
  AdamStep(p.model, p.grad, s);
  EXPECT_NEAR(p.model.parameters()[0][0], -0.1 / (std::sqrt(0.001) + 1e-8), 1e-12);
}

TEST(AdamStepTest, FrozenParametersUntouched) {
  Model m = BuildMlp({3, 4, 1}, NormSpec::Group(2), 1);
  m.set_freeze_prefix(1);
  const Model before = m;
  DpAdamState s = DpAdamState::Init(m, AdamConfig{});
  GradientSet g = GradientSet::ZerosLike(m.ParameterShapes());
  for (std::size_t k = 0; k < g.size(); ++k) {
    for (double& v : g[k].data()) v = 0.5;
  }
  AdamStep(m, g, s);
  const auto mask = m.TrainableMask();
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k]) {
      EXPECT_NE(m.parameters()[k], before.parameters()[k]) << k;
    } else {
      EXPECT_EQ(m.parameters()[k], before.parameters()[k]) << k;
      for (double v : s.m[k].data()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(AdamStepTest, RejectsMisalignedGradient) {
  Model m = BuildMlp({3, 2, 1}, NormSpec::None(), 0);
  DpAdamState s = DpAdamState::Init(m, AdamConfig{});
  GradientSet g = GradientSet::ZerosLike(std::vector<Shape>{{3, 2}});
  EXPECT_THROW(AdamStep(m, g, s), Error);
}

class DpAdamStepTest : public ::testing::Test {
 protected:
  Dataset data = SmallData(64, 4, 7);
  Model model = BuildMlp({4, 5, 1}, NormSpec::None(), 11);
  DpAdamState state = DpAdamState::Init(model, AdamConfig{});
  Rng poisson{1};
  Rng noise{2};

  DpStepConfig Step(double sigma, double p, double clip = 1.0) const {
    return {ClipSpec{clip}, NoiseSpec{sigma, 0}, NoiseMode::kNoiseAfterAverage, p};
  }
};

TEST_F(DpAdamStepTest, EmptyBatchChargesLedgerButSkipsUpdate) {
  const DpStepConfig step = Step(1.0, 1e-9);
  RdpCurve ledger = MakeRdpCurve({1.0, 1e-9});
  const Model before = model;
  const StepOutcome out = DpAdamStep(model, data, state, step, ledger, poisson, noise);
  EXPECT_FALSE(out.applied);
  EXPECT_EQ(out.batch_size, 0u);
  EXPECT_EQ(ledger.step_count, 1);
  EXPECT_EQ(state.t, 0);
  EXPECT_EQ(model, before);
}

TEST_F(DpAdamStepTest, ClippedNormsRespectBound) {
  for (double clip : {0.4, 0.05}) {
    const DpStepConfig step = Step(1.0, 0.5, clip);
    RdpCurve ledger = MakeRdpCurve({1.0, 0.5});
    for (int k = 0; k < 5; ++k) {
      const StepOutcome out =
          DpAdamStep(model, data, state, step, ledger, poisson, noise);
      ASSERT_TRUE(out.applied);
      EXPECT_LE(out.max_clipped_norm, clip * (1 + 1e-12));
      EXPECT_LE(out.min_grad_norm, out.mean_grad_norm);
      EXPECT_LE(out.mean_grad_norm, out.max_grad_norm);
      EXPECT_TRUE(std::isfinite(out.batch_loss));
    }
    EXPECT_EQ(ledger.step_count, 5);
  }
}

TEST_F(DpAdamStepTest, NoiselessFullBatchMatchesPlainAdam) {
  // With sigma = 0, p = 1 and a clip bound no gradient reaches, the private
  // step is Adam on the mean per-sample gradient.
  Model reference = model;
  DpAdamState ref_state = DpAdamState::Init(reference, AdamConfig{});
  const DpStepConfig step = Step(0.0, 1.0, 1e6);
  RdpCurve ledger = MakeRdpCurve({0.0, 1.0});
  for (int k = 0; k < 10; ++k) {
    DpAdamStep(model, data, state, step, ledger, poisson, noise);
    const LossAndGradient lg =
        BatchLossAndGradient(reference, data.features, data.labels);
    AdamStep(reference, lg.gradient, ref_state);
  }
  for (std::size_t t = 0; t < model.parameters().size(); ++t) {
    for (std::size_t i = 0; i < model.parameters()[t].size(); ++i) {
      EXPECT_NEAR(model.parameters()[t][i], reference.parameters()[t][i], 1e-12);
    }
  }
}

TEST_F(DpAdamStepTest, FrozenLayersStayFixedUnderNoise) {
  model.set_freeze_prefix(1);
  const Model before = model;
  const DpStepConfig step = Step(5.0, 0.5);
  RdpCurve ledger = MakeRdpCurve({5.0, 0.5});
  for (int k = 0; k < 3; ++k) DpAdamStep(model, data, state, step, ledger, poisson, noise);
  EXPECT_EQ(model.parameters()[0], before.parameters()[0]);
  EXPECT_EQ(model.parameters()[1], before.parameters()[1]);
  EXPECT_NE(model.parameters()[2], before.parameters()[2]);
}

TEST_F(DpAdamStepTest, DeterministicGivenSeeds) {
  Model other = model;
  DpAdamState other_state = DpAdamState::Init(other, AdamConfig{});
  Rng p2{1}, n2{2};
  const DpStepConfig step = Step(1.0, 0.3);
  RdpCurve l1 = MakeRdpCurve({1.0, 0.3}), l2 = l1;
  for (int k = 0; k < 4; ++k) {
    DpAdamStep(model, data, state, step, l1, poisson, noise);
    DpAdamStep(other, data, other_state, step, l2, p2, n2);
  }
  EXPECT_EQ(model, other);
}

TEST_F(DpAdamStepTest, RefusesCoupledModelAndMismatchedLedger) {
  Model coupled = BuildMlp({4, 4, 1}, NormSpec::BatchCoupled(), 0);
  DpAdamState cs = DpAdamState::Init(coupled, AdamConfig{});
  RdpCurve ledger = MakeRdpCurve({1.0, 0.5});
  try {
    DpAdamStep(coupled, data, cs, Step(1.0, 0.5), ledger, poisson, noise);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidationFailed);
  }
  EXPECT_EQ(ledger.step_count, 0);
  EXPECT_THROW(DpAdamStep(model, data, state, Step(2.0, 0.5), ledger, poisson, noise),
               Error);
  const Dataset wide = SmallData(16, 6, 0);
  EXPECT_THROW(DpAdamStep(model, wide, state, Step(1.0, 0.5), ledger, poisson, noise),
               Error);
}

}  // namespace
}  // namespace dpadam
