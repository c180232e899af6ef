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

// DP-Adam: one training step is
//
//   I  <- Poisson subsample of the data with rate p
//   v_i <- grad loss(theta, x_i), clipped to global norm R   for i in I
//   v  <- noisy average of the v_i (see NoiseMode)
//   m  <- beta1 m + (1 - beta1) v
//   u  <- beta2 u + (1 - beta2) v * v
//   theta <- theta - lr * w
//
// where w is m_hat / (sqrt(u_hat) + eps) for the standard variant and
// m / (u + eps) for the unrooted one. Every call charges one step of
// MechanismSpec{sigma, p} to the ledger, including calls whose subsample is
// empty (those leave the parameters untouched).

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpadam/accountant.hpp"
#include "dpadam/dataset.hpp"
#include "dpadam/error.hpp"
#include "dpadam/model.hpp"
#include "dpadam/privacy.hpp"
#include "dpadam/random.hpp"
#include "dpadam/tensor.hpp"

namespace dpadam {

enum class AdamVariant { kStandard, kUnrooted };

inline std::string AdamVariantName(AdamVariant v) {
  return v == AdamVariant::kStandard ? "standard" : "unrooted";
}

inline AdamVariant ParseAdamVariant(const std::string& text) {
  if (text == "standard") return AdamVariant::kStandard;
  if (text == "unrooted") return AdamVariant::kUnrooted;
  Fail(ErrorCode::kParse,
       "adam_variant must be standard or unrooted, got '" + text + "'");
}

struct AdamConfig {
  double lr = 0.08;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double stabilizer = 1e-8;
  AdamVariant variant = AdamVariant::kStandard;
  // Ignored by the unrooted variant, which never bias-corrects.
  bool bias_correction = true;

  void Validate() const {
    Require(lr > 0.0 && std::isfinite(lr), ErrorCode::kInvalidArgument,
            "lr must be positive");
    Require(beta1 >= 0.0 && beta1 < 1.0, ErrorCode::kInvalidArgument,
            "beta1 must be in [0, 1)");
    Require(beta2 >= 0.0 && beta2 < 1.0, ErrorCode::kInvalidArgument,
            "beta2 must be in [0, 1)");
    Require(stabilizer > 0.0 && std::isfinite(stabilizer),
            ErrorCode::kInvalidArgument, "adam_stabilizer must be positive");
  }
};

struct DpAdamState {
  AdamConfig config;
  GradientSet m;  // first moment
  GradientSet u;  // second moment, elementwise >= 0
  std::int64_t t = 0;  // applied updates

  static DpAdamState Init(const Model& model, const AdamConfig& config) {
    config.Validate();
    const std::vector<Shape> shapes = model.ParameterShapes();
    return {config, GradientSet::ZerosLike(shapes),
            GradientSet::ZerosLike(shapes), 0};
  }
};

// Each index of [0, n) is kept independently with probability p, in
// increasing order.
inline std::vector<std::size_t> PoissonSubsample(std::size_t n, double p,
                                                 Rng& rng) {
  Require(p >= 0.0 && p <= 1.0, ErrorCode::kInvalidArgument,
          "poisson_subsample: p must be in [0, 1]");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.Bernoulli(p)) out.push_back(i);
  }
  return out;
}

namespace internal {

inline void RequireAligned(const Model& model, const GradientSet& g,
                           const char* what) {
  const auto& params = model.parameters();
  bool ok = g.size() == params.size();
  for (std::size_t i = 0; ok && i < params.size(); ++i) {
    ok = g[i].shape() == params[i].shape();
  }
  Require(ok, ErrorCode::kShapeMismatch,
          std::string(what) + " is not shape-aligned with the model");
}

// Moment update plus parameter step for every trainable tensor.
inline void ApplyAdamUpdate(Model& model, const GradientSet& grad,
                            DpAdamState& state) {
  const AdamConfig& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double m_corr = 1.0 - std::pow(c.beta1, t);
  const double u_corr = 1.0 - std::pow(c.beta2, t);
  const std::vector<bool> trainable = model.TrainableMask();
  auto& params = model.mutable_parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!trainable[k]) continue;
    auto theta = params[k].data();
    auto g = grad[k].data();
    auto m = state.m[k].data();
    auto u = state.u[k].data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      u[i] = c.beta2 * u[i] + (1.0 - c.beta2) * (g[i] * g[i]);
      double w;
      if (c.variant == AdamVariant::kUnrooted) {
        w = m[i] / (u[i] + c.stabilizer);
      } else if (c.bias_correction) {
        w = (m[i] / m_corr) / (std::sqrt(u[i] / u_corr) + c.stabilizer);
      } else {
        w = m[i] / (std::sqrt(u[i]) + c.stabilizer);
      }
      theta[i] -= c.lr * w;
    }
  }
}

}  // namespace internal

// Non-private Adam on a precomputed gradient, with the same variant flags as
// the private step. Frozen parameters are left untouched.
inline void AdamStep(Model& model, const GradientSet& grad,
                     DpAdamState& state) {
  internal::RequireAligned(model, grad, "gradient");
  internal::RequireAligned(model, state.m, "optimizer state");
  internal::ApplyAdamUpdate(model, grad, state);
}

struct StepOutcome {
  bool applied = false;
  std::size_t batch_size = 0;
  double min_grad_norm = 0.0;  // pre-clip per-sample global norms
  double mean_grad_norm = 0.0;
  double max_grad_norm = 0.0;
  double max_clipped_norm = 0.0;
  double noisy_grad_norm = 0.0;
  double batch_loss = 0.0;  // mean per-sample loss before the update
};

struct DpStepConfig {
  ClipSpec clip;
  NoiseSpec noise;
  NoiseMode mode = NoiseMode::kNoiseAfterAverage;
  double sampling_probability = 1.0;
};

// One DP-Adam step. Refuses to run on models whose per-sample gradients are
// not isolated (see ValidateModel), and requires `ledger` to track exactly
// MechanismSpec{noise.sigma, sampling_probability}.
inline StepOutcome DpAdamStep(Model& model, const Dataset& data,
                              DpAdamState& state, const DpStepConfig& step,
                              RdpCurve& ledger, Rng& poisson_rng,
                              Rng& noise_rng) {
  const ValidationReport report = ValidateModel(model);
  Require(report.ok(), ErrorCode::kValidationFailed,
          "model is not compatible with per-sample clipping: " +
              report.ToString());
  Require(data.dim() == model.input_dim(), ErrorCode::kShapeMismatch,
          "dataset has " + std::to_string(data.dim()) +
              " features, model expects " + std::to_string(model.input_dim()));
  internal::RequireAligned(model, state.m, "optimizer state");
  internal::RequireAligned(model, state.u, "optimizer state");
  step.clip.Validate();
  step.noise.Validate();
  const MechanismSpec mechanism{step.noise.sigma, step.sampling_probability};
  Require(ledger.mechanism == mechanism, ErrorCode::kInvalidArgument,
          "ledger tracks a different mechanism than this step");

  const std::vector<std::size_t> batch =
      PoissonSubsample(data.size(), step.sampling_probability, poisson_rng);
  ledger = Compose(ledger, 1);

  StepOutcome outcome;
  outcome.batch_size = batch.size();
  if (batch.empty()) return outcome;

  // Only trainable tensors are clipped, noised and updated.
  const std::vector<bool> trainable = model.TrainableMask();
  std::vector<GradientSet> per_sample;
  per_sample.reserve(batch.size());
  double loss_sum = 0.0;
  for (std::size_t i : batch) {
    LossAndGradient lg = PerSampleGradient(model, data.Row(i), data.labels[i]);
    loss_sum += lg.loss;
    std::vector<Tensor> kept;
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      if (trainable[k]) kept.push_back(std::move(lg.gradient[k]));
    }
    per_sample.emplace_back(std::move(kept));
  }
  outcome.batch_loss = loss_sum / static_cast<double>(batch.size());

  AggregateStats stats;
  const GradientSet noisy = AggregateNoisy(per_sample, step.clip, step.noise,
                                           step.mode, noise_rng, &stats);
  outcome.min_grad_norm = stats.min_norm;
  outcome.mean_grad_norm = stats.mean_norm;
  outcome.max_grad_norm = stats.max_norm;
  outcome.max_clipped_norm = stats.max_clipped_norm;
  outcome.noisy_grad_norm = noisy.GlobalL2Norm();

  std::vector<Tensor> full;
  full.reserve(trainable.size());
  for (std::size_t k = 0, j = 0; k < trainable.size(); ++k) {
    if (trainable[k]) {
      full.push_back(noisy[j++]);
    } else {
      full.emplace_back(model.parameters()[k].shape());
    }
  }
  internal::ApplyAdamUpdate(model, GradientSet(std::move(full)), state);
  outcome.applied = true;
  return outcome;
}

}  // namespace dpadam
