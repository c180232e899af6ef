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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpadam/error.hpp"
#include "dpadam/random.hpp"
#include "dpadam/tensor.hpp"

namespace dpadam {

// Per-sample L2 bound R on the whole-model gradient.
struct ClipSpec {
  double max_norm = 1.0;

  void Validate() const {
    Require(std::isfinite(max_norm) && max_norm > 0.0,
            ErrorCode::kInvalidArgument, "clip norm must be positive and finite");
  }
};

// Noise multiplier sigma (noise std is sigma * R) and the seed of the noise
// stream.
struct NoiseSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;

  void Validate() const {
    Require(std::isfinite(sigma) && sigma >= 0.0, ErrorCode::kInvalidArgument,
            "noise multiplier must be non-negative and finite");
  }
};

// Where the Gaussian noise enters the batch average.
//   kNoiseAfterAverage: mean(clipped) + sigma R N(0, I)
//   kSumThenAverage:    (sum(clipped) + sigma R N(0, I)) / |batch|
// kNoiseAfterAverage puts |batch| times the per-coordinate noise std of
// kSumThenAverage into the update.
enum class NoiseMode { kNoiseAfterAverage, kSumThenAverage };

inline std::string NoiseModeName(NoiseMode mode) {
  return mode == NoiseMode::kNoiseAfterAverage ? "noise_after_average"
                                               : "sum_then_average";
}

inline NoiseMode ParseNoiseMode(const std::string& text) {
  if (text == "noise_after_average") return NoiseMode::kNoiseAfterAverage;
  if (text == "sum_then_average") return NoiseMode::kSumThenAverage;
  Fail(ErrorCode::kParse,
       "noise_mode must be noise_after_average or sum_then_average, got '" +
           text + "'");
}

// g / max(1, ||g||_2 / R), with the norm taken over every tensor of g.
inline GradientSet ClipGradient(const GradientSet& g, const ClipSpec& spec) {
  spec.Validate();
  Require(g.AllFinite(), ErrorCode::kNonFinite,
          "clip_gradient: gradient has non-finite entries");
  const double norm = g.GlobalL2Norm();
  const double divisor = std::max(1.0, norm / spec.max_norm);
  if (divisor == 1.0) return g;
  GradientSet out = g;
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (double& v : out[t].data()) v /= divisor;
  }
  return out;
}

// Independent N(0, scale^2) entries, drawn tensor by tensor in order.
inline GradientSet GaussianNoise(std::span<const Shape> shapes, double scale,
                                 Rng& rng) {
  Require(std::isfinite(scale) && scale >= 0.0, ErrorCode::kInvalidArgument,
          "gaussian_noise: scale must be non-negative, got " +
              std::to_string(scale));
  GradientSet out = GradientSet::ZerosLike(shapes);
  if (scale == 0.0) return out;
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (double& v : out[t].data()) v = scale * rng.Normal();
  }
  return out;
}

struct AggregateStats {
  double min_norm = 0.0;  // pre-clip global norms
  double mean_norm = 0.0;
  double max_norm = 0.0;
  double max_clipped_norm = 0.0;
};

// Clips every per-sample gradient to R, sums them in list order and adds
// sigma R N(0, I) according to `mode`. The summation order is fixed, so the
// result does not depend on how the inputs were produced.
inline GradientSet AggregateNoisy(std::span<const GradientSet> per_sample,
                                  const ClipSpec& clip, const NoiseSpec& noise,
                                  NoiseMode mode, Rng& rng,
                                  AggregateStats* stats = nullptr) {
  Require(!per_sample.empty(), ErrorCode::kEmptyBatch,
          "aggregate_noisy: empty batch");
  clip.Validate();
  noise.Validate();
  GradientSet sum = GradientSet::ZerosLike(per_sample.front());
  AggregateStats local{INFINITY, 0.0, 0.0, 0.0};
  for (const GradientSet& g : per_sample) {
    sum.RequireSameShapes(g, "aggregate_noisy");
    const double norm = g.GlobalL2Norm();
    local.min_norm = std::min(local.min_norm, norm);
    local.max_norm = std::max(local.max_norm, norm);
    local.mean_norm += norm;
    const GradientSet clipped = ClipGradient(g, clip);
    local.max_clipped_norm =
        std::max(local.max_clipped_norm, clipped.GlobalL2Norm());
    sum += clipped;
  }
  const double batch = static_cast<double>(per_sample.size());
  local.mean_norm /= batch;
  if (stats != nullptr) *stats = local;

  const std::vector<Shape> shapes = sum.Shapes();
  const GradientSet n =
      GaussianNoise(shapes, noise.sigma * clip.max_norm, rng);
  GradientSet out = GradientSet::ZerosLike(shapes);
  for (std::size_t t = 0; t < out.size(); ++t) {
    auto dst = out[t].data();
    auto s = sum[t].data();
    auto z = n[t].data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = mode == NoiseMode::kNoiseAfterAverage ? s[i] / batch + z[i]
                                                : (s[i] + z[i]) / batch;
    }
  }
  return out;
}

}  // namespace dpadam
