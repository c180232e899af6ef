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

// Renyi-DP accounting for the (Poisson-subsampled) Gaussian mechanism.
//
// A ledger is an RdpCurve: the one-step RDP of a fixed mechanism evaluated on
// a grid of orders alpha, plus the number of steps charged so far. Total RDP
// at each order is per_step * step_count, and conversion to (epsilon, delta)
// takes the minimum over the grid of
//
//   rdp(alpha) + log(1 / delta) / (alpha - 1).
//
// Restricting the minimum to a grid can only overstate epsilon.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpadam/error.hpp"

namespace dpadam {

inline constexpr double kDefaultDelta = 1e-5;
inline constexpr double kMaxCalibratedSigma = 1e4;
inline constexpr double kCalibrationRelTol = 1e-3;

struct MechanismSpec {
  double sigma = 1.0;  // noise multiplier; +inf means no release
  double q = 1.0;      // Poisson sampling probability

  void Validate() const {
    Require(sigma >= 0.0 && !std::isnan(sigma), ErrorCode::kInvalidArgument,
            "mechanism sigma must be >= 0");
    Require(q > 0.0 && q <= 1.0, ErrorCode::kInvalidArgument,
            "mechanism sampling probability must be in (0, 1]");
  }

  friend bool operator==(const MechanismSpec&, const MechanismSpec&) = default;
};

struct PrivacySpent {
  double epsilon = 0.0;
  double delta = kDefaultDelta;
  // Minimizing order. +inf when epsilon is 0 (the bound tends to 0 as
  // alpha grows), NaN when epsilon is infinite.
  double optimal_alpha = std::numeric_limits<double>::infinity();
};

namespace internal {

inline void CheckDistribution(std::span<const double> p, const char* name) {
  Require(!p.empty(), ErrorCode::kInvalidArgument,
          std::string(name) + " is empty");
  double sum = 0.0;
  for (double v : p) {
    Require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidArgument,
            std::string(name) + " has a negative or non-finite entry");
    sum += v;
  }
  Require(std::abs(sum - 1.0) <= 1e-12, ErrorCode::kInvalidArgument,
          std::string(name) + " does not sum to 1");
}

inline void CheckPair(std::span<const double> p, std::span<const double> q) {
  Require(p.size() == q.size(), ErrorCode::kInvalidArgument,
          "distributions have different lengths");
  CheckDistribution(p, "p");
  CheckDistribution(q, "q");
  for (std::size_t i = 0; i < p.size(); ++i) {
    Require(p[i] == 0.0 || q[i] > 0.0, ErrorCode::kInvalidArgument,
            "support violation: p > 0 where q = 0 at index " +
                std::to_string(i));
  }
}

inline double LogSumExp(std::span<const double> terms) {
  double max = -std::numeric_limits<double>::infinity();
  for (double t : terms) max = std::max(max, t);
  if (!std::isfinite(max)) return max;
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - max);
  return max + std::log(sum);
}

// log(exp(z) - 1) for z > 0.
inline double LogExpm1(double z) {
  return z > 1.0 ? z + std::log1p(-std::exp(-z)) : std::log(std::expm1(z));
}

// log(1 + exp(x)).
inline double Log1pExp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline bool IsInteger(double x) { return std::floor(x) == x; }

}  // namespace internal

// D_alpha(p || q) = log(sum_i p_i^alpha q_i^(1 - alpha)) / (alpha - 1).
inline double RenyiDivergence(std::span<const double> p,
                              std::span<const double> q, double alpha) {
  Require(alpha > 0.0 && std::isfinite(alpha), ErrorCode::kInvalidArgument,
          "renyi_divergence: alpha must be positive and finite");
  Require(alpha != 1.0, ErrorCode::kInvalidArgument,
          "renyi_divergence: alpha = 1 is the KL divergence; use KlDivergence");
  internal::CheckPair(p, q);
  if (std::equal(p.begin(), p.end(), q.begin())) return 0.0;
  std::vector<double> terms;
  terms.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    terms.push_back(std::log(p[i]) + (alpha - 1.0) * (std::log(p[i]) - std::log(q[i])));
  }
  return std::max(0.0, internal::LogSumExp(terms) / (alpha - 1.0));
}

// sum_i p_i log(p_i / q_i), with 0 log 0 = 0.
inline double KlDivergence(std::span<const double> p,
                           std::span<const double> q) {
  internal::CheckPair(p, q);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) sum += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(0.0, sum);
}

// RDP of the Gaussian mechanism with sensitivity 1 and noise multiplier sigma.
inline double RdpGaussian(double alpha, double sigma) {
  Require(alpha > 1.0 && std::isfinite(alpha), ErrorCode::kInvalidArgument,
          "rdp_gaussian: alpha must be > 1");
  Require(sigma > 0.0, ErrorCode::kInvalidArgument,
          "rdp_gaussian: sigma must be > 0");
  return alpha / (2.0 * sigma * sigma);
}

// RDP at integer order alpha of the Poisson-subsampled Gaussian mechanism:
//
//   log(sum_{k=0}^{alpha} C(alpha, k) (1 - q)^(alpha - k) q^k
//       exp((k^2 - k) / (2 sigma^2))) / (alpha - 1).
//
// The binomial weights sum to 1, so the sum is 1 + sum_{k>=2} C(...) (1-q)^..
// q^k expm1((k^2 - k) / (2 sigma^2)); evaluating that excess in log space keeps
// full relative precision when the result is tiny and avoids overflow when it
// is huge.
inline double RdpSubsampledGaussian(const MechanismSpec& spec, double alpha) {
  Require(alpha >= 2.0 && internal::IsInteger(alpha) && std::isfinite(alpha),
          ErrorCode::kInvalidArgument,
          "rdp_subsampled_gaussian: alpha must be an integer >= 2");
  Require(spec.q >= 0.0 && spec.q <= 1.0, ErrorCode::kInvalidArgument,
          "rdp_subsampled_gaussian: q must be in [0, 1]");
  Require(spec.sigma > 0.0, ErrorCode::kInvalidArgument,
          "rdp_subsampled_gaussian: sigma must be > 0");
  if (spec.q == 0.0 || std::isinf(spec.sigma)) return 0.0;
  if (spec.q == 1.0) return RdpGaussian(alpha, spec.sigma);

  const double log_q = std::log(spec.q);
  const double log_1mq = std::log1p(-spec.q);
  const double two_var = 2.0 * spec.sigma * spec.sigma;
  const auto n = static_cast<std::int64_t>(alpha);
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(n));
  for (std::int64_t k = 2; k <= n; ++k) {
    const double kd = static_cast<double>(k);
    const double log_binom = std::lgamma(alpha + 1.0) - std::lgamma(kd + 1.0) -
                             std::lgamma(alpha - kd + 1.0);
    terms.push_back(log_binom + (alpha - kd) * log_1mq + kd * log_q +
                    internal::LogExpm1((kd * kd - kd) / two_var));
  }
  return internal::Log1pExp(internal::LogSumExp(terms)) / (alpha - 1.0);
}

// Orders used by the ledger: integers 2..256, plus fractional orders in
// (1, 2) that are only used when q == 1, where the closed form holds for every
// alpha > 1.
inline std::vector<double> DefaultAlphas() {
  std::vector<double> alphas;
  for (int k = 1; k < 20; ++k) alphas.push_back(1.0 + k / 20.0);
  for (int a = 2; a <= 256; ++a) alphas.push_back(a);
  return alphas;
}

struct RdpCurve {
  MechanismSpec mechanism;
  std::vector<double> alphas;    // strictly increasing, all > 1
  std::vector<double> per_step;  // one-step RDP at each order
  std::int64_t step_count = 0;

  std::size_t size() const { return alphas.size(); }

  // Accumulated RDP at order index i.
  double Rdp(std::size_t i) const {
    return step_count == 0 ? 0.0
                           : per_step[i] * static_cast<double>(step_count);
  }

  std::vector<std::pair<double, double>> Points() const {
    std::vector<std::pair<double, double>> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.emplace_back(alphas[i], Rdp(i));
    return out;
  }
};

// One-step curve with step_count 0. Fractional orders are dropped when
// q < 1. sigma = 0 yields an all-infinite curve, sigma = inf an all-zero one.
inline RdpCurve MakeRdpCurve(const MechanismSpec& mechanism,
                             std::span<const double> alphas = {}) {
  mechanism.Validate();
  std::vector<double> grid = alphas.empty()
                                 ? DefaultAlphas()
                                 : std::vector<double>(alphas.begin(), alphas.end());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    Require(grid[i] > 1.0 && std::isfinite(grid[i]), ErrorCode::kInvalidArgument,
            "rdp curve orders must be finite and > 1");
    Require(i == 0 || grid[i] > grid[i - 1], ErrorCode::kInvalidArgument,
            "rdp curve orders must be strictly increasing");
  }
  RdpCurve curve;
  curve.mechanism = mechanism;
  for (double alpha : grid) {
    if (mechanism.q < 1.0 && !internal::IsInteger(alpha)) continue;
    double rdp;
    if (mechanism.sigma == 0.0) {
      rdp = std::numeric_limits<double>::infinity();
    } else if (std::isinf(mechanism.sigma)) {
      rdp = 0.0;
    } else if (internal::IsInteger(alpha)) {
      rdp = RdpSubsampledGaussian(mechanism, alpha);
    } else {
      rdp = RdpGaussian(alpha, mechanism.sigma);  // q == 1 here
    }
    curve.alphas.push_back(alpha);
    curve.per_step.push_back(rdp);
  }
  Require(!curve.alphas.empty(), ErrorCode::kInvalidArgument,
          "rdp curve has no usable orders");
  return curve;
}

// Charges `steps` more applications of the curve's mechanism.
inline RdpCurve Compose(const RdpCurve& curve, std::int64_t steps) {
  Require(steps >= 0, ErrorCode::kInvalidArgument,
          "compose: steps must be non-negative");
  RdpCurve out = curve;
  out.step_count += steps;
  return out;
}

inline PrivacySpent ToEpsDelta(const RdpCurve& curve, double delta) {
  Require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument,
          "delta must be in (0, 1)");
  Require(curve.size() > 0, ErrorCode::kInvalidArgument, "empty rdp curve");
  PrivacySpent spent;
  spent.delta = delta;
  bool all_zero = true;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve.Rdp(i) != 0.0) all_zero = false;
  }
  if (all_zero) {
    spent.epsilon = 0.0;
    spent.optimal_alpha = std::numeric_limits<double>::infinity();
    return spent;
  }
  const double log_inv_delta = -std::log(delta);
  spent.epsilon = std::numeric_limits<double>::infinity();
  spent.optimal_alpha = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const double eps = curve.Rdp(i) + log_inv_delta / (curve.alphas[i] - 1.0);
    if (eps < spent.epsilon) {
      spent.epsilon = eps;
      spent.optimal_alpha = curve.alphas[i];
    }
  }
  return spent;
}

// Epsilon after `steps` applications of MechanismSpec{sigma, q}.
inline PrivacySpent EpsilonFor(double sigma, double q, std::int64_t steps,
                               double delta) {
  return ToEpsDelta(Compose(MakeRdpCurve({sigma, q}), steps), delta);
}

// Smallest sigma, to relative tolerance kCalibrationRelTol, whose accountant
// epsilon after `steps` steps at sampling rate q is <= target_eps. The
// returned value is always on the feasible side of the bisection.
inline double CalibrateSigma(double target_eps, double delta, double q,
                             std::int64_t steps) {
  Require(target_eps > 0.0 && !std::isnan(target_eps),
          ErrorCode::kInvalidArgument, "calibrate_sigma: target_eps must be > 0");
  Require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument,
          "calibrate_sigma: delta must be in (0, 1)");
  Require(q > 0.0 && q <= 1.0, ErrorCode::kInvalidArgument,
          "calibrate_sigma: q must be in (0, 1]");
  Require(steps >= 1, ErrorCode::kInvalidArgument,
          "calibrate_sigma: steps must be >= 1");
  auto feasible = [&](double sigma) {
    return EpsilonFor(sigma, q, steps, delta).epsilon <= target_eps;
  };
  if (!feasible(kMaxCalibratedSigma)) {
    Fail(ErrorCode::kCalibrationFailed,
         "target epsilon " + std::to_string(target_eps) +
             " is unreachable with sigma <= " +
             std::to_string(kMaxCalibratedSigma) + " for q = " +
             std::to_string(q) + ", steps = " + std::to_string(steps));
  }
  double lo, hi;
  if (feasible(1.0)) {
    hi = 1.0;
    lo = 0.5;
    while (feasible(lo)) {
      hi = lo;
      lo /= 2.0;
      if (lo < 1e-6) return hi;
    }
  } else {
    lo = 1.0;
    hi = 2.0;
    while (!feasible(hi)) {
      lo = hi;
      hi = std::min(hi * 2.0, kMaxCalibratedSigma);
    }
  }
  while (hi / lo > 1.0 + kCalibrationRelTol) {
    const double mid = std::sqrt(lo * hi);
    if (feasible(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

// sigma = sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon, the classic
// (epsilon, delta) Gaussian-mechanism calibration for epsilon <= 1.
inline double ClassicGaussianSigma(double epsilon, double delta,
                                   double sensitivity) {
  Require(epsilon > 0.0 && epsilon <= 1.0, ErrorCode::kInvalidArgument,
          "classic_gaussian_sigma: epsilon must be in (0, 1]");
  Require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument,
          "classic_gaussian_sigma: delta must be in (0, 1)");
  Require(sensitivity > 0.0 && std::isfinite(sensitivity),
          ErrorCode::kInvalidArgument,
          "classic_gaussian_sigma: sensitivity must be > 0");
  return sensitivity * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

// JSON surface for accountant queries.
//   forward: {sigma, q, steps, delta} -> {epsilon, optimal_alpha, curve}
//   inverse: {target_eps, q, steps, delta} -> {sigma, epsilon, ...}
inline nlohmann::json CurveToJson(const RdpCurve& curve) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& [alpha, rdp] : curve.Points()) points.push_back({alpha, rdp});
  return points;
}

inline nlohmann::json AccountantQuery(double sigma, double q,
                                      std::int64_t steps, double delta) {
  Require(steps >= 0, ErrorCode::kInvalidArgument, "steps must be >= 0");
  const RdpCurve curve = Compose(MakeRdpCurve({sigma, q}), steps);
  const PrivacySpent spent = ToEpsDelta(curve, delta);
  return {{"sigma", sigma},
          {"q", q},
          {"steps", steps},
          {"delta", delta},
          {"epsilon", spent.epsilon},
          {"optimal_alpha", spent.optimal_alpha},
          {"curve", CurveToJson(curve)}};
}

inline nlohmann::json InverseAccountantQuery(double target_eps, double q,
                                             std::int64_t steps, double delta) {
  const double sigma = CalibrateSigma(target_eps, delta, q, steps);
  nlohmann::json out = AccountantQuery(sigma, q, steps, delta);
  out["target_eps"] = target_eps;
  return out;
}

// Dispatches on the presence of "target_eps".
inline nlohmann::json AccountantQueryFromJson(const nlohmann::json& query) {
  try {
    const double q = query.at("q").get<double>();
    const auto steps = query.at("steps").get<std::int64_t>();
    const double delta = query.value("delta", kDefaultDelta);
    if (query.contains("target_eps")) {
      return InverseAccountantQuery(query.at("target_eps").get<double>(), q,
                                    steps, delta);
    }
    return AccountantQuery(query.at("sigma").get<double>(), q, steps, delta);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kParse, std::string("accountant query: ") + e.what());
  }
}

}  // namespace dpadam
