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
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpadam/accountant.hpp"
#include "dpadam/dataset.hpp"
#include "dpadam/error.hpp"
#include "dpadam/model.hpp"
#include "dpadam/optim.hpp"
#include "dpadam/privacy.hpp"
#include "dpadam/random.hpp"

namespace dpadam {

enum class PrivacyMode { kOff, kTargetEpsilon, kFixedSigma };

inline std::string PrivacyModeName(PrivacyMode mode) {
  switch (mode) {
    case PrivacyMode::kOff: return "off";
    case PrivacyMode::kTargetEpsilon: return "target_eps";
    case PrivacyMode::kFixedSigma: return "fixed_sigma";
  }
  return "?";
}

inline PrivacyMode ParsePrivacyMode(const std::string& text) {
  if (text == "off") return PrivacyMode::kOff;
  if (text == "target_eps") return PrivacyMode::kTargetEpsilon;
  if (text == "fixed_sigma") return PrivacyMode::kFixedSigma;
  Fail(ErrorCode::kParse,
       "privacy must be off, target_eps or fixed_sigma, got '" + text + "'");
}

struct RunSeeds {
  std::uint64_t model = 1;
  std::uint64_t shuffle = 2;
  std::uint64_t poisson = 3;
  std::uint64_t noise = 4;

  RunSeeds Offset(std::uint64_t k) const {
    return {model + k, shuffle + k, poisson + k, noise + k};
  }
  friend bool operator==(const RunSeeds&, const RunSeeds&) = default;
};

struct RunConfig {
  std::string run_id = "run";
  std::string data_path;  // empty: synthetic
  std::string test_path;  // empty: hold out test_fraction of the data
  SyntheticSpec synthetic;
  double valid_fraction = 0.2;
  double test_fraction = 0.1;

  std::vector<std::size_t> hidden{16, 16};
  NormSpec norm = NormSpec::None();
  std::size_t freeze_prefix = 0;

  AdamConfig adam;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;  // expected batch size, p = B / n_train
  double clip_norm = 1.0;

  PrivacyMode privacy = PrivacyMode::kTargetEpsilon;
  double target_eps = 10.0;
  double sigma = 1.0;  // fixed_sigma mode
  double delta = kDefaultDelta;
  // Stop before the step that would push epsilon past this. Defaults to
  // target_eps in target mode.
  std::optional<double> budget_eps;
  NoiseMode noise_mode = NoiseMode::kNoiseAfterAverage;
  RunSeeds seeds;

  void Validate() const {
    Require(epochs >= 1, ErrorCode::kInvalidArgument, "epochs must be >= 1");
    Require(batch_size >= 1, ErrorCode::kInvalidArgument,
            "batch_size must be >= 1");
    ClipSpec{clip_norm}.Validate();
    adam.Validate();
    Require(delta > 0.0 && delta < 1.0, ErrorCode::kInvalidArgument,
            "delta must be in (0, 1)");
    if (privacy == PrivacyMode::kTargetEpsilon) {
      Require(target_eps > 0.0 && std::isfinite(target_eps),
              ErrorCode::kInvalidArgument, "target_eps must be positive");
    }
    if (privacy == PrivacyMode::kFixedSigma) {
      NoiseSpec{sigma, 0}.Validate();
    }
    if (budget_eps) {
      Require(*budget_eps >= 0.0, ErrorCode::kInvalidArgument,
              "budget_eps must be >= 0");
    }
    for (std::size_t h : hidden) {
      Require(h >= 1, ErrorCode::kInvalidArgument, "hidden widths must be >= 1");
    }
  }

  std::optional<double> EffectiveBudget() const {
    if (privacy == PrivacyMode::kOff) return std::nullopt;
    if (budget_eps) return budget_eps;
    if (privacy == PrivacyMode::kTargetEpsilon) return target_eps;
    return std::nullopt;
  }
};

enum class StopReason { kEpochsExhausted, kBudgetExceeded };

inline std::string StopReasonName(StopReason r) {
  return r == StopReason::kEpochsExhausted ? "epochs-exhausted"
                                           : "budget-exceeded";
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::int64_t steps = 0;  // cumulative
  double train_loss = 0.0;
  double valid_acc = 0.0;
  double epsilon = 0.0;  // cumulative, 0 when privacy is off

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
  RunConfig config;
  double sigma = 0.0;  // noise multiplier actually used, 0 when off
  double sampling_probability = 0.0;
  std::int64_t planned_steps = 0;
  std::int64_t steps_run = 0;
  std::int64_t empty_batches = 0;
  std::vector<EpochRecord> epochs;
  std::optional<PrivacySpent> privacy;  // absent when privacy is off
  StopReason stop_reason = StopReason::kEpochsExhausted;
  double train_loss_final = 0.0;
  double valid_acc = 0.0;
  double test_acc = 0.0;
  double wall_clock_s = 0.0;

  double epsilon() const {
    return privacy ? privacy->epsilon : std::numeric_limits<double>::infinity();
  }
};

namespace internal {

inline Dataset LoadRunData(const RunConfig& config) {
  if (config.data_path.empty()) {
    Dataset data = SyntheticDataset(config.synthetic);
    Standardize(data);
    return data;
  }
  return LoadCsvDataset(config.data_path);
}

inline std::vector<std::size_t> ModelWidths(const RunConfig& config,
                                            std::size_t input_dim) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  return widths;
}

}  // namespace internal

// Runs one training job end to end. The wall-clock field is the only
// non-deterministic part of the report.
inline TrainReport Train(const RunConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  config.Validate();

  const Dataset data = internal::LoadRunData(config);
  std::optional<Dataset> test_file;
  if (!config.test_path.empty()) test_file = LoadCsvDataset(config.test_path);
  Rng shuffle_rng(config.seeds.shuffle);
  const DataSplits split =
      SplitDataset(data, config.valid_fraction, config.test_fraction,
                   shuffle_rng, test_file ? &*test_file : nullptr);
  const Dataset& train = split.train;
  const std::size_t n = train.size();
  Require(config.batch_size <= n, ErrorCode::kInvalidArgument,
          "batch_size " + std::to_string(config.batch_size) +
              " exceeds the training set size " + std::to_string(n));

  Model model = BuildMlp(internal::ModelWidths(config, train.dim()),
                         config.norm, config.seeds.model);
  model.set_freeze_prefix(config.freeze_prefix);
  DpAdamState state = DpAdamState::Init(model, config.adam);

  TrainReport report;
  report.config = config;
  const double p =
      static_cast<double>(config.batch_size) / static_cast<double>(n);
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  report.sampling_probability = p;
  report.planned_steps =
      static_cast<std::int64_t>(config.epochs * steps_per_epoch);

  const bool is_private = config.privacy != PrivacyMode::kOff;
  if (config.privacy == PrivacyMode::kTargetEpsilon) {
    report.sigma =
        CalibrateSigma(config.target_eps, config.delta, p, report.planned_steps);
  } else if (config.privacy == PrivacyMode::kFixedSigma) {
    report.sigma = config.sigma;
  }
  if (is_private) {
    const ValidationReport v = ValidateModel(model);
    Require(v.ok(), ErrorCode::kValidationFailed,
            "model is not compatible with per-sample clipping: " + v.ToString());
  }

  const std::optional<double> budget = config.EffectiveBudget();
  RdpCurve ledger;
  if (is_private) ledger = MakeRdpCurve({report.sigma, p});
  const DpStepConfig step{ClipSpec{config.clip_norm},
                          NoiseSpec{report.sigma, config.seeds.noise},
                          config.noise_mode, p};
  Rng poisson_rng(config.seeds.poisson);
  Rng noise_rng(config.seeds.noise);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  auto current_eps = [&] {
    return is_private ? ToEpsDelta(ledger, config.delta).epsilon : 0.0;
  };
  auto record_epoch = [&](std::size_t epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = report.steps_run;
    rec.train_loss = Evaluate(model, train.features, train.labels).mean_loss;
    rec.valid_acc =
        Evaluate(model, split.valid.features, split.valid.labels).accuracy;
    rec.epsilon = current_eps();
    report.epochs.push_back(rec);
  };

  bool stopped = false;
  for (std::size_t epoch = 1; epoch <= config.epochs && !stopped; ++epoch) {
    std::size_t taken = 0;
    if (!is_private) Shuffle(order, shuffle_rng);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      if (budget) {
        const double next = ToEpsDelta(Compose(ledger, 1), config.delta).epsilon;
        if (next > *budget) {
          stopped = true;
          break;
        }
      }
      if (is_private) {
        const StepOutcome out =
            DpAdamStep(model, train, state, step, ledger, poisson_rng, noise_rng);
        if (!out.applied) ++report.empty_batches;
      } else {
        const std::size_t begin = s * config.batch_size;
        const std::size_t end = std::min(n, begin + config.batch_size);
        const Dataset batch = train.Subset(
            std::span<const std::size_t>(order).subspan(begin, end - begin));
        const LossAndGradient lg =
            BatchLossAndGradient(model, batch.features, batch.labels);
        AdamStep(model, lg.gradient, state);
      }
      ++report.steps_run;
      ++taken;
    }
    if (taken > 0) record_epoch(epoch);
  }
  report.stop_reason =
      stopped ? StopReason::kBudgetExceeded : StopReason::kEpochsExhausted;

  if (report.epochs.empty()) {
    report.train_loss_final =
        Evaluate(model, train.features, train.labels).mean_loss;
    report.valid_acc =
        Evaluate(model, split.valid.features, split.valid.labels).accuracy;
  } else {
    report.train_loss_final = report.epochs.back().train_loss;
    report.valid_acc = report.epochs.back().valid_acc;
  }
  report.test_acc =
      Evaluate(model, split.test.features, split.test.labels).accuracy;
  if (is_private) report.privacy = ToEpsDelta(ledger, config.delta);
  report.wall_clock_s = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - started)
                            .count();
  return report;
}

// ---------------------------------------------------------------------------
// Reports

inline const std::vector<std::string>& ReportColumns() {
  static const std::vector<std::string> kColumns{
      "run_id",         "seed",         "target_eps", "sigma",
      "achieved_eps",   "delta",        "clip_norm",  "freeze_prefix",
      "epochs_run",     "stop_reason",  "train_loss_final",
      "valid_acc",      "test_acc",     "wall_clock_s"};
  return kColumns;
}

// One CSV row. `seed` is the seed offset, or "median" on aggregate rows;
// failed cells carry "error: ..." in stop_reason and NaN metrics.
struct ReportRow {
  std::string run_id;
  std::string seed;
  double target_eps = 0.0;  // inf when privacy is off
  double sigma = 0.0;
  double achieved_eps = 0.0;
  double delta = 0.0;
  double clip_norm = 0.0;
  std::size_t freeze_prefix = 0;
  double epochs_run = 0.0;  // fractional on median rows
  std::string stop_reason;
  double train_loss_final = 0.0;
  double valid_acc = 0.0;
  double test_acc = 0.0;
  double wall_clock_s = 0.0;

  bool is_error() const { return stop_reason.rfind("error", 0) == 0; }
};

inline double TargetEpsOf(const RunConfig& c) {
  switch (c.privacy) {
    case PrivacyMode::kOff: return std::numeric_limits<double>::infinity();
    case PrivacyMode::kTargetEpsilon: return c.target_eps;
    case PrivacyMode::kFixedSigma:
      return c.budget_eps ? *c.budget_eps : std::numeric_limits<double>::quiet_NaN();
  }
  return 0.0;
}

inline ReportRow MakeReportRow(const TrainReport& r, const std::string& seed) {
  ReportRow row;
  row.run_id = r.config.run_id;
  row.seed = seed;
  row.target_eps = TargetEpsOf(r.config);
  row.sigma = r.sigma;
  row.achieved_eps = r.epsilon();
  row.delta = r.config.delta;
  row.clip_norm = r.config.clip_norm;
  row.freeze_prefix = r.config.freeze_prefix;
  row.epochs_run = static_cast<double>(r.epochs.size());
  row.stop_reason = StopReasonName(r.stop_reason);
  row.train_loss_final = r.train_loss_final;
  row.valid_acc = r.valid_acc;
  row.test_acc = r.test_acc;
  row.wall_clock_s = r.wall_clock_s;
  return row;
}

namespace internal {

inline std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> SplitCsvRecord(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

inline double ParseReportNumber(const std::string& text, std::size_t line_no) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  Require(ParseDouble(text, v), ErrorCode::kParse,
          "report line " + std::to_string(line_no) + ": bad number '" + text + "'");
  return v;
}

}  // namespace internal

inline std::string ReportCsv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  const auto& cols = ReportColumns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out << (i ? "," : "") << cols[i];
  }
  out << '\n';
  auto num = [](double v) { return internal::FormatDouble(v); };
  for (const ReportRow& r : rows) {
    out << internal::CsvField(r.run_id) << ',' << internal::CsvField(r.seed)
        << ',' << num(r.target_eps) << ',' << num(r.sigma) << ','
        << num(r.achieved_eps) << ',' << num(r.delta) << ','
        << num(r.clip_norm) << ',' << r.freeze_prefix << ','
        << num(r.epochs_run) << ',' << internal::CsvField(r.stop_reason)
        << ',' << num(r.train_loss_final) << ',' << num(r.valid_acc) << ','
        << num(r.test_acc) << ',' << num(r.wall_clock_s) << '\n';
  }
  return out.str();
}

inline std::vector<ReportRow> ParseReportCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)), ErrorCode::kParse,
          "report: empty document");
  Require(internal::SplitCsvRecord(line) == ReportColumns(), ErrorCode::kParse,
          "report: unexpected header");
  std::vector<ReportRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = internal::SplitCsvRecord(line);
    Require(f.size() == ReportColumns().size(), ErrorCode::kParse,
            "report line " + std::to_string(line_no) + ": expected " +
                std::to_string(ReportColumns().size()) + " fields");
    auto num = [&](std::size_t i) {
      return internal::ParseReportNumber(f[i], line_no);
    };
    ReportRow r;
    r.run_id = f[0];
    r.seed = f[1];
    r.target_eps = num(2);
    r.sigma = num(3);
    r.achieved_eps = num(4);
    r.delta = num(5);
    r.clip_norm = num(6);
    r.freeze_prefix = static_cast<std::size_t>(num(7));
    r.epochs_run = num(8);
    r.stop_reason = f[9];
    r.train_loss_final = num(10);
    r.valid_acc = num(11);
    r.test_acc = num(12);
    r.wall_clock_s = num(13);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline nlohmann::json RunConfigToJson(const RunConfig& c) {
  nlohmann::json j;
  j["run_id"] = c.run_id;
  if (c.data_path.empty()) {
    j["data"] = {{"synthetic",
                  {{"n", c.synthetic.n},
                   {"dim", c.synthetic.dim},
                   {"separation", c.synthetic.separation},
                   {"label_noise", c.synthetic.label_noise},
                   {"seed", c.synthetic.seed}}}};
  } else {
    j["data"] = {{"csv", c.data_path}};
  }
  j["test_data"] = c.test_path;
  j["valid_fraction"] = c.valid_fraction;
  j["test_fraction"] = c.test_fraction;
  j["hidden"] = c.hidden;
  j["norm"] = c.norm.ToString();
  j["freeze_prefix"] = c.freeze_prefix;
  j["optimizer"] = {{"lr", c.adam.lr},
                    {"beta1", c.adam.beta1},
                    {"beta2", c.adam.beta2},
                    {"adam_stabilizer", c.adam.stabilizer},
                    {"variant", AdamVariantName(c.adam.variant)},
                    {"bias_correction", c.adam.bias_correction}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["clip_norm"] = c.clip_norm;
  j["privacy"] = PrivacyModeName(c.privacy);
  j["target_eps"] = c.target_eps;
  j["sigma"] = c.sigma;
  j["delta"] = c.delta;
  j["budget_eps"] = c.budget_eps ? nlohmann::json(*c.budget_eps) : nlohmann::json();
  j["noise_mode"] = NoiseModeName(c.noise_mode);
  j["seeds"] = {{"model", c.seeds.model},
                {"shuffle", c.seeds.shuffle},
                {"poisson", c.seeds.poisson},
                {"noise", c.seeds.noise}};
  return j;
}

namespace internal {

// JSON has no inf / nan; those become null.
inline nlohmann::json FiniteOrNull(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
}

}  // namespace internal

inline nlohmann::json TrainReportToJson(const TrainReport& r) {
  nlohmann::json j;
  j["config"] = RunConfigToJson(r.config);
  if (r.privacy) {
    j["privacy"] = {{"epsilon", r.privacy->epsilon},
                    {"delta", r.privacy->delta},
                    {"optimal_alpha", internal::FiniteOrNull(r.privacy->optimal_alpha)},
                    {"sigma", r.sigma},
                    {"sampling_probability", r.sampling_probability}};
  } else {
    j["privacy"] = nullptr;
  }
  j["accuracy"] = {{"train_loss_final", r.train_loss_final},
                   {"valid_acc", r.valid_acc},
                   {"test_acc", r.test_acc}};
  j["stop_reason"] = StopReasonName(r.stop_reason);
  j["planned_steps"] = r.planned_steps;
  j["steps_run"] = r.steps_run;
  j["empty_batches"] = r.empty_batches;
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochRecord& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"steps", e.steps},
                      {"train_loss", e.train_loss},
                      {"valid_acc", e.valid_acc},
                      {"epsilon", e.epsilon}});
  }
  j["epochs"] = std::move(epochs);
  j["wall_clock_s"] = r.wall_clock_s;
  return j;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepGrid {
  // +inf means privacy off.
  std::vector<double> target_eps{1.0, 2.0, 10.0, 100.0, 1000.0};
  std::vector<double> clip_norms{1.0, 0.8, 0.6, 0.4};
  std::vector<std::size_t> freeze_prefixes{0};
  std::size_t seeds = 1;

  void Validate() const {
    Require(!target_eps.empty() && !clip_norms.empty() &&
                !freeze_prefixes.empty() && seeds >= 1,
            ErrorCode::kInvalidArgument, "sweep grid axes must be non-empty");
    for (double e : target_eps) {
      Require(e > 0.0, ErrorCode::kInvalidArgument,
              "sweep target eps must be positive");
    }
  }
};

struct SweepCell {
  double target_eps;
  double clip_norm;
  std::size_t freeze_prefix;
};

inline std::string SweepCellId(const SweepCell& cell) {
  using internal::FormatDouble;
  return "eps" + FormatDouble(cell.target_eps) + "_clip" +
         FormatDouble(cell.clip_norm) + "_freeze" +
         std::to_string(cell.freeze_prefix);
}

// The config for one (cell, seed) run: seed offset k shifts all four seed
// streams of `base` by k.
inline RunConfig SweepRunConfig(const RunConfig& base, const SweepCell& cell,
                                std::size_t seed) {
  RunConfig c = base;
  if (std::isinf(cell.target_eps)) {
    c.privacy = PrivacyMode::kOff;
  } else {
    c.privacy = PrivacyMode::kTargetEpsilon;
    c.target_eps = cell.target_eps;
    c.budget_eps.reset();
  }
  c.clip_norm = cell.clip_norm;
  c.freeze_prefix = cell.freeze_prefix;
  c.seeds = base.seeds.Offset(seed);
  c.run_id = SweepCellId(cell) + "_seed" + std::to_string(seed);
  return c;
}

namespace internal {

inline double Median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline ReportRow ErrorRow(const RunConfig& c, const std::string& seed,
                          const std::string& message) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ReportRow row;
  row.run_id = c.run_id;
  row.seed = seed;
  row.target_eps = TargetEpsOf(c);
  row.sigma = nan;
  row.achieved_eps = nan;
  row.delta = c.delta;
  row.clip_norm = c.clip_norm;
  row.freeze_prefix = c.freeze_prefix;
  row.epochs_run = 0.0;
  row.stop_reason = "error: " + message;
  row.train_loss_final = nan;
  row.valid_acc = nan;
  row.test_acc = nan;
  row.wall_clock_s = nan;
  return row;
}

inline ReportRow MedianRow(const std::string& cell_id,
                           const std::vector<ReportRow>& runs) {
  std::vector<const ReportRow*> ok;
  for (const ReportRow& r : runs) {
    if (!r.is_error()) ok.push_back(&r);
  }
  auto med = [&](double ReportRow::*field) {
    std::vector<double> v;
    for (const ReportRow* r : ok) v.push_back(r->*field);
    return Median(std::move(v));
  };
  ReportRow row = runs.front();
  row.run_id = cell_id + "_median";
  row.seed = "median";
  row.sigma = med(&ReportRow::sigma);
  row.achieved_eps = med(&ReportRow::achieved_eps);
  row.epochs_run = med(&ReportRow::epochs_run);
  row.stop_reason = ok.empty() ? "error: every seed failed"
                               : "median of " + std::to_string(ok.size());
  row.train_loss_final = med(&ReportRow::train_loss_final);
  row.valid_acc = med(&ReportRow::valid_acc);
  row.test_acc = med(&ReportRow::test_acc);
  row.wall_clock_s = med(&ReportRow::wall_clock_s);
  return row;
}

}  // namespace internal

// Runs every (eps, R, freeze, seed) combination. Rows come out in grid order
// (eps outermost, seeds innermost) followed by each cell's median row,
// independent of `jobs`. A failing run becomes an error row.
inline std::vector<ReportRow> Sweep(const SweepGrid& grid, const RunConfig& base,
                                    std::size_t jobs = 1) {
  grid.Validate();
  std::vector<SweepCell> cells;
  for (double e : grid.target_eps) {
    for (double r : grid.clip_norms) {
      for (std::size_t f : grid.freeze_prefixes) cells.push_back({e, r, f});
    }
  }
  const std::size_t total = cells.size() * grid.seeds;
  std::vector<ReportRow> runs(total);
  auto run_one = [&](std::size_t idx) {
    const SweepCell& cell = cells[idx / grid.seeds];
    const std::size_t seed = idx % grid.seeds;
    const RunConfig c = SweepRunConfig(base, cell, seed);
    try {
      runs[idx] = MakeReportRow(Train(c), std::to_string(seed));
    } catch (const std::exception& e) {
      runs[idx] = internal::ErrorRow(c, std::to_string(seed), e.what());
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, total);
  if (jobs == 1) {
    for (std::size_t i = 0; i < total; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < total;) run_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<ReportRow> out;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto first = runs.begin() + static_cast<std::ptrdiff_t>(c * grid.seeds);
    std::vector<ReportRow> cell_runs(first, first + static_cast<std::ptrdiff_t>(grid.seeds));
    out.insert(out.end(), cell_runs.begin(), cell_runs.end());
    out.push_back(internal::MedianRow(SweepCellId(cells[c]), cell_runs));
  }
  return out;
}

}  // namespace dpadam
