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

// Command-line surface. RunCli is the whole program minus process plumbing
// so that tests can drive it in-process.
//
//   dpadam train <config> [--out DIR]
//   dpadam sweep <config> [--out DIR] [--jobs N]
//   dpadam accountant (--sigma S | --target-eps E) --q Q --steps T [--delta D]
//   dpadam accountant --query FILE.json
//   dpadam gen-data <n=..,dim=..,separation=..,label_noise=..,seed=..> [--out FILE]
//
// Exit codes: 0 success, 1 usage error (bad flags, unreadable or invalid
// config), 2 runtime failure.

#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpadam/accountant.hpp"
#include "dpadam/config.hpp"
#include "dpadam/dataset.hpp"
#include "dpadam/error.hpp"
#include "dpadam/harness.hpp"

namespace dpadam {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace internal {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void WriteTextFile(const std::filesystem::path& path,
                          const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  Require(static_cast<bool>(out), ErrorCode::kIo,
          "cannot write " + path.string());
  out << text;
  Require(static_cast<bool>(out), ErrorCode::kIo,
          "failed writing " + path.string());
}

inline ConfigFile LoadConfigForCli(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw UsageError("config file not found: " + path);
  }
  try {
    return LoadConfig(path);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

// "n=2000,dim=20,separation=3,label_noise=0,seed=0"; omitted keys keep their
// defaults.
inline SyntheticSpec ParseSyntheticSpec(const std::string& text) {
  SyntheticSpec spec;
  if (Trim(text).empty()) return spec;
  for (std::string_view item : SplitCommas(text)) {
    item = Trim(item);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("gen-data: expected key=value, got '" +
                       std::string(item) + "'");
    }
    const std::string key(Trim(item.substr(0, eq)));
    const std::string_view value = Trim(item.substr(eq + 1));
    double v = 0.0;
    if (!ParseDouble(value, v)) {
      throw UsageError("gen-data: bad value for " + key);
    }
    const bool integral = v >= 0.0 && std::floor(v) == v;
    if (key == "n" || key == "dim" || key == "seed") {
      if (!integral) throw UsageError("gen-data: " + key + " must be an integer");
      const auto u = static_cast<std::uint64_t>(v);
      if (key == "n") spec.n = u;
      if (key == "dim") spec.dim = u;
      if (key == "seed") spec.seed = u;
    } else if (key == "separation") {
      spec.separation = v;
    } else if (key == "label_noise") {
      spec.label_noise = v;
    } else {
      throw UsageError("gen-data: unknown key '" + key + "'");
    }
  }
  return spec;
}

inline nlohmann::json SweepSummaryJson(const ConfigFile& cfg,
                                       const std::vector<ReportRow>& rows) {
  nlohmann::json j;
  j["config"] = RunConfigToJson(cfg.run);
  nlohmann::json eps = nlohmann::json::array();
  for (double e : cfg.sweep.target_eps) eps.push_back(FiniteOrNull(e));
  j["grid"] = {{"target_eps", eps},
               {"clip_norms", cfg.sweep.clip_norms},
               {"freeze_prefixes", cfg.sweep.freeze_prefixes},
               {"seeds", cfg.sweep.seeds}};
  nlohmann::json medians = nlohmann::json::array();
  std::size_t errors = 0;
  for (const ReportRow& r : rows) {
    if (r.seed != "median") {
      errors += r.is_error() ? 1 : 0;
      continue;
    }
    medians.push_back({{"run_id", r.run_id},
                       {"target_eps", FiniteOrNull(r.target_eps)},
                       {"clip_norm", r.clip_norm},
                       {"freeze_prefix", r.freeze_prefix},
                       {"sigma", FiniteOrNull(r.sigma)},
                       {"achieved_eps", FiniteOrNull(r.achieved_eps)},
                       {"valid_acc", FiniteOrNull(r.valid_acc)},
                       {"test_acc", FiniteOrNull(r.test_acc)}});
  }
  j["cells"] = std::move(medians);
  j["failed_runs"] = errors;
  return j;
}

}  // namespace internal

inline int RunCli(const std::vector<std::string>& args, std::ostream& out,
                  std::ostream& err) {
  CLI::App app{"Differentially private Adam training and privacy accounting",
               "dpadam"};
  app.require_subcommand(1);

  std::string config_path, out_path, gen_spec, query_path;
  std::size_t jobs = 0;
  std::optional<double> sigma, target_eps;
  double q = 0.0, delta = kDefaultDelta;
  std::int64_t steps = 0;

  CLI::App* train = app.add_subcommand("train", "Train one model from a config file");
  train->add_option("config", config_path, "Config file")->required();
  train->add_option("--out", out_path, "Output directory for report.csv and summary.json");

  CLI::App* sweep = app.add_subcommand("sweep", "Run the config's sweep grid");
  sweep->add_option("config", config_path, "Config file")->required();
  sweep->add_option("--out", out_path, "Output directory for sweep.csv and summary.json");
  sweep->add_option("--jobs", jobs, "Parallel runs (overrides the config)")
      ->check(CLI::PositiveNumber);

  CLI::App* acc = app.add_subcommand("accountant", "Epsilon for a mechanism, or sigma for a target");
  CLI::Option* sigma_opt = acc->add_option("--sigma", sigma, "Noise multiplier");
  CLI::Option* target_opt = acc->add_option("--target-eps", target_eps, "Target epsilon (calibrates sigma)");
  CLI::Option* q_opt = acc->add_option("--q", q, "Sampling probability");
  CLI::Option* steps_opt = acc->add_option("--steps", steps, "Number of steps");
  acc->add_option("--delta", delta, "Failure probability")->capture_default_str();
  CLI::Option* query_opt = acc->add_option("--query", query_path, "JSON query document");
  sigma_opt->excludes(target_opt);
  query_opt->excludes(sigma_opt)->excludes(target_opt)->excludes(q_opt)->excludes(steps_opt);

  CLI::App* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  gen->add_option("spec", gen_spec, "n=..,dim=..,separation=..,label_noise=..,seed=..")
      ->required();
  gen->add_option("--out", out_path, "Output CSV (default: stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train) {
      const ConfigFile cfg = internal::LoadConfigForCli(config_path);
      const TrainReport report = Train(cfg.run);
      const nlohmann::json summary = TrainReportToJson(report);
      if (out_path.empty()) {
        out << summary.dump(2) << '\n';
      } else {
        std::filesystem::create_directories(out_path);
        const std::filesystem::path dir(out_path);
        internal::WriteTextFile(dir / "report.csv",
                                ReportCsv({MakeReportRow(report, "0")}));
        internal::WriteTextFile(dir / "summary.json", summary.dump(2) + "\n");
        out << "wrote " << (dir / "report.csv").string() << " and "
            << (dir / "summary.json").string() << '\n';
      }
    } else if (*sweep) {
      const ConfigFile cfg = internal::LoadConfigForCli(config_path);
      const std::vector<ReportRow> rows =
          Sweep(cfg.sweep, cfg.run, jobs > 0 ? jobs : cfg.jobs);
      const std::string csv = ReportCsv(rows);
      if (out_path.empty()) {
        out << csv;
      } else {
        std::filesystem::create_directories(out_path);
        const std::filesystem::path dir(out_path);
        internal::WriteTextFile(dir / "sweep.csv", csv);
        internal::WriteTextFile(
            dir / "summary.json",
            internal::SweepSummaryJson(cfg, rows).dump(2) + "\n");
        out << "wrote " << (dir / "sweep.csv").string() << " and "
            << (dir / "summary.json").string() << '\n';
      }
    } else if (*acc) {
      nlohmann::json result;
      if (!query_path.empty()) {
        std::ifstream in(query_path);
        if (!in) throw internal::UsageError("cannot open query " + query_path);
        nlohmann::json query;
        try {
          query = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw internal::UsageError(std::string("bad query JSON: ") + e.what());
        }
        result = AccountantQueryFromJson(query);
      } else {
        if (!sigma && !target_eps) {
          throw internal::UsageError("accountant: need --sigma or --target-eps");
        }
        if (q_opt->count() == 0 || steps_opt->count() == 0) {
          throw internal::UsageError("accountant: --q and --steps are required");
        }
        result = sigma ? AccountantQuery(*sigma, q, steps, delta)
                       : InverseAccountantQuery(*target_eps, q, steps, delta);
      }
      out << result.dump(2) << '\n';
    } else if (*gen) {
      const Dataset data = SyntheticDataset(internal::ParseSyntheticSpec(gen_spec));
      if (out_path.empty()) {
        WriteCsvDataset(out, data);
      } else {
        WriteCsvDataset(out_path, data);
      }
    }
  } catch (const internal::UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace dpadam
