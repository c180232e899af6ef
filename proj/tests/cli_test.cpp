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


#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dpadam/accountant.hpp"
#include "dpadam/cli.hpp"
#include "dpadam/dataset.hpp"
#include "dpadam/harness.hpp"

namespace dpadam {
namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = RunCli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           (std::string("dpadam_cli_") +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string Write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return (dir_ / name).string();
  }

  std::filesystem::path dir_;
};

constexpr const char* kSmallConfig =
    "synthetic_n = 300\nsynthetic_dim = 4\nhidden = 6\nepochs = 2\n"
    "batch_size = 16\ntarget_eps = 3\n";

TEST_F(CliTest, AccountantForward) {
  const CliResult r = Cli({"accountant", "--sigma", "1", "--q", "1", "--steps", "1"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["epsilon"].get<double>(), 5.3026, 5e-4);
}

TEST_F(CliTest, AccountantInverseRoundTrips) {
  const CliResult r = Cli({"accountant", "--target-eps", "10", "--q", "0.01",
                           "--steps", "3000", "--delta", "1e-5"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  const double sigma = j["sigma"].get<double>();
  const double eps = EpsilonFor(sigma, 0.01, 3000, 1e-5).epsilon;
  EXPECT_LE(eps, 10.0);
  EXPECT_GE(eps, 10.0 * (1 - 0.02));
}

TEST_F(CliTest, AccountantQueryFile) {
  const std::string q = Write("q.json", R"({"sigma": 1.0, "q": 1.0, "steps": 1})");
  const CliResult r = Cli({"accountant", "--query", q});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NEAR(nlohmann::json::parse(r.out)["epsilon"].get<double>(), 5.3026, 5e-4);
  EXPECT_EQ(Cli({"accountant", "--query", Write("bad.json", "{")}).code, kExitUsage);
  EXPECT_EQ(Cli({"accountant", "--query", q, "--sigma", "2"}).code, kExitUsage);
}

TEST_F(CliTest, AccountantUsageErrors) {
  EXPECT_EQ(Cli({"accountant", "--q", "0.1", "--steps", "5"}).code, kExitUsage);
  EXPECT_EQ(Cli({"accountant", "--sigma", "1", "--steps", "5"}).code, kExitUsage);
  EXPECT_EQ(Cli({"accountant", "--sigma", "x", "--q", "1", "--steps", "1"}).code,
            kExitUsage);
  EXPECT_EQ(Cli({"accountant", "--sigma", "1", "--q", "2", "--steps", "1"}).code,
            kExitRuntime);
}

TEST_F(CliTest, UnknownSubcommandAndHelp) {
  const CliResult bad = Cli({"fly"});
  EXPECT_EQ(bad.code, kExitUsage);
  EXPECT_NE(bad.err.find("train"), std::string::npos);
  EXPECT_EQ(Cli({}).code, kExitUsage);
  const CliResult help = Cli({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  EXPECT_NE(help.out.find("accountant"), std::string::npos);
}

TEST_F(CliTest, MissingOrInvalidConfigWritesNothing) {
  const auto out = dir_ / "out";
  CliResult r = Cli({"train", (dir_ / "nope.cfg").string(), "--out", out.string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("nope.cfg"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(out));
  const std::string bad = Write("bad.cfg", "epochs = 2\nwhat = 1\n");
  r = Cli({"sweep", bad, "--out", out.string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("config line 2"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(out));
}

TEST_F(CliTest, TrainWritesReportAndSummary) {
  const std::string cfg = Write("run.cfg", kSmallConfig);
  const auto out = dir_ / "out";
  const CliResult r = Cli({"train", cfg, "--out", out.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream csv(out / "report.csv");
  std::stringstream text;
  text << csv.rdbuf();
  const auto rows = ParseReportCsv(text.str());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_LE(rows[0].achieved_eps, 3.0);
  std::ifstream js(out / "summary.json");
  const auto summary = nlohmann::json::parse(js);
  EXPECT_EQ(summary["privacy"]["epsilon"].get<double>(), rows[0].achieved_eps);

  const CliResult printed = Cli({"train", cfg});
  ASSERT_EQ(printed.code, kExitOk);
  const auto j = nlohmann::json::parse(printed.out);
  EXPECT_EQ(j["accuracy"]["valid_acc"], summary["accuracy"]["valid_acc"]);
}

TEST_F(CliTest, RuntimeFailureExitsTwo) {
  const std::string cfg = Write("run.cfg", "data = missing.csv\n");
  const CliResult r = Cli({"train", cfg});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_NE(r.err.find("missing.csv"), std::string::npos);
}

TEST_F(CliTest, SweepWritesCsv) {
  const std::string cfg = Write(
      "sweep.cfg", std::string(kSmallConfig) +
                       "sweep_eps = 3, inf\nsweep_clip = 1\nsweep_seeds = 2\n");
  const CliResult r = Cli({"sweep", cfg, "--jobs", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto rows = ParseReportCsv(r.out);
  EXPECT_EQ(rows.size(), 6u);
  const auto out = dir_ / "s";
  ASSERT_EQ(Cli({"sweep", cfg, "--out", out.string()}).code, kExitOk);
  std::ifstream js(out / "summary.json");
  const auto summary = nlohmann::json::parse(js);
  EXPECT_EQ(summary["cells"].size(), 2u);
  EXPECT_TRUE(summary["cells"][1]["target_eps"].is_null());
  EXPECT_EQ(Cli({"sweep", cfg, "--jobs", "0"}).code, kExitUsage);
}

TEST_F(CliTest, GenDataThenTrainOnIt) {
  const auto csv = dir_ / "d.csv";
  ASSERT_EQ(Cli({"gen-data", "n=200,dim=3,separation=4,seed=7", "--out", csv.string()}).code,
            kExitOk);
  const Dataset d = LoadCsvDataset(csv.string());
  EXPECT_EQ(d.size(), 200u);
  EXPECT_EQ(d.dim(), 3u);
  const CliResult printed = Cli({"gen-data", "n=4,dim=2"});
  ASSERT_EQ(printed.code, kExitOk);
  EXPECT_EQ(printed.out.substr(0, printed.out.find('\n')), "label,f0,f1");
  EXPECT_EQ(Cli({"gen-data", "n=4,colour=2"}).code, kExitUsage);
  EXPECT_EQ(Cli({"gen-data", "n=1.5"}).code, kExitUsage);

  const std::string cfg =
      Write("run.cfg", "data = d.csv\nhidden = 4\nepochs = 1\nprivacy = off\n");
  EXPECT_EQ(Cli({"train", cfg}).code, kExitOk);
}

}  // namespace
}  // namespace dpadam
