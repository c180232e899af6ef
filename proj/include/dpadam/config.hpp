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

// Flat `key = value` run configuration. `#` starts a comment; blank lines are
// ignored; keys may appear once; unknown keys are errors. List values are
// comma separated. Relative data paths resolve against the config file's
// directory.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dpadam/dataset.hpp"
#include "dpadam/error.hpp"
#include "dpadam/harness.hpp"

namespace dpadam {

struct ConfigFile {
  RunConfig run;
  SweepGrid sweep;
  std::size_t jobs = 1;
};

namespace internal {

struct ConfigEntry {
  std::string value;
  std::size_t line = 0;
};

inline std::string ConfigWhere(std::size_t line) {
  return "config line " + std::to_string(line) + ": ";
}

inline double ConfigDouble(const ConfigEntry& e) {
  const std::string_view v = Trim(e.value);
  if (v == "inf") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  Require(ParseDouble(v, out) && std::isfinite(out), ErrorCode::kParse,
          ConfigWhere(e.line) + "expected a number, got '" + e.value + "'");
  return out;
}

inline std::uint64_t ConfigUnsigned(const ConfigEntry& e) {
  const std::string_view v = Trim(e.value);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  Require(ec == std::errc() && ptr == v.data() + v.size() && !v.empty(),
          ErrorCode::kParse,
          ConfigWhere(e.line) + "expected a non-negative integer, got '" +
              e.value + "'");
  return out;
}

inline bool ConfigBool(const ConfigEntry& e) {
  if (e.value == "true") return true;
  if (e.value == "false") return false;
  Fail(ErrorCode::kParse,
       ConfigWhere(e.line) + "expected true or false, got '" + e.value + "'");
}

template <typename T, typename F>
std::vector<T> ConfigList(const ConfigEntry& e, F parse_one) {
  std::vector<T> out;
  if (Trim(e.value).empty()) return out;
  for (std::string_view item : SplitCommas(e.value)) {
    out.push_back(parse_one(ConfigEntry{std::string(Trim(item)), e.line}));
  }
  return out;
}

}  // namespace internal

// Parses config text. `base_dir` anchors relative data paths.
inline ConfigFile ParseConfig(const std::string& text,
                              const std::filesystem::path& base_dir = {}) {
  using internal::ConfigEntry;
  std::map<std::string, ConfigEntry> entries;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = internal::Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    Require(eq != std::string_view::npos, ErrorCode::kParse,
            internal::ConfigWhere(line_no) + "expected key = value");
    const std::string key(internal::Trim(line.substr(0, eq)));
    Require(!key.empty(), ErrorCode::kParse,
            internal::ConfigWhere(line_no) + "empty key");
    const auto [it, inserted] = entries.emplace(
        key, ConfigEntry{std::string(internal::Trim(line.substr(eq + 1))), line_no});
    Require(inserted, ErrorCode::kParse,
            internal::ConfigWhere(line_no) + "duplicate key '" + key + "'");
  }

  ConfigFile cfg;
  RunConfig& r = cfg.run;
  auto path_of = [&](const std::string& v) {
    const std::filesystem::path p(v);
    return (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
  };
  auto size = [](const ConfigEntry& e) {
    return static_cast<std::size_t>(internal::ConfigUnsigned(e));
  };
  using Setter = std::function<void(const ConfigEntry&)>;
  const std::map<std::string, Setter> setters{
      {"run_id", [&](const ConfigEntry& e) { r.run_id = e.value; }},
      {"data",
       [&](const ConfigEntry& e) {
         r.data_path = e.value == "synthetic" ? "" : path_of(e.value);
       }},
      {"test_data", [&](const ConfigEntry& e) { r.test_path = path_of(e.value); }},
      {"synthetic_n", [&](const ConfigEntry& e) { r.synthetic.n = size(e); }},
      {"synthetic_dim", [&](const ConfigEntry& e) { r.synthetic.dim = size(e); }},
      {"synthetic_separation",
       [&](const ConfigEntry& e) { r.synthetic.separation = internal::ConfigDouble(e); }},
      {"synthetic_label_noise",
       [&](const ConfigEntry& e) { r.synthetic.label_noise = internal::ConfigDouble(e); }},
      {"synthetic_seed",
       [&](const ConfigEntry& e) { r.synthetic.seed = internal::ConfigUnsigned(e); }},
      {"valid_fraction",
       [&](const ConfigEntry& e) { r.valid_fraction = internal::ConfigDouble(e); }},
      {"test_fraction",
       [&](const ConfigEntry& e) { r.test_fraction = internal::ConfigDouble(e); }},
      {"hidden",
       [&](const ConfigEntry& e) { r.hidden = internal::ConfigList<std::size_t>(e, size); }},
      {"norm", [&](const ConfigEntry& e) { r.norm = NormSpec::Parse(e.value); }},
      {"freeze_prefix", [&](const ConfigEntry& e) { r.freeze_prefix = size(e); }},
      {"lr", [&](const ConfigEntry& e) { r.adam.lr = internal::ConfigDouble(e); }},
      {"beta1", [&](const ConfigEntry& e) { r.adam.beta1 = internal::ConfigDouble(e); }},
      {"beta2", [&](const ConfigEntry& e) { r.adam.beta2 = internal::ConfigDouble(e); }},
      {"adam_stabilizer",
       [&](const ConfigEntry& e) { r.adam.stabilizer = internal::ConfigDouble(e); }},
      {"adam_variant",
       [&](const ConfigEntry& e) { r.adam.variant = ParseAdamVariant(e.value); }},
      {"bias_correction",
       [&](const ConfigEntry& e) { r.adam.bias_correction = internal::ConfigBool(e); }},
      {"epochs", [&](const ConfigEntry& e) { r.epochs = size(e); }},
      {"batch_size", [&](const ConfigEntry& e) { r.batch_size = size(e); }},
      {"clip_norm", [&](const ConfigEntry& e) { r.clip_norm = internal::ConfigDouble(e); }},
      {"privacy", [&](const ConfigEntry& e) { r.privacy = ParsePrivacyMode(e.value); }},
      {"target_eps", [&](const ConfigEntry& e) { r.target_eps = internal::ConfigDouble(e); }},
      {"sigma", [&](const ConfigEntry& e) { r.sigma = internal::ConfigDouble(e); }},
      {"delta", [&](const ConfigEntry& e) { r.delta = internal::ConfigDouble(e); }},
      {"budget_eps", [&](const ConfigEntry& e) { r.budget_eps = internal::ConfigDouble(e); }},
      {"noise_mode", [&](const ConfigEntry& e) { r.noise_mode = ParseNoiseMode(e.value); }},
      {"seed",
       [&](const ConfigEntry& e) {
         const std::uint64_t s = internal::ConfigUnsigned(e);
         r.seeds = {s, s + 1, s + 2, s + 3};
       }},
      {"seed_model", [&](const ConfigEntry& e) { r.seeds.model = internal::ConfigUnsigned(e); }},
      {"seed_shuffle",
       [&](const ConfigEntry& e) { r.seeds.shuffle = internal::ConfigUnsigned(e); }},
      {"seed_poisson",
       [&](const ConfigEntry& e) { r.seeds.poisson = internal::ConfigUnsigned(e); }},
      {"seed_noise", [&](const ConfigEntry& e) { r.seeds.noise = internal::ConfigUnsigned(e); }},
      {"sweep_eps",
       [&](const ConfigEntry& e) {
         cfg.sweep.target_eps = internal::ConfigList<double>(e, internal::ConfigDouble);
       }},
      {"sweep_clip",
       [&](const ConfigEntry& e) {
         cfg.sweep.clip_norms = internal::ConfigList<double>(e, internal::ConfigDouble);
       }},
      {"sweep_freeze",
       [&](const ConfigEntry& e) {
         cfg.sweep.freeze_prefixes = internal::ConfigList<std::size_t>(e, size);
       }},
      {"sweep_seeds", [&](const ConfigEntry& e) { cfg.sweep.seeds = size(e); }},
      {"jobs", [&](const ConfigEntry& e) { cfg.jobs = size(e); }},
  };

  // Specific seed_* keys override the `seed` shorthand regardless of order.
  if (auto it = entries.find("seed"); it != entries.end()) {
    setters.at("seed")(it->second);
  }
  for (const auto& [key, entry] : entries) {
    const auto setter = setters.find(key);
    Require(setter != setters.end(), ErrorCode::kParse,
            internal::ConfigWhere(entry.line) + "unknown key '" + key + "'");
    if (key == "seed") continue;
    try {
      setter->second(entry);
    } catch (const Error& err) {
      const std::string msg = err.what();
      if (msg.find("config line") != std::string::npos) throw;
      Fail(err.code(), internal::ConfigWhere(entry.line) + msg);
    }
  }
  r.Validate();
  cfg.sweep.Validate();
  Require(cfg.jobs >= 1, ErrorCode::kInvalidArgument, "jobs must be >= 1");
  return cfg;
}

inline ConfigFile LoadConfig(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return ParseConfig(text.str(), std::filesystem::path(path).parent_path());
}

}  // namespace dpadam
