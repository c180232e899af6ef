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

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "dpadam/error.hpp"
#include "dpadam/random.hpp"
#include "dpadam/tensor.hpp"

namespace dpadam {

// Binary-labelled samples: features [n, dim] and one 0/1 label per row.
struct Dataset {
  Tensor features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.dim(1); }

  std::span<const double> Row(std::size_t i) const {
    return features.data().subspan(i * dim(), dim());
  }

  Dataset Subset(std::span<const std::size_t> indices) const {
    Require(!indices.empty(), ErrorCode::kInvalidArgument, "empty subset");
    std::vector<double> x;
    std::vector<int> y;
    x.reserve(indices.size() * dim());
    y.reserve(indices.size());
    for (std::size_t i : indices) {
      Require(i < size(), ErrorCode::kInvalidArgument, "subset index out of range");
      auto row = Row(i);
      x.insert(x.end(), row.begin(), row.end());
      y.push_back(labels[i]);
    }
    return {Tensor(Shape{indices.size(), dim()}, std::move(x)), std::move(y)};
  }
};

// Per-column standardization to mean 0 and (population) std 1. Constant
// columns become all-zero.
inline void Standardize(Dataset& data) {
  const std::size_t n = data.size(), d = data.dim();
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += data.features.at(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double diff = data.features.at(r, c) - mean;
      var += diff * diff;
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t r = 0; r < n; ++r) {
      double& v = data.features.at(r, c);
      v = sd > 0.0 ? (v - mean) / sd : 0.0;
    }
  }
}

namespace internal {

inline std::vector<std::string_view> SplitCommas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline bool ParseDouble(std::string_view text, double& out) {
  text = Trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && !text.empty();
}

inline std::string FormatDouble(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace internal

// Reads `label,f0,...,f{d-1}` CSV and standardizes the feature columns.
inline Dataset LoadCsvDataset(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return path + ":" + std::to_string(line_no) + ": "; };

  std::size_t dim = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (internal::Trim(line).empty()) continue;
    const auto cols = internal::SplitCommas(line);
    Require(cols.size() >= 2 && internal::Trim(cols[0]) == "label",
            ErrorCode::kParse, where() + "header must be label,f0,...");
    for (std::size_t c = 1; c < cols.size(); ++c) {
      Require(internal::Trim(cols[c]) == "f" + std::to_string(c - 1),
              ErrorCode::kParse,
              where() + "header column " + std::to_string(c) + " must be f" +
                  std::to_string(c - 1));
    }
    dim = cols.size() - 1;
    have_header = true;
    break;
  }
  Require(have_header, ErrorCode::kParse, path + ": empty file");

  std::vector<double> x;
  std::vector<int> y;
  while (std::getline(in, line)) {
    ++line_no;
    if (internal::Trim(line).empty()) continue;
    const auto cols = internal::SplitCommas(line);
    Require(cols.size() == dim + 1, ErrorCode::kParse,
            where() + "expected " + std::to_string(dim + 1) + " fields, got " +
                std::to_string(cols.size()));
    const std::string_view label = internal::Trim(cols[0]);
    Require(label == "0" || label == "1", ErrorCode::kParse,
            where() + "label must be 0 or 1");
    y.push_back(label == "1" ? 1 : 0);
    for (std::size_t c = 1; c <= dim; ++c) {
      double v = 0.0;
      Require(internal::ParseDouble(cols[c], v) && std::isfinite(v),
              ErrorCode::kParse,
              where() + "field " + std::to_string(c) + " is not a finite number");
      x.push_back(v);
    }
  }
  Require(!y.empty(), ErrorCode::kParse, path + ": no data rows");
  Dataset data{Tensor(Shape{y.size(), dim}, std::move(x)), std::move(y)};
  Standardize(data);
  return data;
}

inline void WriteCsvDataset(std::ostream& out, const Dataset& data) {
  out << "label";
  for (std::size_t c = 0; c < data.dim(); ++c) out << ",f" << c;
  out << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    out << data.labels[r];
    for (double v : data.Row(r)) out << ',' << internal::FormatDouble(v);
    out << '\n';
  }
}

inline void WriteCsvDataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path);
  WriteCsvDataset(out, data);
}

struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t dim = 20;
  double separation = 3.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;
};

// Two unit-covariance Gaussian blobs centred at -/+ (separation / 2) e_1 with
// alternating (balanced) labels; round(label_noise * n) labels, chosen
// uniformly, are then flipped. Features are not standardized.
inline Dataset SyntheticDataset(const SyntheticSpec& spec) {
  Require(spec.n >= 2, ErrorCode::kInvalidArgument, "synthetic: n must be >= 2");
  Require(spec.dim >= 1, ErrorCode::kInvalidArgument,
          "synthetic: dim must be >= 1");
  Require(spec.separation >= 0.0 && std::isfinite(spec.separation),
          ErrorCode::kInvalidArgument, "synthetic: separation must be >= 0");
  Require(spec.label_noise >= 0.0 && spec.label_noise < 0.5,
          ErrorCode::kInvalidArgument,
          "synthetic: label_noise must be in [0, 0.5)");
  Rng rng(spec.seed);
  Dataset data{Tensor(Shape{spec.n, spec.dim}), std::vector<int>(spec.n)};
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int label = static_cast<int>(i % 2);
    data.labels[i] = label;
    for (std::size_t c = 0; c < spec.dim; ++c) {
      data.features.at(i, c) = rng.Normal();
    }
    data.features.at(i, 0) += (label == 1 ? 0.5 : -0.5) * spec.separation;
  }
  const auto flips = static_cast<std::size_t>(
      std::llround(spec.label_noise * static_cast<double>(spec.n)));
  if (flips > 0) {
    std::vector<std::size_t> order(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) order[i] = i;
    Shuffle(order, rng);
    for (std::size_t k = 0; k < flips; ++k) {
      data.labels[order[k]] = 1 - data.labels[order[k]];
    }
  }
  return data;
}

struct DataSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

namespace internal {

inline std::size_t FractionCount(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace internal

// Shuffles `data` with `rng`, holds out round(test_fraction * n) rows as the
// test set (skipped when `test` is supplied), then splits the rest into
// train / validation with round(valid_fraction * rest) validation rows.
inline DataSplits SplitDataset(const Dataset& data, double valid_fraction,
                               double test_fraction, Rng& rng,
                               const Dataset* test = nullptr) {
  Require(valid_fraction > 0.0 && valid_fraction < 1.0,
          ErrorCode::kInvalidArgument, "valid_fraction must be in (0, 1)");
  Require(test_fraction > 0.0 && test_fraction < 1.0,
          ErrorCode::kInvalidArgument, "test_fraction must be in (0, 1)");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Shuffle(order, rng);

  std::span<const std::size_t> rest(order);
  DataSplits out;
  if (test != nullptr) {
    Require(test->dim() == data.dim(), ErrorCode::kShapeMismatch,
            "test set has " + std::to_string(test->dim()) +
                " features, training data has " + std::to_string(data.dim()));
    out.test = *test;
  } else {
    const std::size_t n_test = internal::FractionCount(test_fraction, data.size());
    Require(n_test > 0 && n_test < data.size(), ErrorCode::kInvalidArgument,
            "dataset too small for a test split");
    out.test = data.Subset(rest.first(n_test));
    rest = rest.subspan(n_test);
  }
  const std::size_t n_valid = internal::FractionCount(valid_fraction, rest.size());
  Require(n_valid > 0 && n_valid < rest.size(), ErrorCode::kInvalidArgument,
          "dataset too small for a validation split");
  out.valid = data.Subset(rest.first(n_valid));
  out.train = data.Subset(rest.subspan(n_valid));
  return out;
}

}  // namespace dpadam
