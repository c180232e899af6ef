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

// Small feedforward binary classifiers: dense layers, ReLU, and optional
// per-sample group normalization, ending in a single logit.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpadam/autodiff.hpp"
#include "dpadam/error.hpp"
#include "dpadam/random.hpp"
#include "dpadam/tensor.hpp"

namespace dpadam {

inline constexpr double kGroupNormEps = 1e-5;

struct NormSpec {
  enum class Kind { kNone, kGroup, kBatchCoupled };

  Kind kind = Kind::kNone;
  std::size_t groups = 0;

  static NormSpec None() { return {}; }
  static NormSpec Group(std::size_t groups) { return {Kind::kGroup, groups}; }
  // Normalizes each channel across the batch. Exists so that validation and
  // the optimizer's refusal path can be exercised; never privacy-compatible.
  static NormSpec BatchCoupled() { return {Kind::kBatchCoupled, 0}; }

  // "none", "group:<n>" or "batch".
  std::string ToString() const {
    switch (kind) {
      case Kind::kNone:
        return "none";
      case Kind::kGroup:
        return "group:" + std::to_string(groups);
      case Kind::kBatchCoupled:
        return "batch";
    }
    return "none";
  }

  static NormSpec Parse(const std::string& text) {
    if (text == "none") return None();
    if (text == "batch") return BatchCoupled();
    if (text.rfind("group:", 0) == 0) {
      const std::string count = text.substr(6);
      std::size_t used = 0;
      unsigned long n = 0;
      try {
        n = std::stoul(count, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == count.size() && used > 0 && n > 0) return Group(n);
    }
    Fail(ErrorCode::kParse, "norm must be none, group:<n> or batch, got '" +
                                text + "'");
  }

  friend bool operator==(const NormSpec&, const NormSpec&) = default;
};

enum class LayerKind { kDense, kRelu, kGroupNorm, kBatchNorm };

struct Layer {
  LayerKind kind;
  std::size_t in = 0;   // dense: fan-in; norm/relu: channels
  std::size_t out = 0;  // dense: fan-out; norm/relu: channels
  std::size_t groups = 0;
  std::size_t first_param = 0;  // index of this layer's first parameter tensor
  std::size_t block = 0;        // index of the dense layer this layer follows

  std::size_t param_count() const {
    return kind == LayerKind::kRelu ? 0 : 2;
  }

  bool couples_samples() const { return kind == LayerKind::kBatchNorm; }

  std::string Name(std::size_t index) const {
    std::string base;
    switch (kind) {
      case LayerKind::kDense:
        base = "dense(" + std::to_string(in) + "->" + std::to_string(out) + ")";
        break;
      case LayerKind::kRelu:
        base = "relu";
        break;
      case LayerKind::kGroupNorm:
        base = "group_norm(" + std::to_string(out) + ", groups=" +
               std::to_string(groups) + ")";
        break;
      case LayerKind::kBatchNorm:
        base = "batch_norm(" + std::to_string(out) + ")";
        break;
    }
    return "layer " + std::to_string(index) + " " + base;
  }
};

class Model {
 public:
  Model(std::vector<std::size_t> widths, NormSpec norm, std::uint64_t seed,
        std::vector<Layer> layers, std::vector<Tensor> params)
      : widths_(std::move(widths)),
        norm_(norm),
        seed_(seed),
        layers_(std::move(layers)),
        params_(std::move(params)) {}

  const std::vector<std::size_t>& widths() const { return widths_; }
  const NormSpec& norm() const { return norm_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t dense_layer_count() const { return widths_.size() - 1; }

  const std::vector<Tensor>& parameters() const { return params_; }
  std::vector<Tensor>& mutable_parameters() { return params_; }

  std::vector<Shape> ParameterShapes() const {
    std::vector<Shape> out;
    for (const Tensor& p : params_) out.push_back(p.shape());
    return out;
  }

  std::size_t ParameterCount() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
  }

  // The first `k` dense layers, and any normalization following them, are
  // frozen: the optimizers neither noise nor update them.
  std::size_t freeze_prefix() const { return freeze_prefix_; }
  void set_freeze_prefix(std::size_t k) {
    Require(k < dense_layer_count(), ErrorCode::kInvalidArgument,
            "freeze_prefix " + std::to_string(k) +
                " would freeze every dense layer (model has " +
                std::to_string(dense_layer_count()) + ")");
    freeze_prefix_ = k;
  }

  std::vector<bool> TrainableMask() const {
    std::vector<bool> mask(params_.size(), true);
    for (const Layer& layer : layers_) {
      if (layer.param_count() == 0 || layer.block >= freeze_prefix_) continue;
      for (std::size_t i = 0; i < layer.param_count(); ++i) {
        mask[layer.first_param + i] = false;
      }
    }
    return mask;
  }

  std::vector<Var> RegisterParameters(Tape& tape) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const Tensor& p : params_) vars.push_back(tape.Parameter(p));
    return vars;
  }

  // Logits of shape [batch, 1] for x of shape [batch, input_dim].
  Var Forward(Var x, std::span<const Var> params) const {
    Require(x.shape().size() == 2 && x.shape()[1] == input_dim(),
            ErrorCode::kShapeMismatch,
            "model input must be [batch, " + std::to_string(input_dim()) +
                "], got " + ShapeToString(x.shape()));
    Var h = x;
    for (const Layer& layer : layers_) {
      switch (layer.kind) {
        case LayerKind::kDense:
          h = Add(Matmul(h, params[layer.first_param]),
                  params[layer.first_param + 1]);
          break;
        case LayerKind::kRelu:
          h = Relu(h);
          break;
        case LayerKind::kGroupNorm:
          h = GroupNorm(h, params[layer.first_param],
                        params[layer.first_param + 1], layer.groups,
                        kGroupNormEps);
          break;
        case LayerKind::kBatchNorm:
          h = BatchNorm(h, params[layer.first_param],
                        params[layer.first_param + 1], kGroupNormEps);
          break;
      }
    }
    return h;
  }

  friend bool operator==(const Model& a, const Model& b) {
    return a.widths_ == b.widths_ && a.norm_ == b.norm_ &&
           a.seed_ == b.seed_ && a.freeze_prefix_ == b.freeze_prefix_ &&
           a.params_ == b.params_;
  }

 private:
  std::vector<std::size_t> widths_;
  NormSpec norm_;
  std::uint64_t seed_;
  std::vector<Layer> layers_;
  std::vector<Tensor> params_;
  std::size_t freeze_prefix_ = 0;
};

namespace internal {

inline std::vector<Layer> MlpLayout(std::span<const std::size_t> widths,
                                    NormSpec norm) {
  Require(widths.size() >= 2, ErrorCode::kInvalidArgument,
          "build_mlp: need at least 2 widths");
  Require(widths.back() == 1, ErrorCode::kInvalidArgument,
          "build_mlp: final width must be 1 (single logit)");
  for (std::size_t w : widths) {
    Require(w > 0, ErrorCode::kInvalidArgument,
            "build_mlp: widths must be positive");
  }
  std::vector<Layer> layers;
  std::size_t param = 0;
  const std::size_t dense_count = widths.size() - 1;
  for (std::size_t d = 0; d < dense_count; ++d) {
    layers.push_back({LayerKind::kDense, widths[d], widths[d + 1], 0, param, d});
    param += 2;
    if (d + 1 == dense_count) break;
    const std::size_t channels = widths[d + 1];
    if (norm.kind == NormSpec::Kind::kGroup) {
      Require(norm.groups > 0 && channels % norm.groups == 0,
              ErrorCode::kInvalidArgument,
              "build_mlp: num_groups " + std::to_string(norm.groups) +
                  " does not divide width " + std::to_string(channels));
      layers.push_back(
          {LayerKind::kGroupNorm, channels, channels, norm.groups, param, d});
      param += 2;
    } else if (norm.kind == NormSpec::Kind::kBatchCoupled) {
      layers.push_back({LayerKind::kBatchNorm, channels, channels, 0, param, d});
      param += 2;
    }
    layers.push_back({LayerKind::kRelu, channels, channels, 0, param, d});
  }
  return layers;
}

inline std::vector<Shape> LayoutShapes(const std::vector<Layer>& layers) {
  std::vector<Shape> shapes;
  for (const Layer& layer : layers) {
    if (layer.kind == LayerKind::kDense) {
      shapes.push_back({layer.in, layer.out});
      shapes.push_back({layer.out});
    } else if (layer.param_count() == 2) {
      shapes.push_back({layer.out});
      shapes.push_back({layer.out});
    }
  }
  return shapes;
}

}  // namespace internal

// Dense weights ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)), drawn layer
// by layer in row-major order from one stream seeded by `seed`; biases 0,
// normalization scale 1 and shift 0.
inline Model BuildMlp(std::vector<std::size_t> widths, NormSpec norm,
                      std::uint64_t seed) {
  std::vector<Layer> layers = internal::MlpLayout(widths, norm);
  Rng rng(seed);
  std::vector<Tensor> params;
  for (const Layer& layer : layers) {
    if (layer.kind == LayerKind::kDense) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
      Tensor w(Shape{layer.in, layer.out});
      for (double& v : w.data()) v = (2.0 * rng.Uniform() - 1.0) * limit;
      params.push_back(std::move(w));
      params.emplace_back(Shape{layer.out});
    } else if (layer.param_count() == 2) {
      params.push_back(Tensor::Filled(Shape{layer.out}, 1.0));
      params.emplace_back(Shape{layer.out});
    }
  }
  return Model(std::move(widths), norm, seed, std::move(layers),
               std::move(params));
}

struct LossAndGradient {
  double loss = 0.0;
  GradientSet gradient;
};

namespace internal {

inline Tensor LabelColumn(std::span<const int> labels) {
  std::vector<double> y;
  y.reserve(labels.size());
  for (int label : labels) {
    Require(label == 0 || label == 1, ErrorCode::kInvalidArgument,
            "labels must be 0 or 1, got " + std::to_string(label));
    y.push_back(static_cast<double>(label));
  }
  return Tensor(Shape{labels.size(), 1}, std::move(y));
}

// Per-element BCE losses [batch, 1] recorded on `tape`.
inline Var RecordLosses(const Model& model, Tape& tape,
                        std::span<const Var> params, const Tensor& x,
                        std::span<const int> labels) {
  Require(x.rank() == 2 && x.dim(0) == labels.size(),
          ErrorCode::kShapeMismatch,
          "batch of shape " + ShapeToString(x.shape()) + " has " +
              std::to_string(labels.size()) + " labels");
  Var logits = model.Forward(tape.Input(x), params);
  return BinaryCrossEntropy(Sigmoid(logits), tape.Input(LabelColumn(labels)));
}

}  // namespace internal

// Loss and exact parameter gradient of a single sample. `x` holds exactly
// input_dim features.
inline LossAndGradient PerSampleGradient(const Model& model,
                                         std::span<const double> x, int label) {
  Require(x.size() == model.input_dim(), ErrorCode::kShapeMismatch,
          "sample has " + std::to_string(x.size()) +
              " features, model expects " + std::to_string(model.input_dim()));
  Tape tape;
  std::vector<Var> params = model.RegisterParameters(tape);
  const Tensor input(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end()));
  const int labels[] = {label};
  Var loss = ReduceMean(internal::RecordLosses(model, tape, params, input, labels));
  return {loss.value().item(), Backward(tape, loss)};
}

// Per-sample losses and gradients for every row of `x`, computed on a single
// tape that holds the whole batch. For batch-independent models this agrees
// with PerSampleGradient row by row; with a batch-coupled layer it does not.
inline std::vector<LossAndGradient> PerSampleGradientsInBatch(
    const Model& model, const Tensor& x, std::span<const int> labels) {
  Tape tape;
  std::vector<Var> params = model.RegisterParameters(tape);
  Var losses = internal::RecordLosses(model, tape, params, x, labels);
  std::vector<LossAndGradient> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Tensor selector(Shape{labels.size(), 1});
    selector[i] = 1.0;
    Var loss_i = ReduceSum(Mul(losses, tape.Input(std::move(selector))));
    out.push_back({loss_i.value().item(), Backward(tape, loss_i)});
  }
  return out;
}

// Mean loss over the batch and its gradient.
inline LossAndGradient BatchLossAndGradient(const Model& model, const Tensor& x,
                                            std::span<const int> labels) {
  Tape tape;
  std::vector<Var> params = model.RegisterParameters(tape);
  Var loss = ReduceMean(internal::RecordLosses(model, tape, params, x, labels));
  return {loss.value().item(), Backward(tape, loss)};
}

// sigmoid(logit) per row of x.
inline std::vector<double> PredictProbabilities(const Model& model,
                                                const Tensor& x) {
  Tape tape;
  std::vector<Var> params = model.RegisterParameters(tape);
  const Tensor& logits = model.Forward(tape.Input(x), params).value();
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ops::Sigmoid(logits[i]);
  return out;
}

struct Evaluation {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

inline Evaluation Evaluate(const Model& model, const Tensor& x,
                           std::span<const int> labels) {
  Require(!labels.empty(), ErrorCode::kInvalidArgument,
          "evaluate: empty dataset");
  const std::vector<double> probs = PredictProbabilities(model, x);
  const Tensor y = internal::LabelColumn(labels);
  const Tensor losses = ops::BinaryCrossEntropy(
      Tensor(Shape{probs.size(), 1}, probs), y);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if ((probs[i] >= 0.5 ? 1 : 0) == labels[i]) ++correct;
  }
  const double n = static_cast<double>(labels.size());
  return {ops::ReduceSum(losses)[0] / n, static_cast<double>(correct) / n};
}

struct ValidationReport {
  struct Violation {
    std::size_t layer_index;
    std::string layer;
    std::string reason;
  };
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }

  std::string ToString() const {
    std::string out;
    for (const Violation& v : violations) {
      if (!out.empty()) out += "; ";
      out += v.layer + ": " + v.reason;
    }
    return out;
  }
};

// Flags every layer whose output for sample i depends on other samples in the
// batch. Such layers make per-sample gradients (and thus clipping) ill-defined.
inline ValidationReport ValidateModel(const Model& model) {
  ValidationReport report;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const Layer& layer = model.layers()[i];
    if (layer.couples_samples()) {
      report.violations.push_back(
          {i, layer.Name(i),
           "normalizes each channel with mean and variance taken across the "
           "batch; replace with group or instance normalization"});
    }
  }
  return report;
}

// Checkpoints: JSON with layer specs, seed and flat parameter arrays. Doubles
// are written in shortest round-trip form, so load(save(m)) == m exactly.
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json ModelToJson(const Model& model) {
  nlohmann::json params = nlohmann::json::array();
  for (const Tensor& p : model.parameters()) {
    params.push_back({{"shape", p.shape()}, {"data", p.values()}});
  }
  return {{"format", "dpadam-model"},
          {"version", kCheckpointVersion},
          {"widths", model.widths()},
          {"norm", model.norm().ToString()},
          {"seed", model.seed()},
          {"freeze_prefix", model.freeze_prefix()},
          {"parameters", std::move(params)}};
}

inline Model ModelFromJson(const nlohmann::json& doc) {
  try {
    Require(doc.at("format") == "dpadam-model", ErrorCode::kParse,
            "not a dpadam model checkpoint");
    Require(doc.at("version") == kCheckpointVersion, ErrorCode::kParse,
            "unsupported checkpoint version");
    auto widths = doc.at("widths").get<std::vector<std::size_t>>();
    const NormSpec norm = NormSpec::Parse(doc.at("norm").get<std::string>());
    Model model = BuildMlp(widths, norm, doc.at("seed").get<std::uint64_t>());
    const auto& params = doc.at("parameters");
    Require(params.size() == model.parameters().size(), ErrorCode::kParse,
            "checkpoint parameter count does not match its layer specs");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor t(params[i].at("shape").get<Shape>(),
               params[i].at("data").get<std::vector<double>>());
      Require(t.shape() == model.parameters()[i].shape(), ErrorCode::kParse,
              "checkpoint parameter " + std::to_string(i) + " has shape " +
                  ShapeToString(t.shape()));
      model.mutable_parameters()[i] = std::move(t);
    }
    model.set_freeze_prefix(doc.at("freeze_prefix").get<std::size_t>());
    return model;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kParse, std::string("malformed checkpoint: ") + e.what());
  }
}

inline void SaveCheckpoint(const Model& model, const std::string& path) {
  std::ofstream out(path);
  Require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path);
  out << ModelToJson(model).dump(2) << '\n';
}

inline Model LoadCheckpoint(const std::string& path) {
  std::ifstream in(path);
  Require(static_cast<bool>(in), ErrorCode::kIo, "cannot read " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorCode::kParse, path + ": " + e.what());
  }
  return ModelFromJson(doc);
}

}  // namespace dpadam
