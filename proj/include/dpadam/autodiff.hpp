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

// Reverse-mode automatic differentiation over a flat tape of primitive ops.
//
// A Tape records every primitive applied to its Vars in program order. Each
// record keeps its operand ids, attributes and forward value; Backward()
// replays the records in reverse, visiting each exactly once, and returns the
// gradient of a scalar output with respect to every Parameter() leaf in
// registration order. Tapes are single-threaded; run one tape per sample to
// parallelize.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpadam/error.hpp"
#include "dpadam/tensor.hpp"

namespace dpadam {

enum class OpKind {
  kInput,
  kParameter,
  kMatmul,
  kAdd,
  kMul,
  kScale,
  kRelu,
  kSigmoid,
  kGroupNorm,
  kBatchNorm,
  kReshape,
  kReduceMean,
  kReduceSum,
  kBinaryCrossEntropy,
};

inline std::string_view OpKindName(OpKind kind) {
  switch (kind) {
    case OpKind::kInput:
      return "input";
    case OpKind::kParameter:
      return "parameter";
    case OpKind::kMatmul:
      return "matmul";
    case OpKind::kAdd:
      return "add";
    case OpKind::kMul:
      return "mul";
    case OpKind::kScale:
      return "scale";
    case OpKind::kRelu:
      return "relu";
    case OpKind::kSigmoid:
      return "sigmoid";
    case OpKind::kGroupNorm:
      return "group_norm";
    case OpKind::kBatchNorm:
      return "batch_norm";
    case OpKind::kReshape:
      return "reshape";
    case OpKind::kReduceMean:
      return "reduce_mean";
    case OpKind::kReduceSum:
      return "reduce_sum";
    case OpKind::kBinaryCrossEntropy:
      return "binary_cross_entropy";
  }
  return "unknown";
}

// Per-op attributes; each op reads only the fields it documents.
struct OpAttributes {
  std::size_t groups = 0;  // group_norm
  double eps = 0.0;        // group_norm, batch_norm variance stabilizer
  double factor = 1.0;     // scale
  Shape shape;             // reshape target
};

// Probabilities are clamped to [kBceClamp, 1 - kBceClamp] before the log.
inline constexpr double kBceClamp = 1e-12;

namespace ops {

[[noreturn]] inline void ShapeError(OpKind kind, const Shape& a,
                                    const Shape& b) {
  Fail(ErrorCode::kShapeMismatch, std::string(OpKindName(kind)) +
                                      ": incompatible shapes " +
                                      ShapeToString(a) + " and " +
                                      ShapeToString(b));
}

inline void RequireRank2(OpKind kind, const Tensor& t) {
  if (t.rank() != 2) ShapeError(kind, t.shape(), Shape{});
}

// b broadcasts against a when shapes match or b is a's shape without the
// leading batch axis. Returns b's stride (== a.size() when shapes match).
inline std::size_t BroadcastStride(OpKind kind, const Tensor& a,
                                   const Tensor& b) {
  if (a.shape() == b.shape()) return a.size();
  if (a.rank() == b.rank() + 1 &&
      std::equal(b.shape().begin(), b.shape().end(), a.shape().begin() + 1)) {
    return b.size();
  }
  ShapeError(kind, a.shape(), b.shape());
}

inline Tensor Matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    ShapeError(OpKind::kMatmul, a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * b.at(p, j);
    }
  }
  return out;
}

inline Tensor Add(const Tensor& a, const Tensor& b) {
  const std::size_t stride = BroadcastStride(OpKind::kAdd, a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % stride];
  return out;
}

inline Tensor Mul(const Tensor& a, const Tensor& b) {
  const std::size_t stride = BroadcastStride(OpKind::kMul, a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i % stride];
  return out;
}

inline Tensor Scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& v : out.data()) v *= factor;
  return out;
}

inline Tensor Relu(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline double Sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor Sigmoid(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data()) v = Sigmoid(v);
  return out;
}

// x-hat and one inverse standard deviation per normalization set. Shared by
// group and batch normalization.
struct NormalizedSets {
  Tensor normalized;             // x-hat, same shape as x
  std::vector<double> inv_std;   // one per set
};

inline void CheckNormOperands(OpKind kind, const Tensor& x, const Tensor& gamma,
                              const Tensor& beta) {
  RequireRank2(kind, x);
  const Shape channels{x.dim(1)};
  if (gamma.shape() != channels) ShapeError(kind, x.shape(), gamma.shape());
  if (beta.shape() != channels) ShapeError(kind, x.shape(), beta.shape());
}

// Group normalization on x of shape [batch, channels]: channels are split into
// `groups` contiguous groups and each (sample, group) is normalized with its
// own mean and biased variance.
inline NormalizedSets GroupNormalize(const Tensor& x, std::size_t groups,
                                     double eps) {
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  Require(groups > 0 && channels % groups == 0, ErrorCode::kInvalidArgument,
          "group_norm: " + std::to_string(groups) +
              " groups do not divide " + std::to_string(channels) +
              " channels");
  const std::size_t width = channels / groups;
  NormalizedSets out{Tensor(x.shape()), std::vector<double>(batch * groups)};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t begin = g * width;
      double mean = 0.0;
      for (std::size_t c = begin; c < begin + width; ++c) mean += x.at(b, c);
      mean /= static_cast<double>(width);
      double var = 0.0;
      for (std::size_t c = begin; c < begin + width; ++c) {
        const double d = x.at(b, c) - mean;
        var += d * d;
      }
      var /= static_cast<double>(width);
      const double inv = 1.0 / std::sqrt(var + eps);
      out.inv_std[b * groups + g] = inv;
      for (std::size_t c = begin; c < begin + width; ++c) {
        out.normalized.at(b, c) = (x.at(b, c) - mean) * inv;
      }
    }
  }
  return out;
}

// Batch normalization statistics: one set per channel, spanning the batch.
inline NormalizedSets BatchNormalize(const Tensor& x, double eps) {
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  NormalizedSets out{Tensor(x.shape()), std::vector<double>(channels)};
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0;
    for (std::size_t b = 0; b < batch; ++b) mean += x.at(b, c);
    mean /= static_cast<double>(batch);
    double var = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double d = x.at(b, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(batch);
    const double inv = 1.0 / std::sqrt(var + eps);
    out.inv_std[c] = inv;
    for (std::size_t b = 0; b < batch; ++b) {
      out.normalized.at(b, c) = (x.at(b, c) - mean) * inv;
    }
  }
  return out;
}

inline Tensor AffinePerChannel(const Tensor& normalized, const Tensor& gamma,
                               const Tensor& beta) {
  Tensor out = normalized;
  const std::size_t channels = normalized.dim(1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = out[i] * gamma[i % channels] + beta[i % channels];
  }
  return out;
}

inline Tensor GroupNorm(const Tensor& x, const Tensor& gamma,
                        const Tensor& beta, std::size_t groups, double eps) {
  CheckNormOperands(OpKind::kGroupNorm, x, gamma, beta);
  return AffinePerChannel(GroupNormalize(x, groups, eps).normalized, gamma,
                          beta);
}

inline Tensor BatchNorm(const Tensor& x, const Tensor& gamma,
                        const Tensor& beta, double eps) {
  CheckNormOperands(OpKind::kBatchNorm, x, gamma, beta);
  return AffinePerChannel(BatchNormalize(x, eps).normalized, gamma, beta);
}

inline Tensor ReduceSum(const Tensor& a) {
  double sum = 0.0;
  for (double v : a.data()) sum += v;
  return Tensor::Scalar(sum);
}

inline Tensor ReduceMean(const Tensor& a) {
  return Tensor::Scalar(ReduceSum(a)[0] / static_cast<double>(a.size()));
}

inline double ClampProbability(double p) {
  return std::clamp(p, kBceClamp, 1.0 - kBceClamp);
}

// Elementwise -[y log p + (1 - y) log(1 - p)] with clamped p.
inline Tensor BinaryCrossEntropy(const Tensor& p, const Tensor& y) {
  if (p.shape() != y.shape()) {
    ShapeError(OpKind::kBinaryCrossEntropy, p.shape(), y.shape());
  }
  Tensor out(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = ClampProbability(p[i]);
    out[i] = -(y[i] * std::log(pc) + (1.0 - y[i]) * std::log1p(-pc));
  }
  return out;
}

}  // namespace ops

// Untraced evaluation of one primitive, for callers that do not need a tape.
inline Tensor ForwardPrimitive(OpKind kind, std::span<const Tensor> operands,
                               const OpAttributes& attrs = {}) {
  auto arity = [&](std::size_t n) {
    Require(operands.size() == n, ErrorCode::kInvalidArgument,
            std::string(OpKindName(kind)) + " expects " + std::to_string(n) +
                " operands, got " + std::to_string(operands.size()));
  };
  switch (kind) {
    case OpKind::kInput:
    case OpKind::kParameter:
      arity(1);
      return operands[0];
    case OpKind::kMatmul:
      arity(2);
      return ops::Matmul(operands[0], operands[1]);
    case OpKind::kAdd:
      arity(2);
      return ops::Add(operands[0], operands[1]);
    case OpKind::kMul:
      arity(2);
      return ops::Mul(operands[0], operands[1]);
    case OpKind::kScale:
      arity(1);
      return ops::Scale(operands[0], attrs.factor);
    case OpKind::kRelu:
      arity(1);
      return ops::Relu(operands[0]);
    case OpKind::kSigmoid:
      arity(1);
      return ops::Sigmoid(operands[0]);
    case OpKind::kGroupNorm:
      arity(3);
      return ops::GroupNorm(operands[0], operands[1], operands[2],
                            attrs.groups, attrs.eps);
    case OpKind::kBatchNorm:
      arity(3);
      return ops::BatchNorm(operands[0], operands[1], operands[2], attrs.eps);
    case OpKind::kReshape:
      arity(1);
      return operands[0].Reshaped(attrs.shape);
    case OpKind::kReduceMean:
      arity(1);
      return ops::ReduceMean(operands[0]);
    case OpKind::kReduceSum:
      arity(1);
      return ops::ReduceSum(operands[0]);
    case OpKind::kBinaryCrossEntropy:
      arity(2);
      return ops::BinaryCrossEntropy(operands[0], operands[1]);
  }
  Fail(ErrorCode::kInvalidArgument, "unknown op kind");
}

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  struct Record {
    OpKind kind;
    std::vector<std::size_t> inputs;
    OpAttributes attrs;
    Tensor value;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Constant leaf; receives no gradient.
  Var Input(Tensor value) {
    return Push(Record{OpKind::kInput, {}, {}, std::move(value)});
  }

  // Traced leaf; Backward() reports its gradient at position
  // parameter_count() - 1 as of this call.
  Var Parameter(Tensor value) {
    Var v = Push(Record{OpKind::kParameter, {}, {}, std::move(value)});
    parameter_ids_.push_back(v.id());
    return v;
  }

  Var Apply(OpKind kind, std::initializer_list<Var> operands,
            OpAttributes attrs = {}) {
    Require(kind != OpKind::kInput && kind != OpKind::kParameter,
            ErrorCode::kInvalidArgument, "leaves are created via Input/Parameter");
    std::vector<std::size_t> ids;
    std::vector<Tensor> values;
    ids.reserve(operands.size());
    values.reserve(operands.size());
    for (const Var& v : operands) {
      Require(v.tape() == this && v.id() < records_.size(),
              ErrorCode::kIncompleteTape,
              std::string(OpKindName(kind)) +
                  ": operand was not recorded on this tape");
      ids.push_back(v.id());
      values.push_back(records_[v.id()].value);
    }
    Tensor out = ForwardPrimitive(kind, values, attrs);
    return Push(Record{kind, std::move(ids), std::move(attrs), std::move(out)});
  }

  const Tensor& value(std::size_t id) const { return records_.at(id).value; }
  const Record& record(std::size_t id) const { return records_.at(id); }
  std::size_t size() const { return records_.size(); }
  std::size_t parameter_count() const { return parameter_ids_.size(); }
  std::span<const std::size_t> parameter_ids() const { return parameter_ids_; }

 private:
  Var Push(Record record) {
    records_.push_back(std::move(record));
    return Var(this, records_.size() - 1);
  }

  std::deque<Record> records_;  // stable references across push_back
  std::vector<std::size_t> parameter_ids_;
};

inline const Tensor& Var::value() const {
  Require(tape_ != nullptr, ErrorCode::kIncompleteTape, "unbound Var");
  return tape_->value(id_);
}

namespace internal {

inline Tape& SharedTape(OpKind kind, std::initializer_list<Var> vars) {
  Tape* tape = vars.begin()->tape();
  for (const Var& v : vars) {
    Require(v.tape() != nullptr && v.tape() == tape,
            ErrorCode::kIncompleteTape,
            std::string(OpKindName(kind)) +
                ": operands belong to different tapes");
  }
  return *tape;
}

}  // namespace internal

inline Var Matmul(Var a, Var b) {
  return internal::SharedTape(OpKind::kMatmul, {a, b})
      .Apply(OpKind::kMatmul, {a, b});
}
inline Var Add(Var a, Var b) {
  return internal::SharedTape(OpKind::kAdd, {a, b}).Apply(OpKind::kAdd, {a, b});
}
inline Var Mul(Var a, Var b) {
  return internal::SharedTape(OpKind::kMul, {a, b}).Apply(OpKind::kMul, {a, b});
}
inline Var Scale(Var a, double factor) {
  OpAttributes attrs;
  attrs.factor = factor;
  return internal::SharedTape(OpKind::kScale, {a})
      .Apply(OpKind::kScale, {a}, attrs);
}
inline Var Relu(Var a) {
  return internal::SharedTape(OpKind::kRelu, {a}).Apply(OpKind::kRelu, {a});
}
inline Var Sigmoid(Var a) {
  return internal::SharedTape(OpKind::kSigmoid, {a})
      .Apply(OpKind::kSigmoid, {a});
}
inline Var GroupNorm(Var x, Var gamma, Var beta, std::size_t groups,
                     double eps) {
  OpAttributes attrs;
  attrs.groups = groups;
  attrs.eps = eps;
  return internal::SharedTape(OpKind::kGroupNorm, {x, gamma, beta})
      .Apply(OpKind::kGroupNorm, {x, gamma, beta}, attrs);
}
inline Var BatchNorm(Var x, Var gamma, Var beta, double eps) {
  OpAttributes attrs;
  attrs.eps = eps;
  return internal::SharedTape(OpKind::kBatchNorm, {x, gamma, beta})
      .Apply(OpKind::kBatchNorm, {x, gamma, beta}, attrs);
}
inline Var Reshape(Var a, Shape shape) {
  OpAttributes attrs;
  attrs.shape = std::move(shape);
  return internal::SharedTape(OpKind::kReshape, {a})
      .Apply(OpKind::kReshape, {a}, attrs);
}
inline Var ReduceMean(Var a) {
  return internal::SharedTape(OpKind::kReduceMean, {a})
      .Apply(OpKind::kReduceMean, {a});
}
inline Var ReduceSum(Var a) {
  return internal::SharedTape(OpKind::kReduceSum, {a})
      .Apply(OpKind::kReduceSum, {a});
}
inline Var BinaryCrossEntropy(Var p, Var y) {
  return internal::SharedTape(OpKind::kBinaryCrossEntropy, {p, y})
      .Apply(OpKind::kBinaryCrossEntropy, {p, y});
}

namespace internal {

// Adds the gradient of a broadcast operand: sums `grad` (shaped like the
// full operand) into `dst` modulo its stride.
inline void AccumulateBroadcast(Tensor& dst, const Tensor& grad) {
  const std::size_t stride = dst.size();
  for (std::size_t i = 0; i < grad.size(); ++i) dst[i % stride] += grad[i];
}

// Backward of y = gamma * x_hat + beta where x_hat is x normalized per set;
// set_of(b, c) gives the set index of element (b, c) and set_size is the
// element count per set.
template <typename SetOf>
void NormalizationBackward(const Tensor& x, const Tensor& gamma,
                           const ops::NormalizedSets& stats, const Tensor& dy,
                           SetOf set_of, std::size_t set_size, Tensor& dx,
                           Tensor& dgamma, Tensor& dbeta) {
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t num_sets = stats.inv_std.size();
  std::vector<double> sum_dxhat(num_sets, 0.0), sum_dxhat_xhat(num_sets, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double g = dy.at(b, c);
      const double xhat = stats.normalized.at(b, c);
      dgamma[c] += g * xhat;
      dbeta[c] += g;
      const double dxhat = g * gamma[c];
      const std::size_t s = set_of(b, c);
      sum_dxhat[s] += dxhat;
      sum_dxhat_xhat[s] += dxhat * xhat;
    }
  }
  const double n = static_cast<double>(set_size);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t s = set_of(b, c);
      const double dxhat = dy.at(b, c) * gamma[c];
      const double xhat = stats.normalized.at(b, c);
      dx.at(b, c) += stats.inv_std[s] / n *
                     (n * dxhat - sum_dxhat[s] - xhat * sum_dxhat_xhat[s]);
    }
  }
}

}  // namespace internal

// Gradient of the scalar `output` with respect to every Parameter() leaf of
// `tape`, in registration order. Parameters the output does not depend on get
// zero tensors. The tape is not modified, so repeated calls agree bit-for-bit.
inline GradientSet Backward(const Tape& tape, Var output) {
  Require(output.tape() == &tape && output.id() < tape.size(),
          ErrorCode::kIncompleteTape,
          "backward: output was not recorded on this tape");
  const Tensor& out_value = tape.value(output.id());
  Require(out_value.is_scalar(), ErrorCode::kNonScalarOutput,
          "backward: output has shape " + ShapeToString(out_value.shape()));

  const std::size_t n = output.id() + 1;
  std::vector<Tensor> grads(n);
  std::vector<bool> has_grad(n, false);
  auto grad_of = [&](std::size_t id) -> Tensor& {
    if (!has_grad[id]) {
      grads[id] = Tensor(tape.value(id).shape());
      has_grad[id] = true;
    }
    return grads[id];
  };
  grad_of(output.id())[0] = 1.0;

  for (std::size_t id = n; id-- > 0;) {
    if (!has_grad[id]) continue;
    const Tape::Record& rec = tape.record(id);
    const Tensor& g = grads[id];
    auto in = [&](std::size_t k) -> const Tensor& {
      return tape.value(rec.inputs[k]);
    };
    switch (rec.kind) {
      case OpKind::kInput:
      case OpKind::kParameter:
        break;
      case OpKind::kMatmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
        Tensor& da = grad_of(rec.inputs[0]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += g.at(i, j) * b.at(p, j);
            da.at(i, p) += acc;
          }
        }
        Tensor& db = grad_of(rec.inputs[1]);
        for (std::size_t p = 0; p < k; ++p) {
          for (std::size_t j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += a.at(i, p) * g.at(i, j);
            db.at(p, j) += acc;
          }
        }
        break;
      }
      case OpKind::kAdd: {
        Tensor& da = grad_of(rec.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        internal::AccumulateBroadcast(grad_of(rec.inputs[1]), g);
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t stride = b.size();
        Tensor& da = grad_of(rec.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i % stride];
        Tensor& db = grad_of(rec.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) db[i % stride] += g[i] * a[i];
        break;
      }
      case OpKind::kScale: {
        Tensor& da = grad_of(rec.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * rec.attrs.factor;
        break;
      }
      case OpKind::kRelu: {
        // Subgradient at 0 is 0.
        const Tensor& a = in(0);
        Tensor& da = grad_of(rec.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (a[i] > 0.0) da[i] += g[i];
        }
        break;
      }
      case OpKind::kSigmoid: {
        Tensor& da = grad_of(rec.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = rec.value[i];
          da[i] += g[i] * s * (1.0 - s);
        }
        break;
      }
      case OpKind::kGroupNorm: {
        const Tensor& x = in(0);
        const std::size_t groups = rec.attrs.groups;
        const std::size_t width = x.dim(1) / groups;
        const auto stats = ops::GroupNormalize(x, groups, rec.attrs.eps);
        internal::NormalizationBackward(
            x, in(1), stats, g,
            [&](std::size_t b, std::size_t c) { return b * groups + c / width; },
            width, grad_of(rec.inputs[0]), grad_of(rec.inputs[1]),
            grad_of(rec.inputs[2]));
        break;
      }
      case OpKind::kBatchNorm: {
        const Tensor& x = in(0);
        const auto stats = ops::BatchNormalize(x, rec.attrs.eps);
        internal::NormalizationBackward(
            x, in(1), stats, g, [](std::size_t, std::size_t c) { return c; },
            x.dim(0), grad_of(rec.inputs[0]), grad_of(rec.inputs[1]),
            grad_of(rec.inputs[2]));
        break;
      }
      case OpKind::kReshape: {
        Tensor& da = grad_of(rec.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        break;
      }
      case OpKind::kReduceSum:
      case OpKind::kReduceMean: {
        Tensor& da = grad_of(rec.inputs[0]);
        const double scale = rec.kind == OpKind::kReduceMean
                                 ? 1.0 / static_cast<double>(da.size())
                                 : 1.0;
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[0] * scale;
        break;
      }
      case OpKind::kBinaryCrossEntropy: {
        // The clamp has zero derivative outside [kBceClamp, 1 - kBceClamp].
        const Tensor& p = in(0);
        const Tensor& y = in(1);
        Tensor& dp = grad_of(rec.inputs[0]);
        Tensor& dy = grad_of(rec.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double pc = ops::ClampProbability(p[i]);
          if (pc == p[i]) dp[i] += g[i] * (-y[i] / pc + (1.0 - y[i]) / (1.0 - pc));
          dy[i] += g[i] * (-std::log(pc) + std::log1p(-pc));
        }
        break;
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(tape.parameter_count());
  for (std::size_t id : tape.parameter_ids()) {
    if (id < n && has_grad[id]) {
      out.push_back(std::move(grads[id]));
    } else {
      out.emplace_back(tape.value(id).shape());
    }
  }
  return GradientSet(std::move(out));
}

using LossFunction = std::function<double(const std::vector<Tensor>&)>;

// Central-difference gradient estimate, coordinate by coordinate. At a kink
// the estimate is the midpoint of the one-sided slopes (0 for |x| at 0).
inline GradientSet FdGradient(const LossFunction& loss,
                              std::vector<Tensor> params, double step) {
  Require(step > 0.0 && std::isfinite(step), ErrorCode::kInvalidArgument,
          "fd_gradient: step must be positive");
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor g(params[t].shape());
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double orig = params[t][i];
      params[t][i] = orig + step;
      const double plus = loss(params);
      params[t][i] = orig - step;
      const double minus = loss(params);
      params[t][i] = orig;
      g[i] = (plus - minus) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return GradientSet(std::move(grads));
}

}  // namespace dpadam
