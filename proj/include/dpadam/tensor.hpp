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
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpadam/error.hpp"

namespace dpadam {

using Shape = std::vector<std::size_t>;

inline std::size_t ShapeSize(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string ShapeToString(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// Dense row-major array of doubles. A rank-0 shape is a scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    CheckDims();
    data_.assign(ShapeSize(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    CheckDims();
    Require(ShapeSize(shape_) == data_.size(), ErrorCode::kShapeMismatch,
            "tensor shape " + ShapeToString(shape_) + " holds " +
                std::to_string(ShapeSize(shape_)) + " elements, got " +
                std::to_string(data_.size()));
  }

  static Tensor Scalar(double value) { return Tensor(Shape{}, {value}); }

  static Tensor Vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }

  static Tensor Matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  static Tensor Filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // 2-D accessors; callers guarantee rank 2.
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  double item() const {
    Require(is_scalar(), ErrorCode::kNonScalarOutput,
            "item() on tensor of shape " + ShapeToString(shape_));
    return data_[0];
  }

  bool AllFinite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Tensor Reshaped(Shape shape) const {
    Require(ShapeSize(shape) == data_.size(), ErrorCode::kShapeMismatch,
            "reshape " + ShapeToString(shape_) + " -> " + ShapeToString(shape));
    return Tensor(std::move(shape), data_);
  }

  // Row r of a rank>=1 tensor as a tensor of the trailing shape.
  Tensor Row(std::size_t r) const {
    Require(rank() >= 1 && r < shape_[0], ErrorCode::kShapeMismatch,
            "row index out of range for shape " + ShapeToString(shape_));
    Shape tail(shape_.begin() + 1, shape_.end());
    const std::size_t stride = ShapeSize(tail);
    std::vector<double> out(data_.begin() + r * stride,
                            data_.begin() + (r + 1) * stride);
    return Tensor(std::move(tail), std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void CheckDims() const {
    for (std::size_t d : shape_) {
      Require(d > 0, ErrorCode::kInvalidArgument,
              "tensor dimensions must be positive, got " +
                  ShapeToString(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

// One tensor per model parameter, index-aligned with the parameter store.
class GradientSet {
 public:
  GradientSet() = default;
  explicit GradientSet(std::vector<Tensor> tensors)
      : tensors_(std::move(tensors)) {}

  static GradientSet ZerosLike(std::span<const Shape> shapes) {
    std::vector<Tensor> out;
    out.reserve(shapes.size());
    for (const Shape& s : shapes) out.emplace_back(s);
    return GradientSet(std::move(out));
  }

  static GradientSet ZerosLike(const GradientSet& other) {
    return ZerosLike(other.Shapes());
  }

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::vector<Shape> Shapes() const {
    std::vector<Shape> out;
    out.reserve(tensors_.size());
    for (const Tensor& t : tensors_) out.push_back(t.shape());
    return out;
  }

  std::size_t ElementCount() const {
    std::size_t n = 0;
    for (const Tensor& t : tensors_) n += t.size();
    return n;
  }

  // sqrt of the sum of squares over every element of every tensor.
  double GlobalL2Norm() const {
    double sum = 0.0;
    for (const Tensor& t : tensors_) {
      for (double v : t.data()) sum += v * v;
    }
    return std::sqrt(sum);
  }

  bool AllFinite() const {
    for (const Tensor& t : tensors_) {
      if (!t.AllFinite()) return false;
    }
    return true;
  }

  bool SameShapes(const GradientSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (tensors_[i].shape() != other[i].shape()) return false;
    }
    return true;
  }

  void RequireSameShapes(const GradientSet& other,
                         std::string_view context) const {
    Require(SameShapes(other), ErrorCode::kShapeMismatch,
            std::string(context) + ": gradient sets are not shape-aligned");
  }

  GradientSet Scaled(double c) const {
    GradientSet out = *this;
    for (Tensor& t : out.tensors_) {
      for (double& v : t.data()) v *= c;
    }
    return out;
  }

  GradientSet& operator+=(const GradientSet& other) {
    RequireSameShapes(other, "GradientSet +=");
    for (std::size_t i = 0; i < size(); ++i) {
      auto dst = tensors_[i].data();
      auto src = other[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
    return *this;
  }

  // Concatenation of all elements in tensor order.
  std::vector<double> Flatten() const {
    std::vector<double> out;
    out.reserve(ElementCount());
    for (const Tensor& t : tensors_) {
      out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return out;
  }

  friend bool operator==(const GradientSet&, const GradientSet&) = default;

 private:
  std::vector<Tensor> tensors_;
};

}  // namespace dpadam
