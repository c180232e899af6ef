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

#include <stdexcept>
#include <string>
#include <string_view>

namespace dpadam {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kNonFinite,
  kNonScalarOutput,
  kIncompleteTape,
  kEmptyBatch,
  kValidationFailed,
  kCalibrationFailed,
  kParse,
  kIo,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid-argument";
    case ErrorCode::kShapeMismatch:
      return "shape-mismatch";
    case ErrorCode::kNonFinite:
      return "non-finite";
    case ErrorCode::kNonScalarOutput:
      return "non-scalar-output";
    case ErrorCode::kIncompleteTape:
      return "incomplete-tape";
    case ErrorCode::kEmptyBatch:
      return "empty-batch";
    case ErrorCode::kValidationFailed:
      return "validation-failed";
    case ErrorCode::kCalibrationFailed:
      return "calibration-failed";
    case ErrorCode::kParse:
      return "parse";
    case ErrorCode::kIo:
      return "io";
  }
  return "unknown";
}

// All library failures are reported as dpadam::Error; code() lets callers
// (and tests) distinguish the failure class without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void Fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void Require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) Fail(code, message);
}

}  // namespace dpadam
