// Copyright 2026 The ResDTA Authors.
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

namespace resdta {

/// Failure categories raised by the library. The CLI maps these onto exit
/// codes (see ErrorCategory below).
enum class ErrorKind {
  kUnknownSymbol,
  kInvalidArgument,
  kParse,
  kDimensionMismatch,
  kEmptyInput,
  kLengthMismatch,
  kTooFewInteractions,
  kIndexOutOfRange,
  kOverlappingFolds,
  kIncompletePartition,
  kDegenerateOutput,
  kTokenOutOfRange,
  kShapeMismatch,
  kIo,
  kVersionMismatch,
  kConfigMismatch,
  kNoComparablePairs,
  kDegenerateInput,
  kNonFiniteLoss,
  kEmptySplit,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUnknownSymbol: return "UnknownSymbol";
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kDimensionMismatch: return "DimensionMismatch";
    case ErrorKind::kEmptyInput: return "EmptyInput";
    case ErrorKind::kLengthMismatch: return "LengthMismatch";
    case ErrorKind::kTooFewInteractions: return "TooFewInteractions";
    case ErrorKind::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::kOverlappingFolds: return "OverlappingFolds";
    case ErrorKind::kIncompletePartition: return "IncompletePartition";
    case ErrorKind::kDegenerateOutput: return "DegenerateOutput";
    case ErrorKind::kTokenOutOfRange: return "TokenOutOfRange";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kVersionMismatch: return "VersionMismatch";
    case ErrorKind::kConfigMismatch: return "ConfigMismatch";
    case ErrorKind::kNoComparablePairs: return "NoComparablePairs";
    case ErrorKind::kDegenerateInput: return "DegenerateInput";
    case ErrorKind::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::kEmptySplit: return "EmptySplit";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Coarse grouping used for process exit codes.
enum class ErrorCategory { kData = 2, kRuntime = 3 };

constexpr ErrorCategory category_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kNonFiniteLoss:
    case ErrorKind::kDegenerateOutput:
    case ErrorKind::kDegenerateInput:
    case ErrorKind::kNoComparablePairs:
      return ErrorCategory::kRuntime;
    default:
      return ErrorCategory::kData;
  }
}

}  // namespace resdta
