// Copyright 2026 The gmerge Authors
// SPDX-License-Identifier: Apache-2.0
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

#include "gmerge/error.hpp"

namespace gmerge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kCorruptHeader: return "CorruptHeader";
    case ErrorCode::kTruncatedData: return "TruncatedData";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kMalformedInput: return "MalformedInput";
    case ErrorCode::kUnknownName: return "UnknownName";
    case ErrorCode::kEmptySelection: return "EmptySelection";
    case ErrorCode::kIncompatibleCheckpoints: return "IncompatibleCheckpoints";
    case ErrorCode::kInvalidDropRate: return "InvalidDropRate";
    case ErrorCode::kZeroNormVector: return "ZeroNormVector";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorCode::kEvaluatorFailure: return "EvaluatorFailure";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptyMaskSet: return "EmptyMaskSet";
    case ErrorCode::kMalformedModel: return "MalformedModel";
    case ErrorCode::kRatioOverflow: return "RatioOverflow";
    case ErrorCode::kEmptyField: return "EmptyField";
    case ErrorCode::kAdapterExit: return "AdapterExit";
    case ErrorCode::kMalformedAdapterOutput: return "MalformedAdapterOutput";
    case ErrorCode::kCountShortfall: return "CountShortfall";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace gmerge
