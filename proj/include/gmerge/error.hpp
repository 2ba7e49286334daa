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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gmerge {

enum class ErrorCode {
  // Checkpoint container.
  kBadMagic,
  kCorruptHeader,
  kTruncatedData,
  kNonFiniteValue,
  kIoError,
  kMalformedInput,
  kUnknownName,
  // Merging.
  kEmptySelection,
  kIncompatibleCheckpoints,
  kInvalidDropRate,
  kZeroNormVector,
  kInvalidSpec,
  // Search.
  kScoreOutOfRange,
  kEvaluatorFailure,
  // Toy evaluation.
  kLengthMismatch,
  kEmptyMaskSet,
  kMalformedModel,
  // Synthetic data.
  kRatioOverflow,
  kEmptyField,
  kAdapterExit,
  kMalformedAdapterOutput,
  kCountShortfall,
  // Configuration and usage.
  kConfigError,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this exception; `code()` lets
// callers (the CLI in particular) map failures onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gmerge
