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

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "gmerge/error.hpp"
#include "gmerge/merge_search.hpp"

namespace gmerge::cli {

inline constexpr std::string_view kVersion = "gmerge 0.1.0 (checkpoint format GMRG1)";

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitExternal = 3;

int exit_code_for(ErrorCode code);

// Builds an evaluator from "toy:<json or path>", "exec:<command>" or
// "optimum:<checkpoint>". Throws kConfigError on anything else.
Evaluator make_evaluator(const std::string& spec);

// Runs one invocation; `args` excludes the program name. Machine output goes
// to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gmerge::cli
