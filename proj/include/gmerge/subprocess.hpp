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

// Minimal POSIX subprocess runner used by the external evaluator and the
// generator adapter.

#pragma once

#include <string>
#include <string_view>

namespace gmerge {

struct ProcessResult {
  // Exit status, or 128 + signal number when the child was killed.
  int exit_code = 0;
  std::string output;
};

// Runs `command` through /bin/sh -c, writes `input` to its standard input,
// closes it and collects standard output. Standard error is inherited.
// Throws std::system_error if the process cannot be started.
ProcessResult run_process(const std::string& command, std::string_view input = {});

// Single-quotes `text` for /bin/sh.
std::string shell_quote(std::string_view text);

}  // namespace gmerge
