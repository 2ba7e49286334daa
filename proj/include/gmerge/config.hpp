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

// Resolved configuration shared by every subcommand. A config file and
// command-line flags both produce the same JSON document, which is then
// converted here, so `--config f.json` plus overrides and the fully flagged
// invocation resolve identically.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gmerge/merge_algos.hpp"
#include "gmerge/merge_search.hpp"
#include "gmerge/param_groups.hpp"
#include "gmerge/sdg.hpp"
#include "gmerge/toy_eval.hpp"
#include "json.hpp"

namespace gmerge::cli {

struct IoConfig {
  std::vector<std::string> models;
  std::string init;
  std::string model;
  std::string in;
  std::string out;
  std::string out_dir;
  std::string report;
  std::string policy;
  bool allow_nonfinite = false;
};

struct SdgConfig {
  // Ratios and total have no sensible defaults; commands that need them
  // insist on explicit values.
  std::optional<std::int64_t> total;
  std::optional<double> rd;
  std::optional<double> ri;
  std::optional<double> rp;
  sdg::AugmentationPlan probs;
  sdg::AugmentOptions augment;
  double threshold = 0.8;
  std::string adapter;
  std::string embed_command;
  bool refine = false;
};

struct Config {
  std::uint64_t seed = 0;
  // Evaluator or task spec: "toy:<json or path>", "exec:<command>" or
  // "optimum:<checkpoint>".
  std::string evaluator;
  bool timing = false;
  IoConfig io;
  MergeSpec merge;
  SearchConfig search;
  GroupRules groups = GroupRules::defaults();
  TrainOptions train;
  SdgConfig sdg;

  // Throws kConfigError on unknown keys, wrong types or out-of-range values.
  static Config from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

}  // namespace gmerge::cli
