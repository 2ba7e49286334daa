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

#include "gmerge/param_groups.hpp"

#include <fnmatch.h>

#include "gmerge/error.hpp"

namespace gmerge {

std::string_view to_string(GroupLabel label) {
  switch (label) {
    case GroupLabel::kAttention: return "attention";
    case GroupLabel::kFfn: return "ffn";
    case GroupLabel::kEmbedding: return "embedding";
    case GroupLabel::kClassifier: return "classifier";
    case GroupLabel::kOther: return "other";
  }
  return "other";
}

std::string_view to_string(MergeType tau) {
  switch (tau) {
    case MergeType::kFull: return "full";
    case MergeType::kAttention: return "attention";
    case MergeType::kFfn: return "ffn";
    case MergeType::kBase: return "base";
  }
  return "full";
}

std::optional<GroupLabel> parse_group_label(std::string_view text) {
  for (auto label : {GroupLabel::kAttention, GroupLabel::kFfn, GroupLabel::kEmbedding,
                     GroupLabel::kClassifier, GroupLabel::kOther}) {
    if (to_string(label) == text) return label;
  }
  return std::nullopt;
}

std::optional<MergeType> parse_merge_type(std::string_view text) {
  for (auto tau : kAllMergeTypes) {
    if (to_string(tau) == text) return tau;
  }
  return std::nullopt;
}

bool GroupPattern::matches(std::string_view name) const {
  if (pattern.find_first_of("*?[") != std::string::npos) {
    return fnmatch(pattern.c_str(), std::string(name).c_str(), 0) == 0;
  }
  return name.find(pattern) != std::string_view::npos;
}

GroupRules GroupRules::defaults() {
  return GroupRules{{
      {GroupLabel::kAttention, "attention"},
      {GroupLabel::kAttention, "attn"},
      {GroupLabel::kFfn, "intermediate"},
      {GroupLabel::kFfn, "ffn"},
      {GroupLabel::kFfn, "mlp"},
      {GroupLabel::kEmbedding, "embed"},
      {GroupLabel::kClassifier, "classifier"},
      {GroupLabel::kClassifier, "score"},
      {GroupLabel::kClassifier, "head"},
  }};
}

GroupLabel classify(std::string_view name, const GroupRules& rules) {
  for (const GroupPattern& p : rules.patterns) {
    if (p.matches(name)) return p.label;
  }
  return GroupLabel::kOther;
}

NameSet select_params(const NameSet& names, MergeType tau, const GroupRules& rules) {
  if (tau != MergeType::kFull && rules.patterns.empty()) {
    throw Error(ErrorCode::kConfigError,
                "merge type '" + std::string(to_string(tau)) + "' needs a nonempty groups.patterns list");
  }
  NameSet out;
  for (const std::string& name : names) {
    bool keep = false;
    switch (tau) {
      case MergeType::kFull: keep = true; break;
      case MergeType::kAttention: keep = classify(name, rules) == GroupLabel::kAttention; break;
      case MergeType::kFfn: keep = classify(name, rules) == GroupLabel::kFfn; break;
      case MergeType::kBase: keep = classify(name, rules) != GroupLabel::kClassifier; break;
    }
    if (keep) out.insert(name);
  }
  if (out.empty()) {
    throw Error(ErrorCode::kEmptySelection,
                "merge type '" + std::string(to_string(tau)) + "' selects no tensors");
  }
  return out;
}

}  // namespace gmerge
