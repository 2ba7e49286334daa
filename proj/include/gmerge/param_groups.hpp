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

// Parameter groups and merge types.
//
// A tensor name is labelled by the first matching pattern in a GroupRules
// list. A merge type then picks which labelled tensors take part in a merge;
// everything else is copied from a carrier model.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gmerge/tensor_store.hpp"

namespace gmerge {

enum class GroupLabel { kAttention, kFfn, kEmbedding, kClassifier, kOther };

enum class MergeType { kFull, kAttention, kFfn, kBase };

inline constexpr std::array<MergeType, 4> kAllMergeTypes = {
    MergeType::kFull, MergeType::kAttention, MergeType::kFfn, MergeType::kBase};

std::string_view to_string(GroupLabel label);
std::string_view to_string(MergeType tau);
std::optional<GroupLabel> parse_group_label(std::string_view text);
std::optional<MergeType> parse_merge_type(std::string_view text);

// A pattern containing any of `*?[` is an anchored glob over the whole
// name; anything else matches as a substring.
struct GroupPattern {
  GroupLabel label;
  std::string pattern;

  bool matches(std::string_view name) const;
};

struct GroupRules {
  std::vector<GroupPattern> patterns;

  static GroupRules defaults();
};

GroupLabel classify(std::string_view name, const GroupRules& rules);

// full: every name. attention / ffn: names with that label. base: every name
// not labelled classifier. Throws kEmptySelection on an empty result and
// kConfigError when a non-full type is requested with no patterns.
NameSet select_params(const NameSet& names, MergeType tau, const GroupRules& rules);

}  // namespace gmerge
