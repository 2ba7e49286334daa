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

// Synthetic-data-generation utilities for guardrail policies: the policy and
// sample records, per-kind count allocation, instruction formatting, surface
// augmentations, near-duplicate removal, generation-prompt rendering and the
// JSON-lines protocol spoken with an external generator process.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gmerge/rng.hpp"

namespace gmerge::sdg {

enum class Label { kSafe, kUnsafe };
enum class SampleKind { kDiverse, kInDomain, kInapplicable, kJailbreak };

std::string_view to_string(Label label);
std::string_view to_string(SampleKind kind);
std::optional<Label> parse_label(std::string_view text);
std::optional<SampleKind> parse_kind(std::string_view text);

struct PolicyExample {
  std::string prompt;
  Label label = Label::kSafe;
};

struct Policy {
  std::string name;
  std::string description;
  std::vector<std::string> allowed;
  std::vector<std::string> disallowed;
  std::vector<PolicyExample> examples;

  // Throws kMalformedInput: empty name/description or a behavior listed as
  // both allowed and disallowed.
  void validate() const;

  static Policy from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct Sample {
  std::string prompt;
  std::string rationale;
  Label label = Label::kSafe;
  SampleKind kind = SampleKind::kDiverse;
  std::string policy;

  static Sample from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

std::vector<Sample> read_samples_jsonl(std::string_view text);
std::string write_samples_jsonl(std::span<const Sample> samples);

struct CountAllocation {
  std::int64_t diverse = 0;
  std::int64_t in_domain = 0;
  std::int64_t inapplicable = 0;
  std::int64_t jailbreak = 0;
  std::int64_t total = 0;

  std::int64_t count(SampleKind kind) const;
};

// N_d = round(r_d N_t), N_i = round(r_i N_t), N_p = round(r_p N_t),
// N_j = N_t - N_d - N_i - N_p, rounding half away from zero. Throws
// kRatioOverflow when the rounded parts exceed the total and kConfigError on
// negative inputs.
CountAllocation allocate_counts(std::int64_t total, double r_diverse, double r_in_domain, double r_inapplicable);

inline constexpr std::string_view kSeparator = "[SEP]";

// "Instruct: {desc}[SEP]\nQuery: {query}[SEP] {rationale} [SEP]"; with an
// empty rationale the string ends after the query's separator. Throws
// kEmptyField on an empty description or query.
std::string format_instruction(std::string_view policy_description, std::string_view query,
                               std::string_view rationale);

struct InstructionParts {
  std::string description;
  std::string query;
  std::string rationale;
};

// Inverse of format_instruction for inputs free of the separator token.
// Throws kMalformedInput.
InstructionParts parse_instruction(std::string_view text);

enum class Augmentation { kReverseWords, kLowercase, kUppercase, kRepeatChars, kPerturbPunctWs };

inline constexpr std::array<Augmentation, 5> kAllAugmentations = {
    Augmentation::kReverseWords, Augmentation::kLowercase, Augmentation::kUppercase, Augmentation::kRepeatChars,
    Augmentation::kPerturbPunctWs};

std::string_view to_string(Augmentation a);
std::optional<Augmentation> parse_augmentation(std::string_view text);

struct AugmentOptions {
  // Chance that repeat_chars doubles a given non-space character.
  double repeat_char_prob = 0.1;
  // Per-gap chance that perturb_punct_ws inserts or deletes a space.
  double whitespace_prob = 0.1;
  // Chance that perturb_punct_ws doubles trailing punctuation.
  double punctuation_prob = 0.5;
};

std::string augment(std::string_view prompt, Augmentation transform, rng::CounterStream& rng,
                    const AugmentOptions& options = {});

using AugmentationPlan = std::map<Augmentation, double>;

// Each sample independently receives each transform (in kAllAugmentations
// order) with its probability. Sample i draws from a stream keyed by
// (seed, i).
std::vector<Sample> apply_augmentation_plan(std::vector<Sample> samples, const AugmentationPlan& probabilities,
                                            std::uint64_t seed, const AugmentOptions& options = {});

// Jaccard index over lowercased whitespace tokens; two empty prompts are
// identical (1).
double jaccard_tokens(std::string_view a, std::string_view b);

using SimilarityFn = std::function<double(std::size_t, std::size_t)>;

// Greedy pass in input order keeping a sample only when its similarity to
// every kept sample is below `threshold`. Throws kConfigError unless
// threshold is in [0, 1].
std::vector<Sample> dedup(std::span<const Sample> samples, double threshold, const SimilarityFn& similarity);
std::vector<Sample> dedup_jaccard(std::span<const Sample> samples, double threshold);

// Embedding similarity from an external process: it receives
// {"op":"embed","texts":[...]} on standard input and prints one
// {"embedding":[...]} line per text. Similarity is cosine.
std::vector<Sample> dedup_external(std::span<const Sample> samples, double threshold, const std::string& command);

std::string render_generation_prompt(const Policy& policy, SampleKind kind, Label target_label, std::int64_t count);

// One subprocess per (label, kind) bucket with a nonzero count. The process
// reads one request line {"count","kind","label","prompt"} and must print
// `count` lines {"prompt":...,"rationale":...}. Safe prompts use all four
// kinds; unsafe prompts skip kInapplicable.
std::vector<Sample> generate_via_adapter(const Policy& policy, const CountAllocation& allocation,
                                         const std::string& adapter_command);

std::string render_refinement_prompt(const Policy& policy, std::span<const Sample> samples);

// Sends {"prompt": <refinement prompt>, "count": n, "op": "refine"} and
// expects n lines {"label": "safe"|"unsafe"} in sample order.
std::vector<Label> refine_labels_via_adapter(const Policy& policy, std::span<const Sample> samples,
                                             const std::string& adapter_command);

}  // namespace gmerge::sdg
