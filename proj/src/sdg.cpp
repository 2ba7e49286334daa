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

#include "gmerge/sdg.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "gmerge/error.hpp"
#include "gmerge/subprocess.hpp"

namespace gmerge::sdg {
namespace {

using nlohmann::json;

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string ascii_upper(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

// Length of the UTF-8 sequence starting at text[i]; malformed bytes count as
// single characters.
std::size_t utf8_length(std::string_view text, std::size_t i) {
  const auto lead = static_cast<unsigned char>(text[i]);
  std::size_t len = 1;
  if ((lead & 0xE0) == 0xC0) len = 2;
  else if ((lead & 0xF0) == 0xE0) len = 3;
  else if ((lead & 0xF8) == 0xF0) len = 4;
  if (i + len > text.size()) return 1;
  for (std::size_t k = 1; k < len; ++k) {
    if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) return 1;
  }
  return len;
}

bool is_terminal_punct(char c) { return c == '.' || c == '!' || c == '?' || c == ',' || c == ';' || c == ':'; }

std::string required_string(const json& doc, const char* key, const char* what) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_string()) {
    throw Error(ErrorCode::kMalformedInput, std::string(what) + " needs a string '" + key + "'");
  }
  return it->get<std::string>();
}

std::vector<std::string> string_list(const json& doc, const char* key) {
  std::vector<std::string> out;
  auto it = doc.find(key);
  if (it == doc.end()) return out;
  if (!it->is_array()) throw Error(ErrorCode::kMalformedInput, std::string("policy '") + key + "' must be a list");
  for (const json& v : *it) {
    if (!v.is_string()) throw Error(ErrorCode::kMalformedInput, std::string("policy '") + key + "' entries must be strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

Label required_label(const json& doc, const char* what) {
  const std::string text = required_string(doc, "label", what);
  auto label = parse_label(text);
  if (!label) throw Error(ErrorCode::kMalformedInput, std::string(what) + " label '" + text + "' is not safe/unsafe");
  return *label;
}

std::vector<std::string> nonempty_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

// Runs the adapter and returns its nonempty output lines.
std::vector<std::string> call_adapter(const std::string& command, const json& request) {
  ProcessResult result;
  try {
    result = run_process(command, request.dump() + "\n");
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kAdapterExit, std::string("cannot start adapter: ") + e.what());
  }
  if (result.exit_code != 0) {
    throw Error(ErrorCode::kAdapterExit, "adapter exited with status " + std::to_string(result.exit_code));
  }
  return nonempty_lines(result.output);
}

json parse_adapter_line(const std::string& line, std::size_t line_number) {
  try {
    json doc = json::parse(line);
    if (!doc.is_object()) throw json::type_error::create(302, "line is not a JSON object", nullptr);
    return doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedAdapterOutput, "line " + std::to_string(line_number) + ": " + e.what());
  }
}

}  // namespace

std::string_view to_string(Label label) { return label == Label::kSafe ? "safe" : "unsafe"; }

std::string_view to_string(SampleKind kind) {
  switch (kind) {
    case SampleKind::kDiverse: return "diverse";
    case SampleKind::kInDomain: return "in_domain";
    case SampleKind::kInapplicable: return "inapplicable";
    case SampleKind::kJailbreak: return "jailbreak";
  }
  return "diverse";
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "safe") return Label::kSafe;
  if (text == "unsafe") return Label::kUnsafe;
  return std::nullopt;
}

std::optional<SampleKind> parse_kind(std::string_view text) {
  for (auto k : {SampleKind::kDiverse, SampleKind::kInDomain, SampleKind::kInapplicable, SampleKind::kJailbreak}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

void Policy::validate() const {
  if (name.empty()) throw Error(ErrorCode::kMalformedInput, "policy name must be nonempty");
  if (description.empty()) throw Error(ErrorCode::kMalformedInput, "policy description must be nonempty");
  const std::set<std::string> allowed_set(allowed.begin(), allowed.end());
  for (const auto& d : disallowed) {
    if (allowed_set.contains(d)) {
      throw Error(ErrorCode::kMalformedInput, "behavior '" + d + "' is both allowed and disallowed");
    }
  }
}

Policy Policy::from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kMalformedInput, "policy must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "name" && key != "description" && key != "allowed" && key != "disallowed" && key != "examples") {
      throw Error(ErrorCode::kMalformedInput, "unknown policy key '" + key + "'");
    }
  }
  Policy p;
  p.name = required_string(doc, "name", "policy");
  p.description = required_string(doc, "description", "policy");
  p.allowed = string_list(doc, "allowed");
  p.disallowed = string_list(doc, "disallowed");
  if (auto it = doc.find("examples"); it != doc.end()) {
    if (!it->is_array()) throw Error(ErrorCode::kMalformedInput, "policy 'examples' must be a list");
    for (const json& ex : *it) {
      if (!ex.is_object()) throw Error(ErrorCode::kMalformedInput, "policy example must be an object");
      p.examples.push_back({required_string(ex, "prompt", "policy example"), required_label(ex, "policy example")});
    }
  }
  p.validate();
  return p;
}

json Policy::to_json() const {
  json examples_json = json::array();
  for (const auto& ex : examples) examples_json.push_back({{"prompt", ex.prompt}, {"label", to_string(ex.label)}});
  return {{"name", name},
          {"description", description},
          {"allowed", allowed},
          {"disallowed", disallowed},
          {"examples", examples_json}};
}

Sample Sample::from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kMalformedInput, "sample must be a JSON object");
  Sample s;
  s.prompt = required_string(doc, "prompt", "sample");
  if (s.prompt.empty()) throw Error(ErrorCode::kMalformedInput, "sample prompt must be nonempty");
  if (doc.contains("rationale")) s.rationale = required_string(doc, "rationale", "sample");
  s.label = required_label(doc, "sample");
  if (doc.contains("kind")) {
    const std::string kind = required_string(doc, "kind", "sample");
    auto parsed = parse_kind(kind);
    if (!parsed) throw Error(ErrorCode::kMalformedInput, "unknown sample kind '" + kind + "'");
    s.kind = *parsed;
  }
  if (doc.contains("policy")) s.policy = required_string(doc, "policy", "sample");
  return s;
}

json Sample::to_json() const {
  return {{"prompt", prompt},
          {"rationale", rationale},
          {"label", to_string(label)},
          {"kind", to_string(kind)},
          {"policy", policy}};
}

std::vector<Sample> read_samples_jsonl(std::string_view text) {
  std::vector<Sample> samples;
  std::size_t line_number = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_number;
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      samples.push_back(Sample::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedInput, "samples line " + std::to_string(line_number) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::kMalformedInput, "samples line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return samples;
}

std::string write_samples_jsonl(std::span<const Sample> samples) {
  std::string out;
  for (const auto& s : samples) {
    out += s.to_json().dump();
    out += '\n';
  }
  return out;
}

std::int64_t CountAllocation::count(SampleKind kind) const {
  switch (kind) {
    case SampleKind::kDiverse: return diverse;
    case SampleKind::kInDomain: return in_domain;
    case SampleKind::kInapplicable: return inapplicable;
    case SampleKind::kJailbreak: return jailbreak;
  }
  return 0;
}

CountAllocation allocate_counts(std::int64_t total, double r_diverse, double r_in_domain, double r_inapplicable) {
  if (total < 0) throw Error(ErrorCode::kConfigError, "total must be >= 0");
  for (double r : {r_diverse, r_in_domain, r_inapplicable}) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw Error(ErrorCode::kConfigError, "ratios must be finite and >= 0");
  }
  // std::llround rounds halves away from zero.
  const auto part = [total](double r) { return static_cast<std::int64_t>(std::llround(r * static_cast<double>(total))); };
  CountAllocation a;
  a.total = total;
  a.diverse = part(r_diverse);
  a.in_domain = part(r_in_domain);
  a.inapplicable = part(r_inapplicable);
  const std::int64_t used = a.diverse + a.in_domain + a.inapplicable;
  if (used > total) {
    throw Error(ErrorCode::kRatioOverflow, "rounded parts " + std::to_string(a.diverse) + "+" +
                                               std::to_string(a.in_domain) + "+" + std::to_string(a.inapplicable) +
                                               " exceed total " + std::to_string(total));
  }
  a.jailbreak = total - used;
  return a;
}

std::string format_instruction(std::string_view policy_description, std::string_view query,
                               std::string_view rationale) {
  if (policy_description.empty()) throw Error(ErrorCode::kEmptyField, "policy description is empty");
  if (query.empty()) throw Error(ErrorCode::kEmptyField, "query is empty");
  std::string out = "Instruct: ";
  out += policy_description;
  out += kSeparator;
  out += "\nQuery: ";
  out += query;
  out += kSeparator;
  if (!rationale.empty()) {
    out += ' ';
    out += rationale;
    out += ' ';
    out += kSeparator;
  }
  return out;
}

InstructionParts parse_instruction(std::string_view text) {
  constexpr std::string_view kInstruct = "Instruct: ";
  constexpr std::string_view kQuery = "\nQuery: ";
  auto fail = [] { throw Error(ErrorCode::kMalformedInput, "not a formatted instruction"); };
  if (!text.starts_with(kInstruct)) fail();
  text.remove_prefix(kInstruct.size());
  const auto sep1 = text.find(kSeparator);
  if (sep1 == std::string_view::npos) fail();
  InstructionParts parts;
  parts.description = std::string(text.substr(0, sep1));
  text.remove_prefix(sep1 + kSeparator.size());
  if (!text.starts_with(kQuery)) fail();
  text.remove_prefix(kQuery.size());
  const auto sep2 = text.find(kSeparator);
  if (sep2 == std::string_view::npos) fail();
  parts.query = std::string(text.substr(0, sep2));
  text.remove_prefix(sep2 + kSeparator.size());
  if (text.empty()) return parts;
  if (!text.starts_with(' ') || !text.ends_with(std::string(" ") + std::string(kSeparator)) ||
      text.size() < 2 + kSeparator.size() + 1) {
    fail();
  }
  parts.rationale = std::string(text.substr(1, text.size() - 2 - kSeparator.size()));
  return parts;
}

std::string_view to_string(Augmentation a) {
  switch (a) {
    case Augmentation::kReverseWords: return "reverse_words";
    case Augmentation::kLowercase: return "lowercase";
    case Augmentation::kUppercase: return "uppercase";
    case Augmentation::kRepeatChars: return "repeat_chars";
    case Augmentation::kPerturbPunctWs: return "perturb_punct_ws";
  }
  return "lowercase";
}

std::optional<Augmentation> parse_augmentation(std::string_view text) {
  for (auto a : kAllAugmentations) {
    if (to_string(a) == text) return a;
  }
  return std::nullopt;
}

std::string augment(std::string_view prompt, Augmentation transform, rng::CounterStream& rng,
                    const AugmentOptions& options) {
  switch (transform) {
    case Augmentation::kReverseWords: {
      auto tokens = split_whitespace(prompt);
      std::reverse(tokens.begin(), tokens.end());
      std::string out;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
      }
      return out;
    }
    case Augmentation::kLowercase: return ascii_lower(prompt);
    case Augmentation::kUppercase: return ascii_upper(prompt);
    case Augmentation::kRepeatChars: {
      std::string out;
      for (std::size_t i = 0; i < prompt.size();) {
        const std::size_t len = utf8_length(prompt, i);
        const std::string_view ch = prompt.substr(i, len);
        out += ch;
        if (!std::isspace(static_cast<unsigned char>(prompt[i])) && rng.uniform() < options.repeat_char_prob) {
          out += ch;
        }
        i += len;
      }
      return out;
    }
    case Augmentation::kPerturbPunctWs: {
      std::string out;
      for (char c : prompt) {
        if (c == ' ' && rng.uniform() < options.whitespace_prob) {
          // Delete or double the space with equal odds.
          if (rng.uniform() < 0.5) continue;
          out += ' ';
        }
        out += c;
      }
      if (!out.empty() && is_terminal_punct(out.back()) && rng.uniform() < options.punctuation_prob) {
        out += out.back();
      }
      return out;
    }
  }
  return std::string(prompt);
}

std::vector<Sample> apply_augmentation_plan(std::vector<Sample> samples, const AugmentationPlan& probabilities,
                                            std::uint64_t seed, const AugmentOptions& options) {
  for (const auto& [a, p] : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::kConfigError, "probability for " + std::string(to_string(a)) + " must be in [0, 1]");
    }
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    rng::CounterStream stream(rng::derive_key(seed, {i}));
    for (Augmentation a : kAllAugmentations) {
      auto it = probabilities.find(a);
      const double p = it == probabilities.end() ? 0.0 : it->second;
      // Always consume the coin so one transform's probability does not
      // shift the draws of the others.
      const double coin = stream.uniform();
      rng::CounterStream transform_stream = stream.child({static_cast<std::uint64_t>(a)});
      if (coin < p) samples[i].prompt = augment(samples[i].prompt, a, transform_stream, options);
    }
  }
  return samples;
}

double jaccard_tokens(std::string_view a, std::string_view b) {
  const auto ta = split_whitespace(ascii_lower(a));
  const auto tb = split_whitespace(ascii_lower(b));
  const std::set<std::string> sa(ta.begin(), ta.end());
  const std::set<std::string> sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.contains(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Sample> dedup(std::span<const Sample> samples, double threshold, const SimilarityFn& similarity) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::kConfigError, "threshold must be in [0, 1]");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const bool duplicate =
        std::any_of(kept.begin(), kept.end(), [&](std::size_t k) { return similarity(k, i) >= threshold; });
    if (!duplicate) kept.push_back(i);
  }
  std::vector<Sample> out;
  for (std::size_t k : kept) out.push_back(samples[k]);
  return out;
}

std::vector<Sample> dedup_jaccard(std::span<const Sample> samples, double threshold) {
  return dedup(samples, threshold,
               [&](std::size_t a, std::size_t b) { return jaccard_tokens(samples[a].prompt, samples[b].prompt); });
}

std::vector<Sample> dedup_external(std::span<const Sample> samples, double threshold, const std::string& command) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::kConfigError, "threshold must be in [0, 1]");
  if (samples.empty()) return {};
  json texts = json::array();
  for (const auto& s : samples) texts.push_back(s.prompt);
  const auto lines = call_adapter(command, {{"op", "embed"}, {"texts", texts}});
  if (lines.size() < samples.size()) {
    throw Error(ErrorCode::kCountShortfall, "expected " + std::to_string(samples.size()) + " embeddings, got " +
                                                std::to_string(lines.size()));
  }
  std::vector<std::vector<double>> embeddings;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const json doc = parse_adapter_line(lines[i], i + 1);
    auto it = doc.find("embedding");
    if (it == doc.end() || !it->is_array()) {
      throw Error(ErrorCode::kMalformedAdapterOutput, "line " + std::to_string(i + 1) + ": missing 'embedding'");
    }
    try {
      embeddings.push_back(it->get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedAdapterOutput, "line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  const auto cosine = [&](std::size_t a, std::size_t b) {
    const auto& u = embeddings[a];
    const auto& v = embeddings[b];
    if (u.size() != v.size()) throw Error(ErrorCode::kMalformedAdapterOutput, "embeddings differ in length");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      dot += u[k] * v[k];
      nu += u[k] * u[k];
      nv += v[k] * v[k];
    }
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return dot / (std::sqrt(nu) * std::sqrt(nv));
  };
  return dedup(samples, threshold, cosine);
}

std::string render_generation_prompt(const Policy& policy, SampleKind kind, Label target_label, std::int64_t count) {
  policy.validate();
  if (count < 1) throw Error(ErrorCode::kConfigError, "count must be >= 1");
  const bool safe = target_label == Label::kSafe;
  std::ostringstream out;
  out << "You are generating training data for a guardrail classifier.\n\n";
  out << "Policy name: " << policy.name << "\n";
  out << "Policy description: " << policy.description << "\n\n";
  out << "Allowed behaviors:\n";
  for (const auto& b : policy.allowed) out << "- " << b << "\n";
  if (policy.allowed.empty()) out << "(none listed)\n";
  out << "Disallowed behaviors:\n";
  for (const auto& b : policy.disallowed) out << "- " << b << "\n";
  if (policy.disallowed.empty()) out << "(none listed)\n";
  if (!policy.examples.empty()) {
    out << "Examples:\n";
    for (const auto& ex : policy.examples) out << "- [" << to_string(ex.label) << "] " << ex.prompt << "\n";
  }
  out << "\nTask: write " << count << (safe ? " compliant (safe)" : " non-compliant (unsafe)")
      << " user prompts of kind \"" << to_string(kind) << "\".\n";
  switch (kind) {
    case SampleKind::kDiverse:
      out << "Use the examples as seeds and vary topic, length, tone and phrasing as widely as possible.\n";
      break;
    case SampleKind::kInDomain:
      out << "Stay inside the policy's domain and exercise the "
          << (safe ? "allowed" : "disallowed") << " behaviors listed above.\n";
      break;
    case SampleKind::kInapplicable:
      out << "Write prompts on subjects outside the scope of this policy, so that the policy does not apply.\n";
      break;
    case SampleKind::kJailbreak:
      out << "Jailbreak framing: phrase each prompt the way jailbreak attempts are phrased, for example role-play, "
             "hypothetical scenarios, requests to ignore earlier instructions or obfuscated wording.\n";
      out << (safe ? "Despite the framing, the underlying request must comply with the policy.\n"
                   : "The underlying request must violate the policy.\n");
      break;
  }
  out << "For each prompt give a one-sentence rationale explaining why it is " << to_string(target_label)
      << " under this policy.\n";
  out << "Answer with exactly " << count
      << " lines, each a JSON object {\"prompt\": ..., \"rationale\": ...}, and nothing else.\n";
  return out.str();
}

std::vector<Sample> generate_via_adapter(const Policy& policy, const CountAllocation& allocation,
                                         const std::string& adapter_command) {
  policy.validate();
  std::vector<Sample> samples;
  for (Label label : {Label::kSafe, Label::kUnsafe}) {
    for (SampleKind kind :
         {SampleKind::kDiverse, SampleKind::kInDomain, SampleKind::kInapplicable, SampleKind::kJailbreak}) {
      if (label == Label::kUnsafe && kind == SampleKind::kInapplicable) continue;
      const std::int64_t n = allocation.count(kind);
      if (n <= 0) continue;
      const json request = {{"prompt", render_generation_prompt(policy, kind, label, n)},
                            {"count", n},
                            {"label", to_string(label)},
                            {"kind", to_string(kind)}};
      const auto lines = call_adapter(adapter_command, request);
      if (static_cast<std::int64_t>(lines.size()) < n) {
        throw Error(ErrorCode::kCountShortfall, std::string(to_string(label)) + "/" + std::string(to_string(kind)) +
                                                    ": expected " + std::to_string(n) + " samples, got " +
                                                    std::to_string(lines.size()));
      }
      for (std::int64_t i = 0; i < n; ++i) {
        const auto line_number = static_cast<std::size_t>(i) + 1;
        const json doc = parse_adapter_line(lines[static_cast<std::size_t>(i)], line_number);
        Sample s;
        auto prompt = doc.find("prompt");
        if (prompt == doc.end() || !prompt->is_string() || prompt->get<std::string>().empty()) {
          throw Error(ErrorCode::kMalformedAdapterOutput,
                      "line " + std::to_string(line_number) + ": 'prompt' must be a nonempty string");
        }
        s.prompt = prompt->get<std::string>();
        if (auto r = doc.find("rationale"); r != doc.end()) {
          if (!r->is_string()) {
            throw Error(ErrorCode::kMalformedAdapterOutput,
                        "line " + std::to_string(line_number) + ": 'rationale' must be a string");
          }
          s.rationale = r->get<std::string>();
        }
        s.label = label;
        s.kind = kind;
        s.policy = policy.name;
        samples.push_back(std::move(s));
      }
    }
  }
  return samples;
}

std::string render_refinement_prompt(const Policy& policy, std::span<const Sample> samples) {
  policy.validate();
  std::ostringstream out;
  out << "Review the labels assigned to prompts under the policy below and correct any that are wrong.\n\n";
  out << "Policy name: " << policy.name << "\n";
  out << "Policy description: " << policy.description << "\n";
  out << "Allowed behaviors:\n";
  for (const auto& b : policy.allowed) out << "- " << b << "\n";
  out << "Disallowed behaviors:\n";
  for (const auto& b : policy.disallowed) out << "- " << b << "\n";
  out << "\nLabelled prompts:\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out << i + 1 << ". [" << to_string(samples[i].label) << "] " << samples[i].prompt << "\n";
  }
  out << "\nAnswer with exactly " << samples.size()
      << " lines, in the same order, each a JSON object {\"label\": \"safe\" or \"unsafe\"}.\n";
  return out.str();
}

std::vector<Label> refine_labels_via_adapter(const Policy& policy, std::span<const Sample> samples,
                                             const std::string& adapter_command) {
  if (samples.empty()) return {};
  const json request = {{"op", "refine"},
                        {"prompt", render_refinement_prompt(policy, samples)},
                        {"count", samples.size()}};
  const auto lines = call_adapter(adapter_command, request);
  if (lines.size() < samples.size()) {
    throw Error(ErrorCode::kCountShortfall, "expected " + std::to_string(samples.size()) + " labels, got " +
                                                std::to_string(lines.size()));
  }
  std::vector<Label> labels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const json doc = parse_adapter_line(lines[i], i + 1);
    auto it = doc.find("label");
    std::optional<Label> label;
    if (it != doc.end() && it->is_string()) label = parse_label(it->get<std::string>());
    if (!label) {
      throw Error(ErrorCode::kMalformedAdapterOutput, "line " + std::to_string(i + 1) + ": 'label' must be safe/unsafe");
    }
    labels.push_back(*label);
  }
  return labels;
}

}  // namespace gmerge::sdg
