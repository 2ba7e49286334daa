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

#include "gmerge/config.hpp"

#include <cmath>
#include <initializer_list>
#include <string_view>

#include "gmerge/error.hpp"

namespace gmerge::cli {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::kConfigError, path + ": " + what);
}

const json& object_at(const json& doc, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!doc.is_object()) bad(path, "expected an object");
  for (const auto& [key, _] : doc.items()) {
    bool known = false;
    for (std::string_view a : allowed) known = known || key == a;
    if (!known) bad(path.empty() ? key : path + "." + key, "unknown key");
  }
  return doc;
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

// Each reader leaves `target` untouched when the key is absent.
void read(const json& doc, const std::string& path, std::string_view key, std::string& target) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  if (!it->is_string()) bad(join(path, key), "expected a string");
  target = it->get<std::string>();
}

void read(const json& doc, const std::string& path, std::string_view key, bool& target) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  if (!it->is_boolean()) bad(join(path, key), "expected true or false");
  target = it->get<bool>();
}

void read(const json& doc, const std::string& path, std::string_view key, double& target) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  if (!it->is_number()) bad(join(path, key), "expected a number");
  target = it->get<double>();
  if (!std::isfinite(target)) bad(join(path, key), "must be finite");
}

std::uint64_t as_unsigned(const json& value, const std::string& path) {
  if (!value.is_number_integer() || (value.is_number_integer() && !value.is_number_unsigned() &&
                                     value.get<std::int64_t>() < 0)) {
    bad(path, "expected a non-negative integer");
  }
  return value.get<std::uint64_t>();
}

void read(const json& doc, const std::string& path, std::string_view key, std::uint64_t& target) {
  auto it = doc.find(key);
  if (it != doc.end()) target = as_unsigned(*it, join(path, key));
}

void read(const json& doc, const std::string& path, std::string_view key, int& target) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  const std::uint64_t v = as_unsigned(*it, join(path, key));
  if (v > 1'000'000'000ULL) bad(join(path, key), "too large");
  target = static_cast<int>(v);
}

void read(const json& doc, const std::string& path, std::string_view key, std::optional<double>& target) {
  double v = 0.0;
  if (!doc.contains(key)) return;
  read(doc, path, key, v);
  target = v;
}

void read(const json& doc, const std::string& path, std::string_view key, std::optional<std::int64_t>& target) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  target = static_cast<std::int64_t>(as_unsigned(*it, join(path, key)));
}

void read(const json& doc, const std::string& path, std::string_view key, std::vector<std::string>& target) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  if (!it->is_array()) bad(join(path, key), "expected a list of strings");
  target.clear();
  for (const json& v : *it) {
    if (!v.is_string()) bad(join(path, key), "expected a list of strings");
    target.push_back(v.get<std::string>());
  }
}

void read(const json& doc, const std::string& path, std::string_view key, std::vector<double>& target) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  if (!it->is_array()) bad(join(path, key), "expected a list of numbers");
  target.clear();
  for (const json& v : *it) {
    if (!v.is_number()) bad(join(path, key), "expected a list of numbers");
    target.push_back(v.get<double>());
  }
}

template <typename T, typename Parse>
void read_enum(const json& doc, const std::string& path, std::string_view key, T& target, Parse parse) {
  std::string text;
  if (!doc.contains(key)) return;
  read(doc, path, key, text);
  auto parsed = parse(text);
  if (!parsed) bad(join(path, key), "unknown value '" + text + "'");
  target = *parsed;
}

void require_probability(double p, const std::string& path) {
  if (!(p >= 0.0 && p <= 1.0)) bad(path, "must be in [0, 1]");
}

std::optional<TrainingLoss> parse_training_loss(std::string_view text) {
  if (text == "ce") return TrainingLoss::kCrossEntropy;
  if (text == "ce+vat") return TrainingLoss::kCrossEntropyPlusVat;
  return std::nullopt;
}

std::string_view to_string(TrainingLoss loss) {
  return loss == TrainingLoss::kCrossEntropy ? "ce" : "ce+vat";
}

void read_io(const json& doc, IoConfig& io) {
  const std::string p = "io";
  object_at(doc, p, {"models", "init", "model", "in", "out", "out_dir", "report", "policy", "allow_nonfinite"});
  read(doc, p, "models", io.models);
  read(doc, p, "init", io.init);
  read(doc, p, "model", io.model);
  read(doc, p, "in", io.in);
  read(doc, p, "out", io.out);
  read(doc, p, "out_dir", io.out_dir);
  read(doc, p, "report", io.report);
  read(doc, p, "policy", io.policy);
  read(doc, p, "allow_nonfinite", io.allow_nonfinite);
}

void read_merge(const json& doc, MergeSpec& m) {
  const std::string p = "merge";
  object_at(doc, p,
            {"algo", "weights", "tau", "k", "ties_per_tensor", "lambda", "p", "t", "eps", "sign_mode",
             "disjoint_mode", "carrier"});
  read_enum(doc, p, "algo", m.algorithm, parse_algorithm);
  read(doc, p, "weights", m.weights);
  read_enum(doc, p, "tau", m.tau, parse_merge_type);
  read(doc, p, "k", m.ties_k);
  read(doc, p, "ties_per_tensor", m.ties_per_tensor);
  read(doc, p, "lambda", m.lambda);
  read(doc, p, "p", m.dare_p);
  read(doc, p, "t", m.slerp_t);
  read(doc, p, "eps", m.collinear_eps);
  read_enum(doc, p, "sign_mode", m.sign_mode, parse_sign_mode);
  read_enum(doc, p, "disjoint_mode", m.disjoint_mode, parse_disjoint_mode);
  read(doc, p, "carrier", m.carrier);

  // Everything that does not depend on the model count is checked now.
  if (!m.weights.empty()) validate_weights(m.weights);
  MergeSpec probe = m;
  probe.algorithm = Algorithm::kSoup;
  probe.weights = uniform_weights(2);
  probe.carrier = 0;
  probe.validate(2);
}

void read_search(const json& doc, SearchConfig& s) {
  const std::string p = "search";
  object_at(doc, p,
            {"sampler", "update_rule", "iterations", "top_k", "epsilon", "tau_sampling", "fbest_timing", "taus"});
  read_enum(doc, p, "sampler", s.sampler, parse_sampler);
  read_enum(doc, p, "update_rule", s.update_rule, parse_update_rule);
  read(doc, p, "iterations", s.iterations);
  read(doc, p, "top_k", s.top_k_models);
  read(doc, p, "epsilon", s.epsilon);
  read_enum(doc, p, "tau_sampling", s.tau_sampling, parse_tau_sampling);
  read_enum(doc, p, "fbest_timing", s.fbest_timing, parse_fbest_timing);
  if (doc.contains("taus")) {
    std::vector<std::string> names;
    read(doc, p, "taus", names);
    s.taus.clear();
    for (const auto& name : names) {
      auto tau = parse_merge_type(name);
      if (!tau) bad("search.taus", "unknown merge type '" + name + "'");
      for (MergeType seen : s.taus) {
        if (seen == *tau) bad("search.taus", "duplicate merge type '" + name + "'");
      }
      s.taus.push_back(*tau);
    }
  }
  s.validate();
}

void read_groups(const json& doc, GroupRules& rules) {
  object_at(doc, "groups", {"patterns"});
  auto it = doc.find("patterns");
  if (it == doc.end()) return;
  if (!it->is_array()) bad("groups.patterns", "expected a list");
  rules.patterns.clear();
  for (std::size_t i = 0; i < it->size(); ++i) {
    const std::string p = "groups.patterns[" + std::to_string(i) + "]";
    const json& entry = object_at((*it)[i], p, {"label", "pattern"});
    GroupPattern gp{GroupLabel::kOther, ""};
    if (!entry.contains("label") || !entry.contains("pattern")) bad(p, "needs 'label' and 'pattern'");
    read_enum(entry, p, "label", gp.label, parse_group_label);
    read(entry, p, "pattern", gp.pattern);
    if (gp.pattern.empty()) bad(p, "pattern must be nonempty");
    rules.patterns.push_back(std::move(gp));
  }
}

void read_train(const json& doc, TrainOptions& t) {
  const std::string p = "train";
  object_at(doc, p, {"epochs", "lr", "loss", "alpha", "vat_eps", "vat_steps"});
  read(doc, p, "epochs", t.epochs);
  read(doc, p, "lr", t.learning_rate);
  read_enum(doc, p, "loss", t.loss, parse_training_loss);
  read(doc, p, "alpha", t.weights.alice_alpha);
  read(doc, p, "vat_eps", t.weights.vat_eps);
  read(doc, p, "vat_steps", t.vat_steps);
  if (t.epochs < 1) bad("train.epochs", "must be >= 1");
  if (!(t.learning_rate > 0.0)) bad("train.lr", "must be > 0");
  if (!(t.weights.alice_alpha >= 0.0)) bad("train.alpha", "must be >= 0");
  if (!(t.weights.vat_eps > 0.0)) bad("train.vat_eps", "must be > 0");
  if (t.vat_steps < 1) bad("train.vat_steps", "must be >= 1");
}

void read_sdg(const json& doc, SdgConfig& s) {
  const std::string p = "sdg";
  object_at(doc, p,
            {"total", "rd", "ri", "rp", "probs", "repeat_char_prob", "whitespace_prob", "punctuation_prob",
             "threshold", "adapter", "embed_command", "refine"});
  read(doc, p, "total", s.total);
  read(doc, p, "rd", s.rd);
  read(doc, p, "ri", s.ri);
  read(doc, p, "rp", s.rp);
  for (const auto* r : {&s.rd, &s.ri, &s.rp}) {
    if (*r && !(**r >= 0.0)) bad(p, "ratios must be >= 0");
  }
  if (auto it = doc.find("probs"); it != doc.end()) {
    if (!it->is_object()) bad("sdg.probs", "expected an object of probabilities");
    s.probs.clear();
    for (const auto& [name, value] : it->items()) {
      auto a = sdg::parse_augmentation(name);
      if (!a) bad("sdg.probs." + name, "unknown augmentation");
      if (!value.is_number()) bad("sdg.probs." + name, "expected a number");
      require_probability(value.get<double>(), "sdg.probs." + name);
      s.probs[*a] = value.get<double>();
    }
  }
  read(doc, p, "repeat_char_prob", s.augment.repeat_char_prob);
  read(doc, p, "whitespace_prob", s.augment.whitespace_prob);
  read(doc, p, "punctuation_prob", s.augment.punctuation_prob);
  read(doc, p, "threshold", s.threshold);
  read(doc, p, "adapter", s.adapter);
  read(doc, p, "embed_command", s.embed_command);
  read(doc, p, "refine", s.refine);
  require_probability(s.augment.repeat_char_prob, "sdg.repeat_char_prob");
  require_probability(s.augment.whitespace_prob, "sdg.whitespace_prob");
  require_probability(s.augment.punctuation_prob, "sdg.punctuation_prob");
  require_probability(s.threshold, "sdg.threshold");
}

}  // namespace

Config Config::from_json(const json& doc) {
  object_at(doc, "", {"seed", "evaluator", "timing", "io", "merge", "search", "groups", "train", "sdg"});
  Config c;
  read(doc, "", "seed", c.seed);
  read(doc, "", "evaluator", c.evaluator);
  read(doc, "", "timing", c.timing);
  try {
    if (doc.contains("io")) read_io(doc["io"], c.io);
    if (doc.contains("merge")) read_merge(doc["merge"], c.merge);
    if (doc.contains("search")) read_search(doc["search"], c.search);
    if (doc.contains("groups")) read_groups(doc["groups"], c.groups);
    if (doc.contains("train")) read_train(doc["train"], c.train);
    if (doc.contains("sdg")) read_sdg(doc["sdg"], c.sdg);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigError) throw;
    throw Error(ErrorCode::kConfigError, e.what());
  }
  c.merge.seed = c.seed;
  c.search.seed = c.seed;
  c.train.seed = c.seed;
  c.search.merge = c.merge;
  return c;
}

json Config::to_json() const {
  json patterns = json::array();
  for (const auto& gp : groups.patterns) {
    patterns.push_back({{"label", gmerge::to_string(gp.label)}, {"pattern", gp.pattern}});
  }
  json taus = json::array();
  for (MergeType tau : search.taus) taus.push_back(gmerge::to_string(tau));
  json probs = json::object();
  for (const auto& [a, p] : sdg.probs) probs[std::string(sdg::to_string(a))] = p;
  json sdg_json = {{"probs", probs},
                   {"repeat_char_prob", sdg.augment.repeat_char_prob},
                   {"whitespace_prob", sdg.augment.whitespace_prob},
                   {"punctuation_prob", sdg.augment.punctuation_prob},
                   {"threshold", sdg.threshold},
                   {"adapter", sdg.adapter},
                   {"embed_command", sdg.embed_command},
                   {"refine", sdg.refine}};
  if (sdg.total) sdg_json["total"] = *sdg.total;
  if (sdg.rd) sdg_json["rd"] = *sdg.rd;
  if (sdg.ri) sdg_json["ri"] = *sdg.ri;
  if (sdg.rp) sdg_json["rp"] = *sdg.rp;
  return {
      {"seed", seed},
      {"evaluator", evaluator},
      {"timing", timing},
      {"io",
       {{"models", io.models},
        {"init", io.init},
        {"model", io.model},
        {"in", io.in},
        {"out", io.out},
        {"out_dir", io.out_dir},
        {"report", io.report},
        {"policy", io.policy},
        {"allow_nonfinite", io.allow_nonfinite}}},
      {"merge",
       {{"algo", gmerge::to_string(merge.algorithm)},
        {"weights", merge.weights},
        {"tau", gmerge::to_string(merge.tau)},
        {"k", merge.ties_k},
        {"ties_per_tensor", merge.ties_per_tensor},
        {"lambda", merge.lambda},
        {"p", merge.dare_p},
        {"t", merge.slerp_t},
        {"eps", merge.collinear_eps},
        {"sign_mode", gmerge::to_string(merge.sign_mode)},
        {"disjoint_mode", gmerge::to_string(merge.disjoint_mode)},
        {"carrier", merge.carrier}}},
      {"search",
       {{"sampler", gmerge::to_string(search.sampler)},
        {"update_rule", gmerge::to_string(search.update_rule)},
        {"iterations", search.iterations},
        {"top_k", search.top_k_models},
        {"epsilon", search.epsilon},
        {"tau_sampling", gmerge::to_string(search.tau_sampling)},
        {"fbest_timing", gmerge::to_string(search.fbest_timing)},
        {"taus", taus}}},
      {"groups", {{"patterns", patterns}}},
      {"train",
       {{"epochs", train.epochs},
        {"lr", train.learning_rate},
        {"loss", to_string(train.loss)},
        {"alpha", train.weights.alice_alpha},
        {"vat_eps", train.weights.vat_eps},
        {"vat_steps", train.vat_steps}}},
      {"sdg", sdg_json},
  };
}

}  // namespace gmerge::cli
