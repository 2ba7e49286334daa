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

#include "gmerge/cli.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "gmerge/config.hpp"
#include "gmerge/error.hpp"
#include "gmerge/tensor_store.hpp"
#include "gmerge/toy_eval.hpp"
#include "json.hpp"

namespace gmerge::cli {
namespace {

using nlohmann::json;

enum class Kind { kString, kUint, kDouble, kBool, kPaths, kDoubles, kNames, kProbMap };

struct FlagDef {
  const char* name;  // without leading dashes
  const char* path;  // dotted path into the config document
  Kind kind;
  const char* help;
};

constexpr FlagDef kFlags[] = {
    {"seed", "seed", Kind::kUint, "Seed for every random stream"},
    {"models", "io.models", Kind::kPaths, "Input checkpoints"},
    {"init", "io.init", Kind::kString, "Shared initialization checkpoint (required for ties and dare)"},
    {"model", "io.model", Kind::kString, "Checkpoint to evaluate"},
    {"in", "io.in", Kind::kString, "Input file"},
    {"out", "io.out", Kind::kString, "Output file"},
    {"out-dir", "io.out_dir", Kind::kString, "Output directory"},
    {"report", "io.report", Kind::kString, "JSONL report path (default: standard output)"},
    {"policy", "io.policy", Kind::kString, "Policy JSON file"},
    {"allow-nonfinite", "io.allow_nonfinite", Kind::kBool, "Accept NaN/Inf values when loading"},
    {"algo", "merge.algo", Kind::kString, "soup | ties | dare | slerp"},
    {"weights", "merge.weights", Kind::kDoubles, "Comma-separated model weights summing to 1"},
    {"tau", "merge.tau", Kind::kString, "full | attention | ffn | base"},
    {"k", "merge.k", Kind::kDouble, "TIES: percent of task-vector entries kept"},
    {"ties-per-tensor", "merge.ties_per_tensor", Kind::kBool, "TIES: trim each tensor separately"},
    {"lambda", "merge.lambda", Kind::kDouble, "TIES/DARE: task-vector scale"},
    {"p", "merge.p", Kind::kDouble, "DARE: drop rate in [0, 1)"},
    {"t", "merge.t", Kind::kDouble, "SLERP: interpolation factor"},
    {"eps", "merge.eps", Kind::kDouble, "SLERP: collinearity threshold"},
    {"sign-mode", "merge.sign_mode", Kind::kString, "TIES: weighted | unweighted"},
    {"disjoint-mode", "merge.disjoint_mode", Kind::kString, "TIES: weighted_mean | plain_mean"},
    {"carrier", "merge.carrier", Kind::kUint, "Model whose unselected tensors are copied"},
    {"evaluator", "evaluator", Kind::kString, "toy:<json|path> | exec:<command> | optimum:<checkpoint>"},
    {"task", "evaluator", Kind::kString, "toy:<json|path> task spec (or any evaluator spec)"},
    {"timing", "timing", Kind::kBool, "Record wall-clock milliseconds in reports"},
    {"sampler", "search.sampler", Kind::kString, "thompson | epsilon_greedy | random"},
    {"update-rule", "search.update_rule", Kind::kString, "algorithm1 | expected_reward"},
    {"iterations", "search.iterations", Kind::kUint, "Evaluator calls in the search loop"},
    {"top-k", "search.top_k", Kind::kUint, "Number of top-ranked models searched over"},
    {"epsilon", "search.epsilon", Kind::kDouble, "Exploration rate for epsilon_greedy"},
    {"tau-sampling", "search.tau_sampling", Kind::kString, "argmax | categorical"},
    {"fbest-timing", "search.fbest_timing", Kind::kString, "pre | post"},
    {"taus", "search.taus", Kind::kNames, "Comma-separated merge types to search"},
    {"epochs", "train.epochs", Kind::kUint, "Training epochs"},
    {"lr", "train.lr", Kind::kDouble, "Learning rate"},
    {"loss", "train.loss", Kind::kString, "ce | ce+vat"},
    {"alpha", "train.alpha", Kind::kDouble, "Weight of the adversarial term"},
    {"vat-eps", "train.vat_eps", Kind::kDouble, "Perturbation radius"},
    {"vat-steps", "train.vat_steps", Kind::kUint, "Power-iteration steps"},
    {"total", "sdg.total", Kind::kUint, "Total samples per label"},
    {"rd", "sdg.rd", Kind::kDouble, "Diverse ratio"},
    {"ri", "sdg.ri", Kind::kDouble, "In-domain ratio"},
    {"rp", "sdg.rp", Kind::kDouble, "Inapplicable ratio"},
    {"probs", "sdg.probs", Kind::kProbMap, "Augmentation probabilities, e.g. lowercase=0.3,reverse_words=0.1"},
    {"repeat-char-prob", "sdg.repeat_char_prob", Kind::kDouble, "Per-character repeat probability"},
    {"whitespace-prob", "sdg.whitespace_prob", Kind::kDouble, "Per-space perturbation probability"},
    {"punctuation-prob", "sdg.punctuation_prob", Kind::kDouble, "Terminal punctuation doubling probability"},
    {"threshold", "sdg.threshold", Kind::kDouble, "Similarity at or above which a sample is dropped"},
    {"adapter", "sdg.adapter", Kind::kString, "Generation adapter command"},
    {"embed-command", "sdg.embed_command", Kind::kString, "Embedding command (default: token Jaccard)"},
    {"refine", "sdg.refine", Kind::kBool, "Ask the adapter to review labels after generation"},
};

const FlagDef& flag_def(std::string_view name) {
  for (const FlagDef& def : kFlags) {
    if (def.name == name) return def;
  }
  throw std::logic_error("unknown flag " + std::string(name));
}

[[noreturn]] void usage_error(const std::string& message) { throw Error(ErrorCode::kConfigError, message); }

double parse_double(const std::string& text, const std::string& flag) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) usage_error("--" + flag + ": '" + text + "' is not a number");
  return v;
}

std::uint64_t parse_uint(const std::string& text, const std::string& flag) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    usage_error("--" + flag + ": '" + text + "' is not a non-negative integer");
  }
  return v;
}

json flag_value(const FlagDef& def, const std::vector<std::string>& raw) {
  switch (def.kind) {
    case Kind::kString: return raw.back();
    case Kind::kUint: return parse_uint(raw.back(), def.name);
    case Kind::kDouble: return parse_double(raw.back(), def.name);
    case Kind::kBool: return true;
    case Kind::kPaths:
    case Kind::kNames: return raw;
    case Kind::kDoubles: {
      json list = json::array();
      for (const auto& v : raw) list.push_back(parse_double(v, def.name));
      return list;
    }
    case Kind::kProbMap: {
      json map = json::object();
      for (const auto& item : raw) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) usage_error("--probs: expected name=probability, got '" + item + "'");
        map[item.substr(0, eq)] = parse_double(item.substr(eq + 1), def.name);
      }
      return map;
    }
  }
  return nullptr;
}

void set_path(json& doc, std::string_view path, json value) {
  json* node = &doc;
  while (true) {
    const auto dot = path.find('.');
    const std::string key(path.substr(0, dot));
    if (!node->is_object()) usage_error("config section containing '" + key + "' is not an object");
    if (dot == std::string_view::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    path.remove_prefix(dot + 1);
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, path.string() + ": cannot open for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::kIoError, path.string() + ": read failed");
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorCode::kIoError, path.string() + ": write failed");
}

// Writes to `path`, or to `out` when `path` is empty.
void emit(const std::string& path, std::string_view text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_file(path, text);
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIoError, "SHA-256 computation failed");
  }
  std::ostringstream hex;
  hex << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < length; ++i) hex << std::setw(2) << static_cast<int>(digest[i]);
  return hex.str();
}

void require(bool present, const std::string& flag) {
  if (!present) usage_error("missing required option --" + flag);
}

std::string format_score(double score) {
  std::ostringstream s;
  s << std::setprecision(10) << score;
  return s.str();
}

LoadOptions load_options(const Config& cfg) { return LoadOptions{cfg.io.allow_nonfinite}; }

std::vector<TensorMap> load_models(const Config& cfg) {
  std::vector<TensorMap> models;
  for (const auto& path : cfg.io.models) models.push_back(load_checkpoint(path, load_options(cfg)));
  return models;
}

sdg::Policy load_policy(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedInput, path + ": " + e.what());
  }
  return sdg::Policy::from_json(doc);
}

std::vector<sdg::Sample> load_samples(const std::string& path) {
  try {
    return sdg::read_samples_jsonl(read_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

// ---- subcommands ----

int cmd_merge(const Config& cfg, std::ostream&, std::ostream&) {
  require(!cfg.io.models.empty(), "models");
  require(!cfg.io.out.empty(), "out");
  const auto models = load_models(cfg);
  TensorMap init;
  if (!cfg.io.init.empty()) init = load_checkpoint(cfg.io.init, load_options(cfg));
  MergeSpec spec = cfg.merge;
  if (spec.weights.empty()) spec.weights = uniform_weights(models.size());
  const TensorMap merged = apply_merge(models, cfg.io.init.empty() ? nullptr : &init, spec, cfg.groups);
  save_checkpoint(merged, cfg.io.out);
  return kExitOk;
}

int cmd_search(const Config& cfg, std::ostream& out, std::ostream& err) {
  require(!cfg.io.models.empty(), "models");
  require(!cfg.evaluator.empty(), "evaluator");
  const Evaluator evaluator = make_evaluator(cfg.evaluator);
  auto models = load_models(cfg);
  TensorMap init;
  if (!cfg.io.init.empty()) init = load_checkpoint(cfg.io.init, load_options(cfg));

  // Rank once up front; run_search then uses the leading top-k models and
  // the best single model carries the unselected tensors.
  const auto ranking = rank_models(models, evaluator);
  std::vector<TensorMap> ranked;
  json ranked_json = json::array();
  for (const RankedModel& r : ranking) {
    ranked.push_back(std::move(models[r.index]));
    ranked_json.push_back({{"path", cfg.io.models[r.index]}, {"score", r.score}});
    err << "rank " << ranked.size() << ": " << cfg.io.models[r.index] << " score " << format_score(r.score) << "\n";
  }

  SearchConfig search = cfg.search;
  search.merge = cfg.merge;
  search.merge.carrier = 0;
  search.merge.weights.clear();

  std::ofstream report_file;
  std::ostream* report = &out;
  if (!cfg.io.report.empty()) {
    report_file.open(cfg.io.report, std::ios::binary | std::ios::trunc);
    if (!report_file) throw Error(ErrorCode::kIoError, cfg.io.report + ": cannot open for writing");
    report = &report_file;
  }
  const SearchResult result =
      run_search(ranked, cfg.io.init.empty() ? nullptr : &init, evaluator, search, cfg.groups,
                 [&](const IterationRecord& record) { *report << report_line(record, cfg.timing) << "\n"; });
  report->flush();
  if (!*report) throw Error(ErrorCode::kIoError, "failed writing report");

  if (!cfg.io.out.empty()) save_checkpoint(result.best_params, cfg.io.out);
  const json summary = {{"best_score", result.best_score}, {"ranked_models", ranked_json}};
  if (!cfg.io.report.empty()) {
    out << summary.dump() << "\n";
  } else {
    err << "best score " << format_score(result.best_score) << "\n";
  }
  return kExitOk;
}

int cmd_eval(const Config& cfg, std::ostream& out, std::ostream&) {
  require(!cfg.io.model.empty(), "model");
  require(!cfg.evaluator.empty(), "task");
  const Evaluator evaluator = make_evaluator(cfg.evaluator);
  const TensorMap model = load_checkpoint(cfg.io.model, load_options(cfg));
  out << format_score(evaluator(model)) << "\n";
  return kExitOk;
}

int cmd_toy(const Config& cfg, std::ostream& out, std::ostream&) {
  require(!cfg.evaluator.empty(), "task");
  require(!cfg.io.out_dir.empty(), "out-dir");
  if (!cfg.evaluator.starts_with("toy:")) usage_error("--task must be a toy:<spec>");
  std::string body = cfg.evaluator.substr(4);
  json spec_json;
  try {
    spec_json = json::parse(body.starts_with("{") ? body : read_file(body));
  } catch (const json::exception& e) {
    usage_error(std::string("toy task spec: ") + e.what());
  }
  const TaskSpec spec = TaskSpec::from_json(spec_json);
  const SyntheticTask task = make_synthetic_task(spec);
  const std::filesystem::path dir(cfg.io.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, dir.string() + ": " + ec.message());

  TensorMap init = LinearModel::zeros(spec.dim).to_checkpoint();
  init.metadata()["role"] = "init";
  save_checkpoint(init, dir / "init.gm");
  out << (dir / "init.gm").string() << "\n";
  for (std::size_t i = 0; i < task.train_slices.size(); ++i) {
    TrainOptions options = cfg.train;
    options.seed = rng::derive_key(cfg.seed, {i});
    TensorMap model = train_linear(task.train_slices[i], options).to_checkpoint();
    model.metadata()["role"] = "slice";
    model.metadata()["slice"] = std::to_string(i);
    const auto path = dir / ("slice_" + std::to_string(i) + ".gm");
    save_checkpoint(model, path);
    out << path.string() << "\n";
  }
  return kExitOk;
}

int cmd_convert(const Config& cfg, std::ostream&, std::ostream&) {
  require(!cfg.io.in.empty(), "in");
  require(!cfg.io.out.empty(), "out");
  const std::string bytes = read_file(cfg.io.in);
  if (std::string_view(bytes).starts_with(kCheckpointMagic)) {
    TensorMap map;
    try {
      map = parse_checkpoint(bytes, load_options(cfg));
    } catch (const Error& e) {
      throw Error(e.code(), cfg.io.in + ": " + e.what());
    }
    write_file(cfg.io.out, tensors_to_json(map).dump() + "\n");
  } else {
    json doc;
    try {
      doc = json::parse(bytes);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedInput, cfg.io.in + ": neither a checkpoint nor JSON: " + e.what());
    }
    save_checkpoint(tensors_from_json(doc), cfg.io.out);
  }
  return kExitOk;
}

int cmd_inspect(const Config& cfg, bool as_json, std::ostream& out, std::ostream&) {
  require(!cfg.io.in.empty(), "in");
  const std::string bytes = read_file(cfg.io.in);
  TensorMap map;
  try {
    map = parse_checkpoint(bytes, load_options(cfg));
  } catch (const Error& e) {
    throw Error(e.code(), cfg.io.in + ": " + e.what());
  }
  const std::string checksum = sha256_hex(bytes);
  if (as_json) {
    json tensors = json::array();
    for (const auto& [name, tensor] : map) {
      tensors.push_back({{"name", name},
                         {"shape", tensor.shape},
                         {"dtype", "f32"},
                         {"numel", tensor.numel()},
                         {"group", to_string(classify(name, cfg.groups))}});
    }
    const json doc = {{"path", cfg.io.in},
                      {"sha256", checksum},
                      {"parameters", map.parameter_count()},
                      {"tensors", tensors},
                      {"metadata", map.metadata()}};
    out << doc.dump() << "\n";
    return kExitOk;
  }
  out << "file: " << cfg.io.in << "\n";
  out << "sha256: " << checksum << "\n";
  out << "tensors: " << map.size() << "\n";
  out << "parameters: " << map.parameter_count() << "\n";
  for (const auto& [key, value] : map.metadata()) out << "metadata " << key << " = " << value << "\n";
  for (const auto& [name, tensor] : map) {
    out << "  " << name << "  " << shape_to_string(tensor.shape) << "  " << to_string(classify(name, cfg.groups))
        << "\n";
  }
  return kExitOk;
}

sdg::CountAllocation allocation_from(const Config& cfg) {
  require(cfg.sdg.total.has_value(), "total");
  require(cfg.sdg.rd.has_value(), "rd");
  require(cfg.sdg.ri.has_value(), "ri");
  require(cfg.sdg.rp.has_value(), "rp");
  return sdg::allocate_counts(*cfg.sdg.total, *cfg.sdg.rd, *cfg.sdg.ri, *cfg.sdg.rp);
}

int cmd_sdg_allocate(const Config& cfg, std::ostream& out, std::ostream&) {
  const auto a = allocation_from(cfg);
  const json doc = {{"total", a.total},
                    {"diverse", a.diverse},
                    {"in_domain", a.in_domain},
                    {"inapplicable", a.inapplicable},
                    {"jailbreak", a.jailbreak}};
  out << doc.dump() << "\n";
  return kExitOk;
}

int cmd_sdg_augment(const Config& cfg, std::ostream& out, std::ostream&) {
  require(!cfg.io.in.empty(), "in");
  const auto samples = load_samples(cfg.io.in);
  const auto augmented = sdg::apply_augmentation_plan(samples, cfg.sdg.probs, cfg.seed, cfg.sdg.augment);
  emit(cfg.io.out, sdg::write_samples_jsonl(augmented), out);
  return kExitOk;
}

int cmd_sdg_generate(const Config& cfg, std::ostream& out, std::ostream& err) {
  require(!cfg.io.policy.empty(), "policy");
  require(!cfg.sdg.adapter.empty(), "adapter");
  const auto allocation = allocation_from(cfg);
  const sdg::Policy policy = load_policy(cfg.io.policy);
  auto samples = sdg::generate_via_adapter(policy, allocation, cfg.sdg.adapter);
  if (cfg.sdg.refine) {
    const auto labels = sdg::refine_labels_via_adapter(policy, samples, cfg.sdg.adapter);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      flipped += samples[i].label != labels[i];
      samples[i].label = labels[i];
    }
    err << "refinement changed " << flipped << " of " << samples.size() << " labels\n";
  }
  emit(cfg.io.out, sdg::write_samples_jsonl(samples), out);
  return kExitOk;
}

int cmd_sdg_dedup(const Config& cfg, std::ostream& out, std::ostream& err) {
  require(!cfg.io.in.empty(), "in");
  const auto samples = load_samples(cfg.io.in);
  const auto kept = cfg.sdg.embed_command.empty()
                        ? sdg::dedup_jaccard(samples, cfg.sdg.threshold)
                        : sdg::dedup_external(samples, cfg.sdg.threshold, cfg.sdg.embed_command);
  err << "kept " << kept.size() << " of " << samples.size() << " samples\n";
  emit(cfg.io.out, sdg::write_samples_jsonl(kept), out);
  return kExitOk;
}

int cmd_sdg_format(const Config& cfg, std::ostream& out, std::ostream&) {
  require(!cfg.io.in.empty(), "in");
  require(!cfg.io.policy.empty(), "policy");
  const sdg::Policy policy = load_policy(cfg.io.policy);
  std::string text;
  for (const auto& s : load_samples(cfg.io.in)) {
    const json line = {{"text", sdg::format_instruction(policy.description, s.prompt, s.rationale)},
                       {"label", sdg::to_string(s.label)}};
    text += line.dump() + "\n";
  }
  emit(cfg.io.out, text, out);
  return kExitOk;
}

// ---- parsing ----

struct Command {
  CLI::App* app = nullptr;
  std::map<std::string, std::vector<std::string>> values;
  std::map<std::string, bool> flags;
  std::vector<const FlagDef*> defs;
  std::string config_path;
  bool dump_config = false;
  bool as_json = false;
  std::vector<std::string> positional;
  std::function<int(const Config&, std::ostream&, std::ostream&)> handler;
};

void add_flags(Command& cmd, std::initializer_list<const char*> names) {
  for (const char* name : {"seed"}) cmd.defs.push_back(&flag_def(name));
  for (const char* name : names) cmd.defs.push_back(&flag_def(name));
  cmd.app->add_option("--config", cmd.config_path, "JSON config file; flags override its values");
  cmd.app->add_flag("--dump-config", cmd.dump_config, "Print the resolved configuration and exit");
  for (const FlagDef* def : cmd.defs) {
    const std::string flag = std::string("--") + def->name;
    if (def->kind == Kind::kBool) {
      cmd.app->add_flag(flag, cmd.flags[def->name], def->help);
      continue;
    }
    auto* opt = cmd.app->add_option(flag, cmd.values[def->name], def->help);
    switch (def->kind) {
      case Kind::kPaths: opt->expected(1, CLI::detail::expected_max_vector_size)->type_name("PATH"); break;
      case Kind::kDoubles: opt->expected(1, CLI::detail::expected_max_vector_size)->delimiter(',')->type_name("FLOAT,..."); break;
      case Kind::kNames: opt->expected(1, CLI::detail::expected_max_vector_size)->delimiter(',')->type_name("NAME,..."); break;
      case Kind::kProbMap: opt->expected(1, CLI::detail::expected_max_vector_size)->delimiter(',')->type_name("NAME=P,..."); break;
      case Kind::kUint: opt->expected(1)->type_name("UINT"); break;
      case Kind::kDouble: opt->expected(1)->type_name("FLOAT"); break;
      default: opt->expected(1); break;
    }
  }
}

json resolve_document(const Command& cmd) {
  json doc = json::object();
  if (!cmd.config_path.empty()) {
    std::string text;
    try {
      text = read_file(cmd.config_path);
      doc = json::parse(text);
    } catch (const json::exception& e) {
      usage_error(cmd.config_path + ": " + e.what());
    } catch (const Error& e) {
      usage_error(e.what());
    }
    if (!doc.is_object()) usage_error(cmd.config_path + ": config must be a JSON object");
  }
  for (const FlagDef* def : cmd.defs) {
    const std::string flag = std::string("--") + def->name;
    if (cmd.app->count(flag) == 0) continue;
    try {
      if (def->kind == Kind::kBool) {
        set_path(doc, def->path, true);
      } else {
        set_path(doc, def->path, flag_value(*def, cmd.values.at(def->name)));
      }
    } catch (const json::exception& e) {
      usage_error(flag + ": " + e.what());
    }
  }
  if (!cmd.positional.empty()) set_path(doc, "io.in", cmd.positional.back());
  return doc;
}

std::string command_path(const CLI::App* app) {
  std::string path = app->get_name();
  for (const CLI::App* p = app->get_parent(); p != nullptr; p = p->get_parent()) path = p->get_name() + " " + path;
  return path;
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfigError:
    case ErrorCode::kInvalidSpec:
    case ErrorCode::kInvalidDropRate:
    case ErrorCode::kRatioOverflow:
      return kExitUsage;
    case ErrorCode::kEvaluatorFailure:
    case ErrorCode::kAdapterExit:
    case ErrorCode::kMalformedAdapterOutput:
    case ErrorCode::kCountShortfall:
      return kExitExternal;
    default:
      return kExitData;
  }
}

Evaluator make_evaluator(const std::string& spec) {
  if (spec.starts_with("exec:")) {
    const std::string command = spec.substr(5);
    if (command.empty()) usage_error("exec evaluator needs a command");
    return make_exec_evaluator(command);
  }
  if (spec.starts_with("optimum:")) {
    return known_optimum_evaluator(load_checkpoint(spec.substr(8)));
  }
  if (spec.starts_with("toy:")) {
    const std::string body = spec.substr(4);
    json doc;
    try {
      doc = json::parse(body.starts_with("{") ? body : read_file(body));
    } catch (const json::exception& e) {
      usage_error(std::string("toy task spec: ") + e.what());
    }
    return classifier_evaluator(make_synthetic_task(TaskSpec::from_json(doc)).validation);
  }
  usage_error("evaluator must be toy:<spec>, exec:<command> or optimum:<checkpoint>, got '" + spec + "'");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Checkpoint merging and bandit merge search", "gmerge"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::vector<std::unique_ptr<Command>> commands;
  auto make = [&](CLI::App* parent, const char* name, const char* description) -> Command& {
    auto cmd = std::make_unique<Command>();
    cmd->app = parent->add_subcommand(name, description);
    commands.push_back(std::move(cmd));
    return *commands.back();
  };

  Command& merge = make(&app, "merge", "Merge checkpoints with soup, ties, dare or slerp");
  add_flags(merge, {"models", "init", "out", "algo", "weights", "tau", "k", "ties-per-tensor", "lambda", "p", "t",
                    "eps", "sign-mode", "disjoint-mode", "carrier", "allow-nonfinite"});
  merge.handler = cmd_merge;

  Command& search = make(&app, "search", "Bandit search over merge weights and merge types");
  add_flags(search, {"models", "init", "out", "report", "evaluator", "sampler", "update-rule", "iterations", "top-k",
                     "epsilon", "tau-sampling", "fbest-timing", "taus", "timing", "algo", "k", "ties-per-tensor",
                     "lambda", "p", "eps", "sign-mode", "disjoint-mode", "allow-nonfinite"});
  search.handler = cmd_search;

  Command& eval = make(&app, "eval", "Score one checkpoint");
  add_flags(eval, {"model", "task", "allow-nonfinite"});
  eval.handler = cmd_eval;

  Command& toy = make(&app, "toy", "Train per-slice toy classifiers and a zero init");
  add_flags(toy, {"task", "out-dir", "epochs", "lr", "loss", "alpha", "vat-eps", "vat-steps"});
  toy.handler = cmd_toy;

  Command& convert = make(&app, "convert", "Convert between checkpoints and plain JSON tensor dumps");
  add_flags(convert, {"in", "out", "allow-nonfinite"});
  convert.handler = cmd_convert;

  Command& inspect = make(&app, "inspect", "Summarize a checkpoint");
  add_flags(inspect, {"in", "allow-nonfinite"});
  inspect.app->add_option("path", inspect.positional, "Checkpoint file (same as --in)")->expected(1);
  inspect.app->add_flag("--json", inspect.as_json, "Emit one JSON object");
  inspect.handler = [&inspect](const Config& cfg, std::ostream& o, std::ostream& e) {
    return cmd_inspect(cfg, inspect.as_json, o, e);
  };

  CLI::App* sdg_app = app.add_subcommand("sdg", "Synthetic guardrail data tools");
  sdg_app->require_subcommand(1);
  Command& allocate = make(sdg_app, "allocate", "Split a sample budget across kinds");
  add_flags(allocate, {"total", "rd", "ri", "rp"});
  allocate.handler = cmd_sdg_allocate;
  Command& augment = make(sdg_app, "augment", "Apply seeded text augmentations");
  add_flags(augment, {"in", "out", "probs", "repeat-char-prob", "whitespace-prob", "punctuation-prob"});
  augment.handler = cmd_sdg_augment;
  Command& generate = make(sdg_app, "generate", "Generate samples through an adapter command");
  add_flags(generate, {"policy", "adapter", "total", "rd", "ri", "rp", "out", "refine"});
  generate.handler = cmd_sdg_generate;
  Command& dedup = make(sdg_app, "dedup", "Drop near-duplicate samples");
  add_flags(dedup, {"in", "out", "threshold", "embed-command"});
  dedup.handler = cmd_sdg_dedup;
  Command& format = make(sdg_app, "format", "Render samples as instruction text");
  add_flags(format, {"in", "policy", "out"});
  format.handler = cmd_sdg_format;

  std::vector<std::string> argv_storage{"gmerge"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    CLI::App* target = &app;
    for (const auto& cmd : commands) {
      if (cmd->app->parsed()) target = cmd->app;
    }
    if (target == &app && sdg_app->parsed()) target = sdg_app;
    out << target->help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    CLI::App* target = sdg_app->parsed() ? sdg_app : &app;
    for (const auto& cmd : commands) {
      if (cmd->app->parsed()) target = cmd->app;
    }
    err << target->help();
    return kExitUsage;
  }

  Command* selected = nullptr;
  for (const auto& cmd : commands) {
    if (cmd->app->parsed()) selected = cmd.get();
  }
  if (selected == nullptr) return kExitUsage;

  try {
    const Config cfg = Config::from_json(resolve_document(*selected));
    if (selected->dump_config) {
      out << cfg.to_json().dump(2) << "\n";
      return kExitOk;
    }
    return selected->handler(cfg, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    const int code = exit_code_for(e.code());
    if (code == kExitUsage) err << "usage: " << command_path(selected->app) << " [OPTIONS]\n" << selected->app->help();
    return code;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace gmerge::cli
