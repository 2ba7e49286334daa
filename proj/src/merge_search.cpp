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

#include "gmerge/merge_search.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <boost/random/beta_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <charconv>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

#include "gmerge/error.hpp"
#include "gmerge/subprocess.hpp"

namespace gmerge {
namespace {

using nlohmann::json;

constexpr std::uint64_t kIterationStream = 0x17E7A7104ULL;
constexpr std::uint64_t kDareStream = 0xDA7EULL;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> normalize_or_uniform(std::vector<double> w) {
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(sum > 0.0) || !std::isfinite(sum)) return uniform_weights(w.size());
  for (double& x : w) x /= sum;
  return w;
}

MergeType uniform_tau(rng::CounterStream& rng, std::span<const MergeType> taus) {
  const auto i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(taus.size()));
  return taus[std::min(i, taus.size() - 1)];
}

void require_taus(std::span<const MergeType> taus) {
  if (taus.empty()) throw Error(ErrorCode::kEmptySelection, "no candidate merge types");
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::string_view to_string(Sampler s) {
  switch (s) {
    case Sampler::kThompson: return "thompson";
    case Sampler::kEpsilonGreedy: return "epsilon_greedy";
    case Sampler::kRandom: return "random";
  }
  return "thompson";
}

std::string_view to_string(UpdateRule r) {
  return r == UpdateRule::kAlgorithm1 ? "algorithm1" : "expected_reward";
}

std::string_view to_string(TauSampling t) { return t == TauSampling::kArgmax ? "argmax" : "categorical"; }

std::string_view to_string(FbestTiming t) { return t == FbestTiming::kPre ? "pre" : "post"; }

std::optional<Sampler> parse_sampler(std::string_view text) {
  for (auto s : {Sampler::kThompson, Sampler::kEpsilonGreedy, Sampler::kRandom}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

std::optional<UpdateRule> parse_update_rule(std::string_view text) {
  for (auto r : {UpdateRule::kAlgorithm1, UpdateRule::kExpectedReward}) {
    if (to_string(r) == text) return r;
  }
  return std::nullopt;
}

std::optional<TauSampling> parse_tau_sampling(std::string_view text) {
  for (auto t : {TauSampling::kArgmax, TauSampling::kCategorical}) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

std::optional<FbestTiming> parse_fbest_timing(std::string_view text) {
  for (auto t : {FbestTiming::kPre, FbestTiming::kPost}) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

Evaluator make_exec_evaluator(std::string command) {
  auto counter = std::make_shared<std::atomic<std::uint64_t>>(0);
  return [command = std::move(command), counter](const TensorMap& candidate) -> double {
    const auto path = std::filesystem::temp_directory_path() /
                      ("gmerge-eval-" + std::to_string(::getpid()) + "-" + std::to_string(counter->fetch_add(1)) + ".gm");
    save_checkpoint(candidate, path);
    ProcessResult result;
    try {
      result = run_process(command + " " + shell_quote(path.string()));
    } catch (const std::exception& e) {
      std::filesystem::remove(path);
      throw Error(ErrorCode::kEvaluatorFailure, std::string("cannot run evaluator: ") + e.what());
    }
    std::filesystem::remove(path);
    if (result.exit_code != 0) {
      throw Error(ErrorCode::kEvaluatorFailure, "evaluator exited with status " + std::to_string(result.exit_code));
    }
    const std::string text = trim(result.output);
    double score = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), score);
    if (text.empty() || ec != std::errc() || end != text.data() + text.size()) {
      throw Error(ErrorCode::kEvaluatorFailure, "evaluator printed '" + text + "', expected one decimal");
    }
    if (!(score >= 0.0 && score <= 1.0)) {
      throw Error(ErrorCode::kEvaluatorFailure, "evaluator score " + text + " outside [0, 1]");
    }
    return score;
  };
}

BanditState BanditState::fresh(std::size_t n_models, TensorMap initial_best) {
  BanditState state;
  state.model_arms.assign(n_models, BetaArm{});
  state.best_params = std::move(initial_best);
  return state;
}

std::vector<double> posterior_mean_weights(const BanditState& state) {
  std::vector<double> means;
  for (const auto& arm : state.model_arms) means.push_back(arm.mean());
  return normalize_or_uniform(std::move(means));
}

void SearchConfig::validate() const {
  if (iterations < 1) throw Error(ErrorCode::kConfigError, "iterations must be >= 1");
  if (top_k_models < 1) throw Error(ErrorCode::kConfigError, "top_k_models must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error(ErrorCode::kConfigError, "epsilon must be in [0, 1]");
  if (taus.empty()) throw Error(ErrorCode::kConfigError, "at least one merge type is required");
}

SampledPoint thompson_sample(const BanditState& state, std::span<const MergeType> taus, TauSampling mode,
                             rng::CounterStream& rng) {
  require_taus(taus);
  SampledPoint point;
  point.weights.reserve(state.model_arms.size());
  for (const BetaArm& arm : state.model_arms) {
    boost::random::beta_distribution<double> dist(arm.alpha, arm.beta);
    point.weights.push_back(dist(rng));
  }
  point.weights = normalize_or_uniform(std::move(point.weights));

  if (mode == TauSampling::kArgmax) {
    double best = -1.0;
    for (MergeType tau : taus) {
      const BetaArm& arm = state.tau_arm(tau);
      boost::random::beta_distribution<double> dist(arm.alpha, arm.beta);
      const double draw = dist(rng);
      if (draw > best) {
        best = draw;
        point.tau = tau;
      }
    }
  } else {
    double total = 0.0;
    for (MergeType tau : taus) total += state.tau_arm(tau).mean();
    double u = rng.uniform() * total;
    point.tau = taus.back();
    for (MergeType tau : taus) {
      u -= state.tau_arm(tau).mean();
      if (u < 0.0) {
        point.tau = tau;
        break;
      }
    }
  }
  return point;
}

SampledPoint random_sample(rng::CounterStream& rng, std::size_t n_models, std::span<const MergeType> taus) {
  require_taus(taus);
  if (n_models == 0) throw Error(ErrorCode::kInvalidSpec, "at least one model is required");
  SampledPoint point;
  boost::random::gamma_distribution<double> gamma(1.0);
  for (std::size_t j = 0; j < n_models; ++j) point.weights.push_back(gamma(rng));
  point.weights = normalize_or_uniform(std::move(point.weights));
  point.tau = uniform_tau(rng, taus);
  return point;
}

SampledPoint epsilon_greedy_sample(const BanditState& state, double epsilon, std::span<const MergeType> taus,
                                   rng::CounterStream& rng) {
  const double coin = rng.uniform();
  if (state.history.empty() || coin < epsilon) return random_sample(rng, state.model_arms.size(), taus);
  const IterationRecord* best = &state.history.front();
  for (const auto& record : state.history) {
    if (record.score > best->score) best = &record;
  }
  return SampledPoint{best->weights, best->tau};
}

ArmIncrement algorithm1_increment(double score, double reference_best) {
  const double s = sigmoid(score - reference_best);
  return {std::max(score, 1.0 - score) * s + score, std::min(score, 1.0 - score) * s + (1.0 - score)};
}

void update(BanditState& state, const SampledPoint& point, double score, const TensorMap& merged, UpdateRule rule,
            FbestTiming timing) {
  if (!(score >= 0.0 && score <= 1.0)) {
    throw Error(ErrorCode::kScoreOutOfRange, "score " + std::to_string(score) + " outside [0, 1]");
  }
  if (point.weights.size() != state.model_arms.size()) {
    throw Error(ErrorCode::kInvalidSpec, "weight vector does not match the number of model arms");
  }
  const double best_before = state.best_score;
  if (score > state.best_score) {
    state.best_score = score;
    state.best_params = merged;
  }
  const double reference = timing == FbestTiming::kPre ? best_before : state.best_score;
  for (std::size_t j = 0; j < state.model_arms.size(); ++j) {
    BetaArm& arm = state.model_arms[j];
    const double w = point.weights[j];
    if (rule == UpdateRule::kAlgorithm1) {
      if (w > 0.0) {
        const ArmIncrement inc = algorithm1_increment(score, reference);
        arm.alpha += inc.alpha;
        arm.beta += inc.beta;
      }
    } else {
      arm.alpha += score * w;
      arm.beta += (1.0 - score) * w;
    }
  }
  BetaArm& tau_arm = state.tau_arm(point.tau);
  tau_arm.alpha += score;
  tau_arm.beta += 1.0 - score;
}

std::vector<RankedModel> rank_models(std::span<const TensorMap> models, const Evaluator& evaluator) {
  std::vector<RankedModel> ranked;
  for (std::size_t i = 0; i < models.size(); ++i) ranked.push_back({i, evaluator(models[i])});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedModel& a, const RankedModel& b) { return a.score > b.score; });
  return ranked;
}

SearchResult run_search(std::span<const TensorMap> models, const TensorMap* init, const Evaluator& evaluator,
                        const SearchConfig& config, const GroupRules& rules, const IterationCallback& on_iteration) {
  config.validate();
  if (models.empty()) throw Error(ErrorCode::kInvalidSpec, "at least one model is required");
  const bool is_slerp = config.merge.algorithm == Algorithm::kSlerp;
  std::size_t n = std::min(config.top_k_models, models.size());
  if (is_slerp) {
    if (models.size() < 2) throw Error(ErrorCode::kInvalidSpec, "slerp search needs two models");
    n = 2;
  }
  const auto active = models.first(n);
  const bool needs_init = config.merge.algorithm == Algorithm::kTies || config.merge.algorithm == Algorithm::kDare;
  if (needs_init && init == nullptr) {
    throw Error(ErrorCode::kInvalidSpec, std::string(to_string(config.merge.algorithm)) + " needs an init checkpoint");
  }
  {
    std::vector<const TensorMap*> ptrs;
    for (const auto& m : active) ptrs.push_back(&m);
    if (init != nullptr) ptrs.push_back(init);
    require_compatible(ptrs);
  }
  if (config.merge.carrier >= n) throw Error(ErrorCode::kConfigError, "carrier index exceeds the searched models");

  std::vector<MergeType> taus;
  const NameSet names = active.front().names();
  for (MergeType tau : config.taus) {
    if (std::find(taus.begin(), taus.end(), tau) != taus.end()) continue;
    try {
      select_params(names, tau, rules);
      taus.push_back(tau);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptySelection) throw;
    }
  }
  if (taus.empty()) throw Error(ErrorCode::kEmptySelection, "no candidate merge type selects any tensor");

  BanditState state = BanditState::fresh(n, init != nullptr ? *init : active.front());
  for (std::size_t i = 0; i < config.iterations; ++i) {
    const auto started = std::chrono::steady_clock::now();
    rng::CounterStream stream(rng::derive_key(config.seed, {kIterationStream, i}));
    SampledPoint point;
    switch (config.sampler) {
      case Sampler::kThompson: point = thompson_sample(state, taus, config.tau_sampling, stream); break;
      case Sampler::kEpsilonGreedy: point = epsilon_greedy_sample(state, config.epsilon, taus, stream); break;
      case Sampler::kRandom: point = random_sample(stream, n, taus); break;
    }

    MergeSpec spec = config.merge;
    spec.weights = point.weights;
    spec.tau = point.tau;
    spec.seed = rng::derive_key(config.seed, {kDareStream, i});
    if (is_slerp) spec.slerp_t = std::clamp(point.weights[1], 0.0, 1.0);
    TensorMap merged = apply_merge(active, init, spec, rules);

    double score = 0.0;
    try {
      score = evaluator(merged);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kEvaluatorFailure, "iteration " + std::to_string(i) + ": " + e.what());
    }
    update(state, point, score, merged, config.update_rule, config.fbest_timing);

    IterationRecord record;
    record.iteration = i;
    record.weights = std::move(point.weights);
    record.tau = point.tau;
    record.score = score;
    record.best_after = state.best_score;
    record.ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started)
                    .count();
    state.history.push_back(record);
    if (on_iteration) on_iteration(state.history.back());
  }

  SearchResult result;
  result.best_params = state.best_params;
  result.best_score = state.best_score;
  result.history = state.history;
  result.final_state = std::move(state);
  return result;
}

std::string report_line(const IterationRecord& record, bool include_timing) {
  json line = {{"iter", record.iteration},
               {"weights", record.weights},
               {"tau", to_string(record.tau)},
               {"score", record.score},
               {"best", record.best_after},
               {"ms", include_timing ? record.ms : 0}};
  return line.dump();
}

}  // namespace gmerge
