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

// Bandit-driven merge search.
//
// Each iteration samples a weight vector over the input models and a merge
// type, merges, scores the result with an Evaluator and feeds the score back
// into per-model and per-merge-type Beta posteriors. Thompson sampling,
// epsilon-greedy and uniform random sampling share the same loop.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmerge/merge_algos.hpp"
#include "gmerge/param_groups.hpp"
#include "gmerge/rng.hpp"
#include "gmerge/tensor_store.hpp"

namespace gmerge {

// Maps a candidate checkpoint to a score in [0, 1].
using Evaluator = std::function<double(const TensorMap&)>;

// Writes the candidate to a temporary file and runs `<command> <path>`. The
// command must exit 0 and print one decimal on standard output; anything
// else throws kEvaluatorFailure.
Evaluator make_exec_evaluator(std::string command);

enum class Sampler { kThompson, kEpsilonGreedy, kRandom };
enum class UpdateRule { kAlgorithm1, kExpectedReward };
enum class TauSampling { kArgmax, kCategorical };
enum class FbestTiming { kPre, kPost };

std::string_view to_string(Sampler s);
std::string_view to_string(UpdateRule r);
std::string_view to_string(TauSampling t);
std::string_view to_string(FbestTiming t);
std::optional<Sampler> parse_sampler(std::string_view text);
std::optional<UpdateRule> parse_update_rule(std::string_view text);
std::optional<TauSampling> parse_tau_sampling(std::string_view text);
std::optional<FbestTiming> parse_fbest_timing(std::string_view text);

struct BetaArm {
  double alpha = 1.0;
  double beta = 1.0;

  double mean() const { return alpha / (alpha + beta); }
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::vector<double> weights;
  MergeType tau = MergeType::kFull;
  double score = 0.0;
  double best_after = 0.0;
  std::int64_t ms = 0;
};

struct BanditState {
  std::vector<BetaArm> model_arms;
  std::array<BetaArm, kAllMergeTypes.size()> tau_arms{};
  TensorMap best_params;
  double best_score = 0.0;
  std::vector<IterationRecord> history;

  static BanditState fresh(std::size_t n_models, TensorMap initial_best = {});

  BetaArm& tau_arm(MergeType tau) { return tau_arms[static_cast<std::size_t>(tau)]; }
  const BetaArm& tau_arm(MergeType tau) const { return tau_arms[static_cast<std::size_t>(tau)]; }
};

// Posterior means of the model arms, normalized to sum to 1.
std::vector<double> posterior_mean_weights(const BanditState& state);

struct SearchConfig {
  Sampler sampler = Sampler::kThompson;
  UpdateRule update_rule = UpdateRule::kAlgorithm1;
  std::size_t iterations = 50;
  // Upper bound on the number of models searched over.
  std::size_t top_k_models = 6;
  double epsilon = 0.1;
  TauSampling tau_sampling = TauSampling::kArgmax;
  FbestTiming fbest_timing = FbestTiming::kPost;
  // Candidate merge types; those selecting no tensors are dropped.
  std::vector<MergeType> taus{kAllMergeTypes.begin(), kAllMergeTypes.end()};
  // Algorithm and hyperparameters; weights and tau are overwritten per
  // iteration.
  MergeSpec merge;
  std::uint64_t seed = 0;

  // Throws kConfigError.
  void validate() const;
};

struct SampledPoint {
  std::vector<double> weights;
  MergeType tau = MergeType::kFull;
};

// w_j ~ Beta(alpha_j, beta_j), normalized. The merge type is the argmax of
// one Beta draw per candidate type, or (kCategorical) a categorical draw
// proportional to the arms' posterior means.
SampledPoint thompson_sample(const BanditState& state, std::span<const MergeType> taus, TauSampling mode,
                             rng::CounterStream& rng);

// w ~ Dirichlet(1, ..., 1); tau uniform over `taus`.
SampledPoint random_sample(rng::CounterStream& rng, std::size_t n_models, std::span<const MergeType> taus);

// Best point in state.history with probability 1 - epsilon, otherwise a
// random sample. Always explores while the history is empty.
SampledPoint epsilon_greedy_sample(const BanditState& state, double epsilon, std::span<const MergeType> taus,
                                   rng::CounterStream& rng);

struct ArmIncrement {
  double alpha = 0.0;
  double beta = 0.0;
};

// max(F, 1-F) * sigmoid(F - F_ref) + F and min(F, 1-F) * sigmoid(F - F_ref) + 1 - F.
ArmIncrement algorithm1_increment(double score, double reference_best);

// Applies one observation. The best model/score are replaced when
// score > best_score; then every model arm is updated according to `rule`
// and the sampled merge type's arm receives (+F, +(1-F)). Throws
// kScoreOutOfRange unless score is in [0, 1].
void update(BanditState& state, const SampledPoint& point, double score, const TensorMap& merged, UpdateRule rule,
            FbestTiming timing = FbestTiming::kPost);

struct SearchResult {
  TensorMap best_params;
  double best_score = 0.0;
  std::vector<IterationRecord> history;
  BanditState final_state;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

// Runs exactly config.iterations evaluations. At most config.top_k_models
// models are searched over: the first ones in `models`, which callers order
// best-first (see rank_models). Slerp always uses the first two models and
// takes its interpolation parameter from the sampled weight on the second.
SearchResult run_search(std::span<const TensorMap> models, const TensorMap* init, const Evaluator& evaluator,
                        const SearchConfig& config, const GroupRules& rules,
                        const IterationCallback& on_iteration = {});

// Indices of `models` sorted by standalone evaluator score, best first;
// ties keep input order.
struct RankedModel {
  std::size_t index;
  double score;
};
std::vector<RankedModel> rank_models(std::span<const TensorMap> models, const Evaluator& evaluator);

// One line of the JSONL report, without the trailing newline. Keys are
// emitted in sorted order.
std::string report_line(const IterationRecord& record, bool include_timing = true);

}  // namespace gmerge
