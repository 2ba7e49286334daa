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

// Checkpoint merging operators: Model Soup averaging, TIES, DARE and SLERP.
//
// Every operator is a pure function of its inputs (plus a seed for DARE).
// Arithmetic is carried out in double precision and rounded to f32 once, when
// the merged tensor is written. Tensors outside the selected name set are
// copied verbatim from the carrier model.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gmerge/param_groups.hpp"
#include "gmerge/tensor_store.hpp"

namespace gmerge {

enum class Algorithm { kSoup, kTies, kDare, kSlerp };
enum class SignMode { kWeighted, kUnweighted };
enum class DisjointMode { kWeightedMean, kPlainMean };

std::string_view to_string(Algorithm algorithm);
std::string_view to_string(SignMode mode);
std::string_view to_string(DisjointMode mode);
std::optional<Algorithm> parse_algorithm(std::string_view text);
std::optional<SignMode> parse_sign_mode(std::string_view text);
std::optional<DisjointMode> parse_disjoint_mode(std::string_view text);

inline constexpr double kWeightSumTolerance = 1e-9;

struct MergeSpec {
  Algorithm algorithm = Algorithm::kSoup;
  // One weight per input model; nonnegative and summing to 1.
  std::vector<double> weights;
  MergeType tau = MergeType::kFull;
  // TIES trim percentile in (0, 100].
  double ties_k = 20.0;
  bool ties_per_tensor = false;
  double lambda = 1.0;
  // DARE drop rate in [0, 1).
  double dare_p = 0.9;
  double slerp_t = 0.5;
  double collinear_eps = 1e-5;
  SignMode sign_mode = SignMode::kWeighted;
  DisjointMode disjoint_mode = DisjointMode::kWeightedMean;
  // Index of the model whose unselected tensors are carried over.
  std::size_t carrier = 0;
  std::uint64_t seed = 0;

  // Throws kInvalidSpec (kInvalidDropRate for dare_p).
  void validate(std::size_t n_models) const;
};

// Throws kInvalidSpec unless all weights are >= 0 and sum to 1 within
// kWeightSumTolerance.
void validate_weights(std::span<const double> weights);
std::vector<double> uniform_weights(std::size_t n);

struct DeltaTensor {
  Shape shape;
  std::vector<double> values;
};

// theta_model - theta_init over a set of tensors, in double precision.
struct TaskVector {
  std::map<std::string, DeltaTensor, std::less<>> tensors;

  std::size_t numel() const;
};

// Elementwise signs in {-1, 0, +1}.
using SignMap = std::map<std::string, std::vector<std::int8_t>, std::less<>>;

TaskVector task_vector(const TensorMap& model, const TensorMap& init, const NameSet& names);

// Keeps the ceil(k% * numel) largest-magnitude entries across the whole task
// vector and zeroes the rest. Ties at the threshold go to the element that
// comes first in (name, row-major) order.
TaskVector trim_topk(const TaskVector& delta, double k_percent);
// Same rule applied to each tensor on its own.
TaskVector trim_topk_per_tensor(const TaskVector& delta, double k_percent);

SignMap elect_sign(std::span<const TaskVector> deltas, std::span<const double> weights, SignMode mode);

// For each element, averages the deltas whose sign agrees with the elected
// sign. An element with elected sign 0 or no agreeing model becomes 0.
TaskVector disjoint_merge(std::span<const TaskVector> deltas, std::span<const double> weights,
                          const SignMap& signs, DisjointMode mode);

TensorMap ties_merge(std::span<const TensorMap> models, const TensorMap& init, const MergeSpec& spec,
                     const NameSet& names);

TensorMap soup_merge(std::span<const TensorMap> models, std::span<const double> weights, const NameSet& names,
                     std::size_t carrier = 0);

// Per-element keep decisions come from a counter stream keyed by
// (seed, model_index, tensor name), indexed by the element position.
TensorMap dare_sparsify(const TensorMap& sft, const TensorMap& pre, double p, std::uint64_t seed,
                        std::size_t model_index, const NameSet& names);

// pre + lambda * sum_k (n * w_k) * DARE delta_k. Uniform weights reduce to
// the plain sum over models.
TensorMap dare_merge(std::span<const TensorMap> models, const TensorMap& pre, const MergeSpec& spec,
                     const NameSet& names);

// Falls back to linear interpolation when |cos omega| > 1 - eps.
// Throws kZeroNormVector when either input has zero norm.
std::vector<double> slerp(std::span<const double> v0, std::span<const double> v1, double t, double eps);

TensorMap slerp_merge(const TensorMap& model0, const TensorMap& model1, const MergeSpec& spec,
                      const NameSet& names);

// Validates the spec and compatibility, resolves spec.tau through `rules`
// and dispatches on spec.algorithm. `init` is required for TIES and DARE.
TensorMap apply_merge(std::span<const TensorMap> models, const TensorMap* init, const MergeSpec& spec,
                      const GroupRules& rules);

}  // namespace gmerge
