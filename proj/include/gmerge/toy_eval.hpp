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

// Desk-scale evaluation: synthetic binary tasks, logistic-regression models
// stored as checkpoints, F1 scoring and the training losses (cross-entropy,
// masked-LM, virtual adversarial, Alice++ and the weighted composite).

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gmerge/merge_search.hpp"
#include "gmerge/tensor_store.hpp"

namespace gmerge {

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr std::string_view kWeightTensor = "linear.weight";
inline constexpr std::string_view kBiasTensor = "classifier.bias";

struct Dataset {
  std::string name;
  std::vector<std::vector<double>> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.empty() ? 0 : features.front().size(); }
  // Throws kMalformedInput.
  void validate() const;
};

// Concatenates datasets of equal dimension.
Dataset concat(std::span<const Dataset> parts, std::string name);

struct LinearParams {
  std::vector<double> weight;
  double bias = 0.0;
};

// p(y = 1 | x) = logistic(w . x + b), stored as `linear.weight` [d] and
// `classifier.bias` [1].
class LinearModel {
 public:
  explicit LinearModel(LinearParams params) : params_(std::move(params)) {}

  static LinearModel zeros(std::size_t dim) { return LinearModel({std::vector<double>(dim, 0.0), 0.0}); }
  // Throws kMalformedModel if the tensors are absent or misshapen.
  static LinearModel from_checkpoint(const TensorMap& map);
  TensorMap to_checkpoint() const;

  const LinearParams& params() const { return params_; }
  std::size_t dim() const { return params_.weight.size(); }

  double logit(std::span<const double> x) const;
  double probability(std::span<const double> x) const;
  // Strict threshold: predicts 1 only when p > 0.5.
  int predict(std::span<const double> x) const { return probability(x) > 0.5 ? 1 : 0; }

 private:
  LinearParams params_;
};

double logistic(double z);

// Positive class is 1. P + R = 0 gives 0, except that no predicted and no
// actual positives gives 1. Throws kLengthMismatch.
double f1_score(std::span<const int> predictions, std::span<const int> labels);

double cross_entropy(double prob, int label);
// Mean negative log-probability of the true token at masked positions.
// Throws kEmptyMaskSet.
double mlm_loss(std::span<const double> masked_token_probs);

// KL(Ber(p) || Ber(q)) with both probabilities clamped.
double bernoulli_kl(double p, double q);

struct VatOptions {
  double eps = 0.1;
  int steps = 1;
  std::uint64_t seed = 0;
};

// Per input: start from a random direction on the eps-sphere, take `steps`
// normalized gradient-ascent steps on KL(p(x) || p(x + delta)) projecting
// back onto the sphere, then average the KL over inputs. The clean
// prediction is a constant reference.
double vat_loss(const LinearModel& model, std::span<const std::vector<double>> inputs, const VatOptions& options);

// The adversarial perturbation vat_loss uses for one input.
std::vector<double> vat_perturbation(const LinearModel& model, std::span<const double> x, const VatOptions& options,
                                     std::uint64_t input_index);

double alice_loss(double label_loss, double vat, double alpha);

struct LossWeights {
  double mlm = 1.0;
  double alice = 1.0;
  double ce = 1.0;
  double alice_alpha = 1.0;
  double vat_eps = 0.1;

  void validate() const;
};

double composite_loss(double mlm, double alice, double ce, const LossWeights& weights);

// Mean cross-entropy of `params` on `data` and its analytic gradient.
double mean_cross_entropy(const LinearParams& params, const Dataset& data);
LinearParams cross_entropy_gradient(const LinearParams& params, const Dataset& data);

enum class TrainingLoss { kCrossEntropy, kCrossEntropyPlusVat };

struct TrainOptions {
  int epochs = 200;
  double learning_rate = 0.5;
  TrainingLoss loss = TrainingLoss::kCrossEntropy;
  LossWeights weights;
  int vat_steps = 1;
  std::uint64_t seed = 0;
};

// Full-batch gradient descent from the zero model. With
// kCrossEntropyPlusVat the objective is alice_loss(CE, VAT, alpha).
LinearModel train_linear(const Dataset& data, const TrainOptions& options);

struct TaskSpec {
  std::size_t dim = 2;
  std::size_t n_train_per_slice = 200;
  std::size_t n_slices = 2;
  std::size_t n_val = 400;
  double cluster_separation = 3.0;
  std::uint64_t seed = 0;

  // Accepts {"dim","n_train_per_slice","n_slices","n_val",
  // "cluster_separation","seed"}; unknown keys throw kConfigError.
  static TaskSpec from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
  void validate() const;
};

struct SyntheticTask {
  std::vector<Dataset> train_slices;
  Dataset validation;
};

// Two Gaussian clusters (unit variance) per slice, labels exactly balanced.
// Slice s places its class means at +/- separation/2 along a direction
// rotated by a slice-specific angle in the first two coordinates, so models
// trained on different slices disagree while validation (drawn evenly from
// all slices) rewards combining them.
SyntheticTask make_synthetic_task(const TaskSpec& spec);

// exp(-||theta - target|| / ||target||) over the target's tensors.
Evaluator known_optimum_evaluator(TensorMap target);

// F1 of thresholded predictions on `validation`.
Evaluator classifier_evaluator(Dataset validation);

}  // namespace gmerge
