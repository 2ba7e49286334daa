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

#include "gmerge/toy_eval.hpp"

#include <algorithm>
#include <boost/random/normal_distribution.hpp>
#include <cmath>
#include <numbers>

#include "gmerge/error.hpp"
#include "gmerge/rng.hpp"

namespace gmerge {
namespace {

using nlohmann::json;

constexpr std::uint64_t kTrainStream = 0x7241494EULL;
constexpr std::uint64_t kValidationStream = 0x56414CULL;
// Half-spread of the slice rotation angles.
constexpr double kMaxSliceAngle = 35.0 * std::numbers::pi / 180.0;

double clamp_prob(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double slice_angle(std::size_t slice, std::size_t n_slices) {
  if (n_slices < 2) return 0.0;
  return kMaxSliceAngle * (2.0 * static_cast<double>(slice) / static_cast<double>(n_slices - 1) - 1.0);
}

std::vector<double> draw_point(int label, std::size_t dim, double separation, double angle, rng::CounterStream& rng) {
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(dim);
  for (double& v : x) v = normal(rng);
  const double half = (label == 1 ? 0.5 : -0.5) * separation;
  x[0] += half * std::cos(angle);
  if (dim > 1) x[1] += half * std::sin(angle);
  return x;
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw Error(ErrorCode::kMalformedInput, "dataset '" + name + "' is empty");
  if (features.size() != labels.size()) {
    throw Error(ErrorCode::kMalformedInput, "dataset '" + name + "' has mismatched features and labels");
  }
  const std::size_t d = features.front().size();
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != d) throw Error(ErrorCode::kMalformedInput, "dataset '" + name + "' has ragged features");
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorCode::kMalformedInput, "labels must be 0 or 1");
  }
}

Dataset concat(std::span<const Dataset> parts, std::string name) {
  Dataset out;
  out.name = std::move(name);
  for (const Dataset& part : parts) {
    if (!out.features.empty() && part.dim() != out.dim()) {
      throw Error(ErrorCode::kMalformedInput, "cannot concatenate datasets of different dimension");
    }
    out.features.insert(out.features.end(), part.features.begin(), part.features.end());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
  }
  return out;
}

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

LinearModel LinearModel::from_checkpoint(const TensorMap& map) {
  if (!map.contains(kWeightTensor) || !map.contains(kBiasTensor)) {
    throw Error(ErrorCode::kMalformedModel, "checkpoint lacks linear.weight or classifier.bias");
  }
  const Tensor& w = map.at(kWeightTensor);
  const Tensor& b = map.at(kBiasTensor);
  if (w.shape.size() != 1 || b.shape != Shape{1}) {
    throw Error(ErrorCode::kMalformedModel, "linear.weight must be [d] and classifier.bias [1]");
  }
  LinearParams params;
  params.weight.assign(w.data.begin(), w.data.end());
  params.bias = b.data.front();
  return LinearModel(std::move(params));
}

TensorMap LinearModel::to_checkpoint() const {
  TensorMap map;
  std::vector<float> w(params_.weight.begin(), params_.weight.end());
  const auto dim = static_cast<std::int64_t>(w.size());
  map.insert(std::string(kWeightTensor), Tensor({dim}, std::move(w)));
  map.insert(std::string(kBiasTensor), Tensor({1}, {static_cast<float>(params_.bias)}));
  return map;
}

double LinearModel::logit(std::span<const double> x) const {
  if (x.size() != params_.weight.size()) {
    throw Error(ErrorCode::kMalformedModel, "input dimension " + std::to_string(x.size()) + " vs model dimension " +
                                                std::to_string(params_.weight.size()));
  }
  return dot(params_.weight, x) + params_.bias;
}

double LinearModel::probability(std::span<const double> x) const { return logistic(logit(x)); }

double f1_score(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                                std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw Error(ErrorCode::kLengthMismatch, "F1 needs at least one prediction");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = predictions[i] != 0;
    const bool truth = labels[i] != 0;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  if (tp + fp + fn == 0) return 1.0;
  const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double cross_entropy(double prob, int label) {
  const double p = clamp_prob(prob);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double mlm_loss(std::span<const double> masked_token_probs) {
  if (masked_token_probs.empty()) throw Error(ErrorCode::kEmptyMaskSet, "no masked tokens");
  double sum = 0.0;
  for (double p : masked_token_probs) sum -= std::log(clamp_prob(p));
  return sum / static_cast<double>(masked_token_probs.size());
}

double bernoulli_kl(double p, double q) {
  p = clamp_prob(p);
  q = clamp_prob(q);
  return p * (std::log(p) - std::log(q)) + (1.0 - p) * (std::log(1.0 - p) - std::log(1.0 - q));
}

std::vector<double> vat_perturbation(const LinearModel& model, std::span<const double> x, const VatOptions& options,
                                     std::uint64_t input_index) {
  const std::size_t d = x.size();
  rng::CounterStream stream(rng::derive_key(options.seed, {input_index}));
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> delta(d);
  double n = 0.0;
  while (n == 0.0) {
    for (double& v : delta) v = normal(stream);
    n = norm(delta);
  }
  for (double& v : delta) v *= options.eps / n;

  const auto& w = model.params().weight;
  const double reference = model.probability(x);
  std::vector<double> shifted(d);
  for (int step = 0; step < options.steps; ++step) {
    for (std::size_t i = 0; i < d; ++i) shifted[i] = x[i] + delta[i];
    // d/d(delta) KL(p || q(x + delta)) = (q - p) w for a logistic model.
    const double g_scale = model.probability(shifted) - reference;
    const double g_norm = std::abs(g_scale) * norm(w);
    if (g_norm == 0.0) break;
    for (std::size_t i = 0; i < d; ++i) delta[i] += options.eps * g_scale * w[i] / g_norm;
    const double dn = norm(delta);
    if (dn == 0.0) {
      for (std::size_t i = 0; i < d; ++i) delta[i] = options.eps * g_scale * w[i] / g_norm;
    } else {
      for (double& v : delta) v *= options.eps / dn;
    }
  }
  return delta;
}

double vat_loss(const LinearModel& model, std::span<const std::vector<double>> inputs, const VatOptions& options) {
  if (!(options.eps > 0.0)) throw Error(ErrorCode::kInvalidSpec, "VAT eps must be > 0");
  if (options.steps < 1) throw Error(ErrorCode::kInvalidSpec, "VAT needs at least one ascent step");
  if (inputs.empty()) return 0.0;
  double total = 0.0;
  std::vector<double> shifted;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& x = inputs[i];
    const auto delta = vat_perturbation(model, x, options, i);
    shifted.resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) shifted[k] = x[k] + delta[k];
    total += bernoulli_kl(model.probability(x), model.probability(shifted));
  }
  return total / static_cast<double>(inputs.size());
}

double alice_loss(double label_loss, double vat, double alpha) { return label_loss + alpha * vat; }

void LossWeights::validate() const {
  if (mlm < 0.0 || alice < 0.0 || ce < 0.0 || mlm + alice + ce <= 0.0) {
    throw Error(ErrorCode::kConfigError, "loss weights must be >= 0 with a positive sum");
  }
  if (alice_alpha < 0.0) throw Error(ErrorCode::kConfigError, "alice_alpha must be >= 0");
  if (!(vat_eps > 0.0)) throw Error(ErrorCode::kConfigError, "vat_eps must be > 0");
}

double composite_loss(double mlm, double alice, double ce, const LossWeights& weights) {
  return weights.mlm * mlm + weights.alice * alice + weights.ce * ce;
}

double mean_cross_entropy(const LinearParams& params, const Dataset& data) {
  const LinearModel model(params);
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) sum += cross_entropy(model.probability(data.features[i]), data.labels[i]);
  return sum / static_cast<double>(data.size());
}

LinearParams cross_entropy_gradient(const LinearParams& params, const Dataset& data) {
  const LinearModel model(params);
  LinearParams grad{std::vector<double>(params.weight.size(), 0.0), 0.0};
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& x = data.features[i];
    const double r = (model.probability(x) - data.labels[i]) * inv_n;
    for (std::size_t k = 0; k < x.size(); ++k) grad.weight[k] += r * x[k];
    grad.bias += r;
  }
  return grad;
}

LinearModel train_linear(const Dataset& data, const TrainOptions& options) {
  data.validate();
  if (!(options.learning_rate > 0.0)) throw Error(ErrorCode::kConfigError, "learning rate must be > 0");
  options.weights.validate();
  LinearParams params{std::vector<double>(data.dim(), 0.0), 0.0};
  const VatOptions vat{options.weights.vat_eps, options.vat_steps, options.seed};
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    LinearParams grad = cross_entropy_gradient(params, data);
    if (options.loss == TrainingLoss::kCrossEntropyPlusVat && options.weights.alice_alpha > 0.0) {
      const LinearModel model(params);
      // The perturbation is re-drawn each epoch from an epoch-keyed stream.
      VatOptions epoch_vat = vat;
      epoch_vat.seed = rng::derive_key(options.seed, {static_cast<std::uint64_t>(epoch)});
      std::vector<double> shifted(data.dim());
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& x = data.features[i];
        const auto delta = vat_perturbation(model, x, epoch_vat, i);
        for (std::size_t k = 0; k < x.size(); ++k) shifted[k] = x[k] + delta[k];
        const double r = options.weights.alice_alpha * (model.probability(shifted) - model.probability(x)) * inv_n;
        for (std::size_t k = 0; k < x.size(); ++k) grad.weight[k] += r * shifted[k];
        grad.bias += r;
      }
    }
    for (std::size_t k = 0; k < params.weight.size(); ++k) params.weight[k] -= options.learning_rate * grad.weight[k];
    params.bias -= options.learning_rate * grad.bias;
  }
  return LinearModel(std::move(params));
}

TaskSpec TaskSpec::from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kConfigError, "task spec must be a JSON object");
  TaskSpec spec;
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "dim") spec.dim = value.get<std::size_t>();
      else if (key == "n_train_per_slice") spec.n_train_per_slice = value.get<std::size_t>();
      else if (key == "n_slices") spec.n_slices = value.get<std::size_t>();
      else if (key == "n_val") spec.n_val = value.get<std::size_t>();
      else if (key == "cluster_separation") spec.cluster_separation = value.get<double>();
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else throw Error(ErrorCode::kConfigError, "unknown task spec key '" + key + "'");
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kConfigError, "task spec key '" + key + "': " + e.what());
    }
  }
  spec.validate();
  return spec;
}

json TaskSpec::to_json() const {
  return {{"dim", dim},
          {"n_train_per_slice", n_train_per_slice},
          {"n_slices", n_slices},
          {"n_val", n_val},
          {"cluster_separation", cluster_separation},
          {"seed", seed}};
}

void TaskSpec::validate() const {
  if (dim < 1 || n_train_per_slice < 1 || n_slices < 1 || n_val < 1 || !(cluster_separation > 0.0)) {
    throw Error(ErrorCode::kConfigError, "task spec fields must all be positive");
  }
}

SyntheticTask make_synthetic_task(const TaskSpec& spec) {
  spec.validate();
  SyntheticTask task;
  for (std::size_t s = 0; s < spec.n_slices; ++s) {
    rng::CounterStream stream(rng::derive_key(spec.seed, {kTrainStream, s}));
    const double angle = slice_angle(s, spec.n_slices);
    Dataset slice;
    slice.name = "slice" + std::to_string(s);
    for (std::size_t i = 0; i < spec.n_train_per_slice; ++i) {
      const int label = static_cast<int>(i % 2);
      slice.features.push_back(draw_point(label, spec.dim, spec.cluster_separation, angle, stream));
      slice.labels.push_back(label);
    }
    task.train_slices.push_back(std::move(slice));
  }
  rng::CounterStream stream(rng::derive_key(spec.seed, {kValidationStream}));
  task.validation.name = "validation";
  for (std::size_t i = 0; i < spec.n_val; ++i) {
    const std::size_t s = i % spec.n_slices;
    const int label = static_cast<int>((i / spec.n_slices) % 2);
    task.validation.features.push_back(
        draw_point(label, spec.dim, spec.cluster_separation, slice_angle(s, spec.n_slices), stream));
    task.validation.labels.push_back(label);
  }
  return task;
}

Evaluator known_optimum_evaluator(TensorMap target) {
  double target_sq = 0.0;
  for (const auto& [_, t] : target) {
    for (float v : t.data) target_sq += static_cast<double>(v) * v;
  }
  if (!(target_sq > 0.0)) throw Error(ErrorCode::kInvalidSpec, "known-optimum target must have nonzero norm");
  const double target_norm = std::sqrt(target_sq);
  return [target = std::move(target), target_norm](const TensorMap& candidate) {
    double dist_sq = 0.0;
    for (const auto& [name, t] : target) {
      if (!candidate.contains(name) || candidate.at(name).shape != t.shape) {
        throw Error(ErrorCode::kMalformedModel, "candidate lacks tensor '" + name + "' of the target's shape");
      }
      const auto& c = candidate.at(name).data;
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        const double diff = static_cast<double>(c[i]) - static_cast<double>(t.data[i]);
        dist_sq += diff * diff;
      }
    }
    return std::exp(-std::sqrt(dist_sq) / target_norm);
  };
}

Evaluator classifier_evaluator(Dataset validation) {
  validation.validate();
  return [validation = std::move(validation)](const TensorMap& candidate) {
    const LinearModel model = LinearModel::from_checkpoint(candidate);
    if (model.dim() != validation.dim()) {
      throw Error(ErrorCode::kMalformedModel, "model dimension does not match the validation set");
    }
    std::vector<int> predictions(validation.size());
    for (std::size_t i = 0; i < validation.size(); ++i) predictions[i] = model.predict(validation.features[i]);
    return f1_score(predictions, validation.labels);
  };
}

}  // namespace gmerge
