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

#include "gmerge/merge_algos.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gmerge/error.hpp"
#include "gmerge/rng.hpp"

namespace gmerge {
namespace {

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

std::vector<double> to_double(const Tensor& t) { return {t.data.begin(), t.data.end()}; }

Tensor to_tensor(const Shape& shape, const std::vector<double>& values) {
  std::vector<float> data(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) data[i] = static_cast<float>(values[i]);
  return Tensor(shape, std::move(data));
}

void require_models(std::span<const TensorMap> models) {
  if (models.empty()) throw Error(ErrorCode::kInvalidSpec, "at least one model is required");
}

void require_compatible_with(std::span<const TensorMap> models, const TensorMap* extra) {
  std::vector<const TensorMap*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  if (extra != nullptr) ptrs.push_back(extra);
  require_compatible(ptrs);
}

TensorMap carrier_copy(std::span<const TensorMap> models, std::size_t carrier) {
  if (carrier >= models.size()) {
    throw Error(ErrorCode::kInvalidSpec, "carrier index " + std::to_string(carrier) + " out of range");
  }
  return models[carrier];
}

void require_names(const TensorMap& map, const NameSet& names) {
  for (const std::string& name : names) {
    if (!map.contains(name)) {
      throw Error(ErrorCode::kIncompatibleCheckpoints, "tensor '" + name + "' missing from a model");
    }
  }
}

// Snaps k% * n to an integer when it is within rounding noise of one, so that
// e.g. 20% of 5 keeps exactly one element.
std::size_t keep_count(double k_percent, std::size_t n) {
  if (n == 0) return 0;
  const double x = k_percent * static_cast<double>(n) / 100.0;
  const double r = std::round(x);
  double c = std::abs(x - r) <= 1e-9 * std::max(1.0, x) ? r : std::ceil(x);
  c = std::clamp(c, 1.0, static_cast<double>(n));
  return static_cast<std::size_t>(c);
}

// Trims `values` (a view over several tensors concatenated in canonical
// order) in place.
void trim_in_place(std::vector<double*>& values, double k_percent) {
  const std::size_t n = values.size();
  const std::size_t keep = keep_count(k_percent, n);
  if (keep >= n) return;
  std::vector<double> mags(n);
  for (std::size_t i = 0; i < n; ++i) mags[i] = std::abs(*values[i]);
  std::vector<double> scratch = mags;
  std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(keep - 1), scratch.end(),
                   std::greater<>());
  const double threshold = scratch[keep - 1];
  std::size_t above = 0;
  for (double m : mags) above += m > threshold;
  std::size_t at_threshold_budget = keep - above;
  for (std::size_t i = 0; i < n; ++i) {
    if (mags[i] > threshold) continue;
    if (mags[i] == threshold && at_threshold_budget > 0) {
      --at_threshold_budget;
      continue;
    }
    *values[i] = 0.0;
  }
}

}  // namespace

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::kSoup: return "soup";
    case Algorithm::kTies: return "ties";
    case Algorithm::kDare: return "dare";
    case Algorithm::kSlerp: return "slerp";
  }
  return "soup";
}

std::string_view to_string(SignMode mode) {
  return mode == SignMode::kWeighted ? "weighted" : "unweighted";
}

std::string_view to_string(DisjointMode mode) {
  return mode == DisjointMode::kWeightedMean ? "weighted_mean" : "plain_mean";
}

std::optional<Algorithm> parse_algorithm(std::string_view text) {
  for (auto a : {Algorithm::kSoup, Algorithm::kTies, Algorithm::kDare, Algorithm::kSlerp}) {
    if (to_string(a) == text) return a;
  }
  return std::nullopt;
}

std::optional<SignMode> parse_sign_mode(std::string_view text) {
  for (auto m : {SignMode::kWeighted, SignMode::kUnweighted}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

std::optional<DisjointMode> parse_disjoint_mode(std::string_view text) {
  for (auto m : {DisjointMode::kWeightedMean, DisjointMode::kPlainMean}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

void validate_weights(std::span<const double> weights) {
  if (weights.empty()) throw Error(ErrorCode::kInvalidSpec, "weight vector is empty");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::kInvalidSpec, "weights must be finite and nonnegative");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > kWeightSumTolerance) {
    throw Error(ErrorCode::kInvalidSpec, "weights sum to " + std::to_string(sum) + ", expected 1");
  }
}

std::vector<double> uniform_weights(std::size_t n) {
  return std::vector<double>(n, n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
}

void MergeSpec::validate(std::size_t n_models) const {
  if (n_models == 0) throw Error(ErrorCode::kInvalidSpec, "at least one model is required");
  if (weights.size() != n_models) {
    throw Error(ErrorCode::kInvalidSpec, "expected " + std::to_string(n_models) + " weights, got " +
                                             std::to_string(weights.size()));
  }
  validate_weights(weights);
  if (!(ties_k > 0.0 && ties_k <= 100.0)) throw Error(ErrorCode::kInvalidSpec, "ties_k must be in (0, 100]");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::kInvalidSpec, "lambda must be >= 0");
  if (!(dare_p >= 0.0 && dare_p < 1.0)) throw Error(ErrorCode::kInvalidDropRate, "dare_p must be in [0, 1)");
  if (!(slerp_t >= 0.0 && slerp_t <= 1.0)) throw Error(ErrorCode::kInvalidSpec, "slerp_t must be in [0, 1]");
  if (!(collinear_eps > 0.0)) throw Error(ErrorCode::kInvalidSpec, "collinear_eps must be > 0");
  if (algorithm == Algorithm::kSlerp && n_models != 2) {
    throw Error(ErrorCode::kInvalidSpec, "slerp merges exactly 2 models, got " + std::to_string(n_models));
  }
  if (carrier >= n_models) throw Error(ErrorCode::kInvalidSpec, "carrier index out of range");
}

std::size_t TaskVector::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.values.size();
  return n;
}

TaskVector task_vector(const TensorMap& model, const TensorMap& init, const NameSet& names) {
  TaskVector out;
  for (const std::string& name : names) {
    if (!model.contains(name) || !init.contains(name)) {
      throw Error(ErrorCode::kIncompatibleCheckpoints, "tensor '" + name + "' missing from model or init");
    }
    const Tensor& a = model.at(name);
    const Tensor& b = init.at(name);
    if (a.shape != b.shape) {
      throw Error(ErrorCode::kIncompatibleCheckpoints, "tensor '" + name + "' shape " + shape_to_string(a.shape) +
                                                           " vs init " + shape_to_string(b.shape));
    }
    DeltaTensor d{a.shape, std::vector<double>(a.numel())};
    for (std::size_t i = 0; i < a.numel(); ++i) {
      d.values[i] = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    }
    out.tensors.emplace(name, std::move(d));
  }
  return out;
}

TaskVector trim_topk(const TaskVector& delta, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw Error(ErrorCode::kInvalidSpec, "k must be in (0, 100]");
  TaskVector out = delta;
  std::vector<double*> view;
  view.reserve(out.numel());
  for (auto& [_, t] : out.tensors) {
    for (double& v : t.values) view.push_back(&v);
  }
  trim_in_place(view, k_percent);
  return out;
}

TaskVector trim_topk_per_tensor(const TaskVector& delta, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw Error(ErrorCode::kInvalidSpec, "k must be in (0, 100]");
  TaskVector out = delta;
  for (auto& [_, t] : out.tensors) {
    std::vector<double*> view;
    for (double& v : t.values) view.push_back(&v);
    trim_in_place(view, k_percent);
  }
  return out;
}

SignMap elect_sign(std::span<const TaskVector> deltas, std::span<const double> weights, SignMode mode) {
  if (deltas.empty()) throw Error(ErrorCode::kInvalidSpec, "no task vectors to elect signs from");
  if (weights.size() != deltas.size()) throw Error(ErrorCode::kInvalidSpec, "one weight per task vector required");
  SignMap signs;
  for (const auto& [name, first] : deltas.front().tensors) {
    std::vector<double> sum(first.values.size(), 0.0);
    for (std::size_t t = 0; t < deltas.size(); ++t) {
      const auto& vals = deltas[t].tensors.at(name).values;
      const double w = mode == SignMode::kWeighted ? weights[t] : 1.0;
      for (std::size_t p = 0; p < sum.size(); ++p) sum[p] += w * vals[p];
    }
    std::vector<std::int8_t> s(sum.size());
    for (std::size_t p = 0; p < sum.size(); ++p) s[p] = static_cast<std::int8_t>(sign_of(sum[p]));
    signs.emplace(name, std::move(s));
  }
  return signs;
}

TaskVector disjoint_merge(std::span<const TaskVector> deltas, std::span<const double> weights,
                          const SignMap& signs, DisjointMode mode) {
  if (deltas.empty()) throw Error(ErrorCode::kInvalidSpec, "no task vectors to merge");
  if (weights.size() != deltas.size()) throw Error(ErrorCode::kInvalidSpec, "one weight per task vector required");
  TaskVector out;
  for (const auto& [name, first] : deltas.front().tensors) {
    const auto& gamma = signs.at(name);
    DeltaTensor merged{first.shape, std::vector<double>(first.values.size(), 0.0)};
    for (std::size_t p = 0; p < merged.values.size(); ++p) {
      if (gamma[p] == 0) continue;
      double num = 0.0;
      double den = 0.0;
      for (std::size_t t = 0; t < deltas.size(); ++t) {
        const double v = deltas[t].tensors.at(name).values[p];
        if (sign_of(v) != gamma[p]) continue;
        const double w = mode == DisjointMode::kWeightedMean ? weights[t] : 1.0;
        num += w * v;
        den += w;
      }
      merged.values[p] = den > 0.0 ? num / den : 0.0;
    }
    out.tensors.emplace(name, std::move(merged));
  }
  return out;
}

TensorMap ties_merge(std::span<const TensorMap> models, const TensorMap& init, const MergeSpec& spec,
                     const NameSet& names) {
  require_models(models);
  require_names(init, names);
  std::vector<TaskVector> trimmed;
  trimmed.reserve(models.size());
  for (const TensorMap& m : models) {
    TaskVector tv = task_vector(m, init, names);
    trimmed.push_back(spec.ties_per_tensor ? trim_topk_per_tensor(tv, spec.ties_k) : trim_topk(tv, spec.ties_k));
  }
  const SignMap signs = elect_sign(trimmed, spec.weights, spec.sign_mode);
  const TaskVector merged = disjoint_merge(trimmed, spec.weights, signs, spec.disjoint_mode);

  TensorMap out = carrier_copy(models, spec.carrier);
  for (const auto& [name, d] : merged.tensors) {
    const Tensor& base = init.at(name);
    std::vector<double> values(d.values.size());
    for (std::size_t p = 0; p < values.size(); ++p) {
      values[p] = static_cast<double>(base.data[p]) + spec.lambda * d.values[p];
    }
    out.assign(name, to_tensor(d.shape, values));
  }
  return out;
}

TensorMap soup_merge(std::span<const TensorMap> models, std::span<const double> weights, const NameSet& names,
                     std::size_t carrier) {
  require_models(models);
  if (weights.size() != models.size()) throw Error(ErrorCode::kInvalidSpec, "one weight per model required");
  for (const auto& m : models) require_names(m, names);
  TensorMap out = carrier_copy(models, carrier);
  for (const std::string& name : names) {
    const Tensor& first = models.front().at(name);
    std::vector<double> acc(first.numel(), 0.0);
    for (std::size_t j = 0; j < models.size(); ++j) {
      const Tensor& t = models[j].at(name);
      if (t.shape != first.shape) {
        throw Error(ErrorCode::kIncompatibleCheckpoints, "tensor '" + name + "' shape mismatch");
      }
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weights[j] * static_cast<double>(t.data[i]);
    }
    out.assign(name, to_tensor(first.shape, acc));
  }
  return out;
}

namespace {

// Keep mask for one tensor of one model.
class DareMask {
 public:
  DareMask(std::uint64_t seed, std::size_t model_index, std::string_view name, double p)
      : stream_(rng::derive_key(seed, {static_cast<std::uint64_t>(model_index), rng::hash_string(name)})),
        keep_probability_(1.0 - p) {}

  bool keep(std::size_t element) const { return rng::to_unit(stream_.at(element)) < keep_probability_; }

 private:
  rng::CounterStream stream_;
  double keep_probability_;
};

void check_drop_rate(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::kInvalidDropRate, "drop rate must be in [0, 1)");
}

}  // namespace

TensorMap dare_sparsify(const TensorMap& sft, const TensorMap& pre, double p, std::uint64_t seed,
                        std::size_t model_index, const NameSet& names) {
  check_drop_rate(p);
  const TaskVector delta = task_vector(sft, pre, names);
  TensorMap out = sft;
  const double scale = 1.0 / (1.0 - p);
  for (const auto& [name, d] : delta.tensors) {
    const DareMask mask(seed, model_index, name, p);
    const Tensor& base = pre.at(name);
    std::vector<double> values(d.values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = static_cast<double>(base.data[i]) + (mask.keep(i) ? d.values[i] * scale : 0.0);
    }
    out.assign(name, to_tensor(d.shape, values));
  }
  return out;
}

TensorMap dare_merge(std::span<const TensorMap> models, const TensorMap& pre, const MergeSpec& spec,
                     const NameSet& names) {
  require_models(models);
  check_drop_rate(spec.dare_p);
  if (spec.weights.size() != models.size()) throw Error(ErrorCode::kInvalidSpec, "one weight per model required");
  require_names(pre, names);
  const double n = static_cast<double>(models.size());
  const double scale = 1.0 / (1.0 - spec.dare_p);

  std::map<std::string, std::vector<double>, std::less<>> acc;
  for (const std::string& name : names) acc.emplace(name, std::vector<double>(pre.at(name).numel(), 0.0));
  for (std::size_t k = 0; k < models.size(); ++k) {
    const TaskVector delta = task_vector(models[k], pre, names);
    const double model_scale = n * spec.weights[k] * scale;
    for (const auto& [name, d] : delta.tensors) {
      const DareMask mask(spec.seed, k, name, spec.dare_p);
      auto& sum = acc.at(name);
      for (std::size_t i = 0; i < sum.size(); ++i) {
        if (mask.keep(i)) sum[i] += model_scale * d.values[i];
      }
    }
  }
  TensorMap out = carrier_copy(models, spec.carrier);
  for (auto& [name, sum] : acc) {
    const Tensor& base = pre.at(name);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = static_cast<double>(base.data[i]) + spec.lambda * sum[i];
    out.assign(name, to_tensor(base.shape, sum));
  }
  return out;
}

namespace {

std::vector<double> lerp(std::span<const double> v0, std::span<const double> v1, double t) {
  std::vector<double> out(v0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * v0[i] + t * v1[i];
  return out;
}

}  // namespace

std::vector<double> slerp(std::span<const double> v0, std::span<const double> v1, double t, double eps) {
  if (v0.size() != v1.size()) throw Error(ErrorCode::kInvalidSpec, "slerp inputs differ in length");
  double dot = 0.0, n0 = 0.0, n1 = 0.0;
  for (std::size_t i = 0; i < v0.size(); ++i) {
    dot += v0[i] * v1[i];
    n0 += v0[i] * v0[i];
    n1 += v1[i] * v1[i];
  }
  if (n0 == 0.0 || n1 == 0.0) throw Error(ErrorCode::kZeroNormVector, "slerp input has zero norm");
  const double cos_omega = std::clamp(dot / (std::sqrt(n0) * std::sqrt(n1)), -1.0, 1.0);
  if (std::abs(cos_omega) > 1.0 - eps) return lerp(v0, v1, t);
  const double omega = std::acos(cos_omega);
  const double sin_omega = std::sin(omega);
  const double c0 = std::sin((1.0 - t) * omega) / sin_omega;
  const double c1 = std::sin(t * omega) / sin_omega;
  std::vector<double> out(v0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * v0[i] + c1 * v1[i];
  return out;
}

TensorMap slerp_merge(const TensorMap& model0, const TensorMap& model1, const MergeSpec& spec,
                      const NameSet& names) {
  require_names(model0, names);
  require_names(model1, names);
  if (spec.carrier > 1) throw Error(ErrorCode::kInvalidSpec, "carrier index out of range");
  TensorMap out = spec.carrier == 0 ? model0 : model1;
  for (const std::string& name : names) {
    const Tensor& a = model0.at(name);
    const Tensor& b = model1.at(name);
    if (a.shape != b.shape) throw Error(ErrorCode::kIncompatibleCheckpoints, "tensor '" + name + "' shape mismatch");
    const auto v0 = to_double(a);
    const auto v1 = to_double(b);
    const bool zero = std::all_of(v0.begin(), v0.end(), [](double v) { return v == 0.0; }) ||
                      std::all_of(v1.begin(), v1.end(), [](double v) { return v == 0.0; });
    const auto merged = zero ? lerp(v0, v1, spec.slerp_t) : slerp(v0, v1, spec.slerp_t, spec.collinear_eps);
    out.assign(name, to_tensor(a.shape, merged));
  }
  return out;
}

TensorMap apply_merge(std::span<const TensorMap> models, const TensorMap* init, const MergeSpec& spec,
                      const GroupRules& rules) {
  require_models(models);
  spec.validate(models.size());
  const bool needs_init = spec.algorithm == Algorithm::kTies || spec.algorithm == Algorithm::kDare;
  if (needs_init && init == nullptr) {
    throw Error(ErrorCode::kInvalidSpec, std::string(to_string(spec.algorithm)) + " needs an init checkpoint");
  }
  require_compatible_with(models, needs_init ? init : nullptr);
  const NameSet names = select_params(models.front().names(), spec.tau, rules);
  switch (spec.algorithm) {
    case Algorithm::kSoup: return soup_merge(models, spec.weights, names, spec.carrier);
    case Algorithm::kTies: return ties_merge(models, *init, spec, names);
    case Algorithm::kDare: return dare_merge(models, *init, spec, names);
    case Algorithm::kSlerp: return slerp_merge(models[0], models[1], spec, names);
  }
  throw Error(ErrorCode::kInvalidSpec, "unknown algorithm");
}

}  // namespace gmerge
