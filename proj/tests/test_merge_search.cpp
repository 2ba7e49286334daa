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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "gmerge/error.hpp"
#include "gmerge/toy_eval.hpp"
#include "support/test_util.hpp"

namespace gmerge {
namespace {

using testing::make_map;

double logistic_ref(double z) { return 1.0 / (1.0 + std::exp(-z)); }

const std::vector<MergeType> kTaus{kAllMergeTypes.begin(), kAllMergeTypes.end()};

TEST(Algorithm1Test, HandComputedIncrement) {
  const ArmIncrement inc = algorithm1_increment(0.8, 0.6);
  const double s = logistic_ref(0.2);
  EXPECT_NEAR(s, 0.5498340, 1e-7);
  EXPECT_NEAR(inc.alpha, 0.8 * s + 0.8, 1e-12);
  EXPECT_NEAR(inc.beta, 0.2 * s + 0.2, 1e-12);
  EXPECT_NEAR(inc.alpha, 1.2398672, 1e-7);
  EXPECT_NEAR(inc.beta, 0.3099668, 1e-7);
}

TEST(Algorithm1Test, IncrementsAreBounded) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const ArmIncrement inc = algorithm1_increment(u(gen), u(gen));
    EXPECT_GT(inc.alpha, 0.0);
    EXPECT_LE(inc.alpha, 2.0);
    EXPECT_GT(inc.beta, 0.0);
    EXPECT_LE(inc.beta, 2.0);
  }
}

TEST(UpdateTest, ExpectedReward) {
  BanditState state = BanditState::fresh(2);
  update(state, {{0.5, 0.5}, MergeType::kFfn}, 1.0, TensorMap{}, UpdateRule::kExpectedReward);
  EXPECT_DOUBLE_EQ(state.model_arms[0].alpha, 1.5);
  EXPECT_DOUBLE_EQ(state.model_arms[1].alpha, 1.5);
  EXPECT_DOUBLE_EQ(state.model_arms[0].beta, 1.0);
  EXPECT_DOUBLE_EQ(state.tau_arm(MergeType::kFfn).alpha, 2.0);
  EXPECT_DOUBLE_EQ(state.tau_arm(MergeType::kFfn).beta, 1.0);
  EXPECT_DOUBLE_EQ(state.tau_arm(MergeType::kFull).alpha, 1.0);
}

TEST(UpdateTest, Algorithm1SkipsZeroWeightArms) {
  BanditState state = BanditState::fresh(2);
  state.best_score = 0.6;
  update(state, {{1.0, 0.0}, MergeType::kFull}, 0.8, TensorMap{}, UpdateRule::kAlgorithm1, FbestTiming::kPre);
  EXPECT_NEAR(state.model_arms[0].alpha - 1.0, 1.2398672, 1e-7);
  EXPECT_NEAR(state.model_arms[0].beta - 1.0, 0.3099668, 1e-7);
  EXPECT_EQ(state.model_arms[1].alpha, 1.0);
  EXPECT_EQ(state.model_arms[1].beta, 1.0);
  EXPECT_EQ(state.best_score, 0.8);
}

TEST(UpdateTest, FbestTimingPostUsesUpdatedBest) {
  BanditState state = BanditState::fresh(1);
  state.best_score = 0.6;
  update(state, {{1.0}, MergeType::kFull}, 0.8, TensorMap{}, UpdateRule::kAlgorithm1, FbestTiming::kPost);
  const ArmIncrement inc = algorithm1_increment(0.8, 0.8);
  EXPECT_DOUBLE_EQ(state.model_arms[0].alpha, 1.0 + inc.alpha);
  EXPECT_NEAR(inc.alpha, 0.8 * 0.5 + 0.8, 1e-15);
}

TEST(UpdateTest, BestTracksStrictImprovementsOnly) {
  BanditState state = BanditState::fresh(1);
  const TensorMap a = make_map({{"w", {1}}});
  const TensorMap b = make_map({{"w", {2}}});
  update(state, {{1.0}, MergeType::kFull}, 0.5, a, UpdateRule::kAlgorithm1);
  update(state, {{1.0}, MergeType::kFull}, 0.5, b, UpdateRule::kAlgorithm1);
  EXPECT_TRUE(bitwise_equal(state.best_params, a));
  update(state, {{1.0}, MergeType::kFull}, 0.2, b, UpdateRule::kAlgorithm1);
  EXPECT_EQ(state.best_score, 0.5);
}

TEST(UpdateTest, ScoreOutOfRange) {
  BanditState state = BanditState::fresh(1);
  for (double bad : {-0.1, 1.1, std::nan("")}) {
    try {
      update(state, {{1.0}, MergeType::kFull}, bad, TensorMap{}, UpdateRule::kAlgorithm1);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kScoreOutOfRange);
    }
  }
}

TEST(ThompsonSampleTest, DeterministicAndNormalized) {
  const BanditState state = BanditState::fresh(4);
  rng::CounterStream a(42), b(42);
  const SampledPoint pa = thompson_sample(state, kTaus, TauSampling::kArgmax, a);
  const SampledPoint pb = thompson_sample(state, kTaus, TauSampling::kArgmax, b);
  EXPECT_EQ(pa.weights, pb.weights);
  EXPECT_EQ(pa.tau, pb.tau);
  rng::CounterStream c(7);
  for (int i = 0; i < 1000; ++i) {
    const SampledPoint p = thompson_sample(state, kTaus, TauSampling::kCategorical, c);
    double sum = 0.0;
    for (double w : p.weights) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(ThompsonSampleTest, StrongArmDominates) {
  BanditState state = BanditState::fresh(3);
  state.model_arms[0] = {1000, 1};
  state.model_arms[1] = {1, 1000};
  state.model_arms[2] = {1, 1000};
  rng::CounterStream stream(3);
  double mean = 0.0;
  for (int i = 0; i < 1000; ++i) mean += thompson_sample(state, kTaus, TauSampling::kArgmax, stream).weights[0];
  EXPECT_GT(mean / 1000.0, 0.9);
}

TEST(ThompsonSampleTest, TauArgmaxFollowsStrongArm) {
  BanditState state = BanditState::fresh(1);
  state.tau_arm(MergeType::kBase) = {500, 1};
  rng::CounterStream stream(9);
  int base = 0;
  for (int i = 0; i < 200; ++i) base += thompson_sample(state, kTaus, TauSampling::kArgmax, stream).tau == MergeType::kBase;
  EXPECT_GT(base, 190);
}

TEST(RandomSampleTest, SingleModel) {
  rng::CounterStream stream(1);
  EXPECT_EQ(random_sample(stream, 1, kTaus).weights, std::vector<double>{1.0});
}

TEST(RandomSampleTest, DirichletMeansAndUniformTau) {
  rng::CounterStream stream(2024);
  std::vector<double> mean(3, 0.0);
  std::map<MergeType, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const SampledPoint p = random_sample(stream, 3, kTaus);
    for (int j = 0; j < 3; ++j) mean[j] += p.weights[j] / draws;
    ++counts[p.tau];
  }
  for (double m : mean) EXPECT_NEAR(m, 1.0 / 3.0, 0.02);
  double chi2 = 0.0;
  for (MergeType tau : kTaus) {
    const double expected = draws / 4.0;
    EXPECT_NEAR(counts[tau] / static_cast<double>(draws), 0.25, 0.03);
    chi2 += (counts[tau] - expected) * (counts[tau] - expected) / expected;
  }
  EXPECT_LT(chi2, 16.27);  // df = 3, p = 0.001
}

TEST(EpsilonGreedyTest, ExploitsBestWhenEpsilonZero) {
  BanditState state = BanditState::fresh(2);
  state.history.push_back({0, {0.2, 0.8}, MergeType::kFfn, 0.4, 0.4, 0});
  state.history.push_back({1, {0.9, 0.1}, MergeType::kBase, 0.7, 0.7, 0});
  state.history.push_back({2, {0.5, 0.5}, MergeType::kFull, 0.6, 0.7, 0});
  rng::CounterStream stream(5);
  const SampledPoint p = epsilon_greedy_sample(state, 0.0, kTaus, stream);
  EXPECT_EQ(p.weights, (std::vector<double>{0.9, 0.1}));
  EXPECT_EQ(p.tau, MergeType::kBase);
}

TEST(EpsilonGreedyTest, EpsilonOneIsRandomSample) {
  BanditState state = BanditState::fresh(3);
  state.history.push_back({0, {0.2, 0.3, 0.5}, MergeType::kFfn, 0.9, 0.9, 0});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    rng::CounterStream a(seed), b(seed);
    const SampledPoint p = epsilon_greedy_sample(state, 1.0, kTaus, a);
    b.uniform();  // the exploration coin
    const SampledPoint q = random_sample(b, 3, kTaus);
    EXPECT_EQ(p.weights, q.weights);
    EXPECT_EQ(p.tau, q.tau);
  }
}

TEST(EpsilonGreedyTest, ExploresWithoutHistory) {
  const BanditState state = BanditState::fresh(2);
  rng::CounterStream stream(5);
  const SampledPoint p = epsilon_greedy_sample(state, 0.0, kTaus, stream);
  EXPECT_EQ(p.weights.size(), 2u);
}

class RunSearchTest : public ::testing::Test {
 protected:
  std::vector<TensorMap> models{make_map({{"attn.q", {1, 0}}, {"classifier.b", {0.5}}}),
                                make_map({{"attn.q", {0, 1}}, {"classifier.b", {-0.5}}})};
  TensorMap init = make_map({{"attn.q", {0, 0}}, {"classifier.b", {0}}});
  GroupRules rules = GroupRules::defaults();
};

TEST_F(RunSearchTest, ConstantEvaluatorSingleIteration) {
  SearchConfig config;
  config.sampler = Sampler::kRandom;
  config.iterations = 1;
  int calls = 0;
  const SearchResult result = run_search(models, &init, [&](const TensorMap&) { return ++calls, 0.7; }, config, rules);
  EXPECT_EQ(result.best_score, 0.7);
  EXPECT_EQ(result.history.size(), 1u);
  EXPECT_EQ(calls, 1);
}

TEST_F(RunSearchTest, ExactEvaluatorCallCountAndMonotoneBest) {
  for (Sampler sampler : {Sampler::kThompson, Sampler::kEpsilonGreedy, Sampler::kRandom}) {
    for (Algorithm algo : {Algorithm::kSoup, Algorithm::kTies, Algorithm::kDare, Algorithm::kSlerp}) {
      SearchConfig config;
      config.sampler = sampler;
      config.iterations = 17;
      config.merge.algorithm = algo;
      config.merge.dare_p = 0.3;
      config.seed = 11;
      int calls = 0;
      const auto eval = [&](const TensorMap& m) {
        ++calls;
        return std::clamp(0.5 + 0.3 * m.at("attn.q").data[0] - 0.2 * m.at("attn.q").data[1], 0.0, 1.0);
      };
      const SearchResult result = run_search(models, &init, eval, config, rules);
      EXPECT_EQ(calls, 17);
      ASSERT_EQ(result.history.size(), 17u);
      double running = 0.0;
      for (const auto& r : result.history) {
        running = std::max(running, r.score);
        EXPECT_EQ(r.best_after, running);
        double sum = 0.0;
        for (double w : r.weights) sum += w;
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
      EXPECT_EQ(result.best_score, running);
      EXPECT_EQ(eval(result.best_params), result.best_score);
    }
  }
}

TEST_F(RunSearchTest, DeterministicAndPrefixStable) {
  SearchConfig config;
  config.seed = 99;
  config.iterations = 20;
  config.merge.algorithm = Algorithm::kDare;
  config.merge.dare_p = 0.5;
  const auto eval = [](const TensorMap& m) { return std::clamp(0.5 + 0.1 * m.at("attn.q").data[0], 0.0, 1.0); };
  const SearchResult a = run_search(models, &init, eval, config, rules);
  const SearchResult b = run_search(models, &init, eval, config, rules);
  config.iterations = 10;
  const SearchResult prefix = run_search(models, &init, eval, config, rules);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(report_line(a.history[i], false), report_line(b.history[i], false));
  // Per-iteration streams make a shorter run a prefix of a longer one.
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(report_line(a.history[i], false), report_line(prefix.history[i], false));
}

TEST_F(RunSearchTest, EvaluatorFailureCarriesIteration) {
  SearchConfig config;
  config.iterations = 5;
  int calls = 0;
  const auto eval = [&](const TensorMap&) -> double {
    if (++calls == 4) throw std::runtime_error("boom");
    return 0.5;
  };
  try {
    run_search(models, &init, eval, config, rules);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEvaluatorFailure);
    EXPECT_NE(std::string(e.what()).find("iteration 3"), std::string::npos);
  }
}

TEST_F(RunSearchTest, IncompatibleModels) {
  const std::vector<TensorMap> bad{models[0], make_map({{"other", {1}}})};
  SearchConfig config;
  try {
    run_search(bad, &init, [](const TensorMap&) { return 0.5; }, config, rules);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIncompatibleCheckpoints);
  }
}

TEST_F(RunSearchTest, SkipsMergeTypesWithEmptySelection) {
  SearchConfig config;
  config.iterations = 30;
  config.sampler = Sampler::kRandom;
  const SearchResult r = run_search(models, &init, [](const TensorMap&) { return 0.5; }, config, rules);
  for (const auto& rec : r.history) EXPECT_NE(rec.tau, MergeType::kFfn);
}

TEST_F(RunSearchTest, TopKLimitsArms) {
  std::vector<TensorMap> many = models;
  many.push_back(make_map({{"attn.q", {2, 2}}, {"classifier.b", {0}}}));
  SearchConfig config;
  config.iterations = 3;
  config.top_k_models = 2;
  const SearchResult r = run_search(many, &init, [](const TensorMap&) { return 0.5; }, config, rules);
  EXPECT_EQ(r.final_state.model_arms.size(), 2u);
  EXPECT_EQ(r.history.front().weights.size(), 2u);
}

TEST(RunSearchConvergenceTest, TwoArmRewardFavoursA) {
  // Model A carries w = 1, model B w = 0; the soup weight on A is the merged
  // value, and the reward depends only on which weight dominates.
  const std::vector<TensorMap> models{make_map({{"w", {1}}}), make_map({{"w", {0}}})};
  const auto eval = [](const TensorMap& m) { return m.at("w").data[0] > 0.5f ? 0.9 : 0.1; };
  std::vector<double> fractions;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SearchConfig config;
    config.seed = seed;
    config.update_rule = UpdateRule::kExpectedReward;
    config.taus = {MergeType::kFull};
    const SearchResult r = run_search(models, nullptr, eval, config, GroupRules::defaults());
    int wins = 0;
    for (std::size_t i = 25; i < 50; ++i) wins += r.history[i].weights[0] > r.history[i].weights[1];
    fractions.push_back(wins / 25.0);
  }
  std::nth_element(fractions.begin(), fractions.begin() + 10, fractions.end());
  // Thompson keeps exploring, so only a clear majority is required.
  EXPECT_GT(fractions[10], 0.65);
}

TEST(RunSearchConvergenceTest, KnownOptimumFavoursTarget) {
  std::mt19937_64 gen(77);
  std::vector<double> margins;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TensorMap shape = make_map({{"x.w", {0, 0, 0, 0}}, {"y.w", {0, 0}}});
    const TensorMap a = testing::random_like(gen, shape);
    const TensorMap b = testing::random_like(gen, shape);
    const std::vector<TensorMap> models{a, b};
    SearchConfig config;
    config.seed = seed;
    config.update_rule = UpdateRule::kExpectedReward;
    config.taus = {MergeType::kFull};
    const SearchResult r = run_search(models, nullptr, known_optimum_evaluator(a), config, GroupRules::defaults());
    const auto means = posterior_mean_weights(r.final_state);
    margins.push_back(means[0] - means[1]);
  }
  std::nth_element(margins.begin(), margins.begin() + 10, margins.end());
  EXPECT_GT(margins[10], 0.0);
}

TEST(ReportLineTest, CanonicalKeysAndTimingFlag) {
  IterationRecord r{3, {0.25, 0.75}, MergeType::kAttention, 0.5, 0.75, 12};
  EXPECT_EQ(report_line(r, true), R"({"best":0.75,"iter":3,"ms":12,"score":0.5,"tau":"attention","weights":[0.25,0.75]})");
  EXPECT_EQ(report_line(r, false), R"({"best":0.75,"iter":3,"ms":0,"score":0.5,"tau":"attention","weights":[0.25,0.75]})");
}

TEST(RankModelsTest, StableDescending) {
  const std::vector<TensorMap> models{make_map({{"w", {0.1f}}}), make_map({{"w", {0.9f}}}),
                                      make_map({{"w", {0.1f}}})};
  const auto ranked = rank_models(models, [](const TensorMap& m) { return static_cast<double>(m.at("w").data[0]); });
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].index, 1u);
  EXPECT_EQ(ranked[1].index, 0u);
  EXPECT_EQ(ranked[2].index, 2u);
}

class ExecEvaluatorTest : public ::testing::Test {
 protected:
  testing::TempDir dir;
  std::string script(const std::string& name, const std::string& body) {
    const std::string path = dir.file(name);
    std::ofstream(path) << "#!/bin/sh\n" << body << "\n";
    std::filesystem::permissions(path, std::filesystem::perms::owner_all);
    return path;
  }
  TensorMap model = make_map({{"w", {1, 2}}});
};

TEST_F(ExecEvaluatorTest, ReadsScoreAndSeesCheckpoint) {
  // The script checks that its argument is a readable checkpoint.
  const auto path = script("ok.sh", "head -c 5 \"$1\" | grep -q GMRG1 && echo 0.625");
  EXPECT_EQ(make_exec_evaluator(path)(model), 0.625);
}

TEST_F(ExecEvaluatorTest, Failures) {
  for (const auto& body : {std::string("exit 3"), std::string("echo banana"), std::string("echo 1.5"),
                           std::string("echo -0.1"), std::string("true")}) {
    const auto path = script("bad.sh", body);
    try {
      make_exec_evaluator(path)(model);
      FAIL() << body;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kEvaluatorFailure) << body;
    }
  }
}

TEST(SearchConfigTest, Validation) {
  SearchConfig config;
  EXPECT_NO_THROW(config.validate());
  config.iterations = 0;
  EXPECT_THROW(config.validate(), Error);
  config = SearchConfig{};
  config.epsilon = 1.5;
  EXPECT_THROW(config.validate(), Error);
  config = SearchConfig{};
  config.taus.clear();
  EXPECT_THROW(config.validate(), Error);
}

}  // namespace
}  // namespace gmerge
