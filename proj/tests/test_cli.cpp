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

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "gmerge/tensor_store.hpp"
#include "json.hpp"
#include "support/test_util.hpp"

namespace gmerge::cli {
namespace {

using gmerge::testing::TempDir;
using nlohmann::json;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

constexpr const char* kTask = R"(toy:{"seed":3,"n_train_per_slice":60,"n_val":80})";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const Outcome o = call({"toy", "--task", kTask, "--out-dir", dir_.file("toy"), "--epochs", "50"});
    ASSERT_EQ(o.code, 0) << o.err;
    init_ = dir_.file("toy/init.gm");
    a_ = dir_.file("toy/slice_0.gm");
    b_ = dir_.file("toy/slice_1.gm");
  }

  TempDir dir_;
  std::string init_, a_, b_;
};

TEST(CliBasicsTest, VersionAndHelp) {
  const Outcome v = call({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("GMRG1"), std::string::npos);
  const Outcome h = call({"merge", "--help"});
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("--models"), std::string::npos);
  EXPECT_EQ(call({}).code, kExitUsage);
  EXPECT_EQ(call({"merge", "--no-such-flag"}).code, kExitUsage);
}

TEST(CliBasicsTest, ExitCodeTable) {
  EXPECT_EQ(exit_code_for(ErrorCode::kConfigError), kExitUsage);
  EXPECT_EQ(exit_code_for(ErrorCode::kBadMagic), kExitData);
  EXPECT_EQ(exit_code_for(ErrorCode::kEvaluatorFailure), kExitExternal);
  EXPECT_EQ(exit_code_for(ErrorCode::kAdapterExit), kExitExternal);
}

TEST_F(CliTest, ToyWritesInitAndSlices) {
  const TensorMap init = load_checkpoint(init_);
  EXPECT_EQ(init.metadata().at("role"), "init");
  EXPECT_EQ(load_checkpoint(b_).metadata().at("slice"), "1");
}

TEST_F(CliTest, MergeSoupLoadsBackCompatibly) {
  const std::string out = dir_.file("soup.gm");
  const Outcome o = call({"merge", "--models", a_, b_, "--algo", "soup", "--out", out});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(o.out.empty());
  const TensorMap merged = load_checkpoint(out);
  const std::vector<TensorMap> pair{merged, load_checkpoint(a_)};
  EXPECT_TRUE(validate_compat(pair).compatible);
  const float wa = load_checkpoint(a_).at("linear.weight").data[0];
  const float wb = load_checkpoint(b_).at("linear.weight").data[0];
  EXPECT_NEAR(merged.at("linear.weight").data[0], 0.5f * (wa + wb), 1e-6);
}

TEST_F(CliTest, MissingModelsIsUsageError) {
  const Outcome o = call({"merge", "--algo", "soup", "--out", dir_.file("x.gm")});
  EXPECT_EQ(o.code, kExitUsage);
  EXPECT_NE(o.err.find("usage:"), std::string::npos);
  EXPECT_NE(o.err.find("--models"), std::string::npos);
}

TEST_F(CliTest, CorruptCheckpointNamesFile) {
  const std::string bad = dir_.file("corrupt.gm");
  std::ofstream(bad, std::ios::binary) << "GMRG1garbage";
  const Outcome o = call({"merge", "--models", a_, bad, "--out", dir_.file("x.gm")});
  EXPECT_EQ(o.code, kExitData);
  EXPECT_NE(o.err.find(bad), std::string::npos) << o.err;
}

TEST_F(CliTest, BadConfigValuesAreUsageErrors) {
  EXPECT_EQ(call({"merge", "--models", a_, b_, "--algo", "dare", "--p", "1.0", "--out", dir_.file("x.gm")}).code,
            kExitUsage);
  const std::string cfg = dir_.file("cfg.json");
  std::ofstream(cfg) << R"({"merge":{"algo":"soup","wieghts":[1]}})";
  EXPECT_EQ(call({"merge", "--config", cfg, "--models", a_, "--out", dir_.file("x.gm")}).code, kExitUsage);
}

TEST_F(CliTest, EvaluatorFailureExitsThree) {
  const Outcome o = call({"search", "--models", a_, b_, "--evaluator", "exec:exit 5", "--iterations", "2"});
  EXPECT_EQ(o.code, kExitExternal) << o.err;
}

TEST_F(CliTest, InspectChecksumsAndJson) {
  const std::string copy = dir_.file("copy.gm");
  std::ofstream(copy, std::ios::binary) << slurp(a_);
  const Outcome x = call({"inspect", a_, "--json"});
  const Outcome y = call({"inspect", "--in", copy, "--json"});
  ASSERT_EQ(x.code, 0) << x.err;
  ASSERT_EQ(y.code, 0) << y.err;
  const json jx = json::parse(x.out), jy = json::parse(y.out);
  EXPECT_EQ(jx["sha256"], jy["sha256"]);
  EXPECT_EQ(jx["sha256"].get<std::string>().size(), 64u);
  EXPECT_EQ(jx["parameters"], 3);
  ASSERT_EQ(jx["tensors"].size(), 2u);
  const Outcome text = call({"inspect", a_});
  ASSERT_EQ(text.code, 0);
  EXPECT_NE(text.out.find(jx["sha256"].get<std::string>()), std::string::npos);
  for (const auto& t : jx["tensors"]) EXPECT_NE(text.out.find(t["name"].get<std::string>()), std::string::npos);
  EXPECT_EQ(call({"inspect", a_}).out, text.out);
}

TEST_F(CliTest, ConvertRoundTrip) {
  const std::string as_json = dir_.file("a.json"), back = dir_.file("back.gm");
  ASSERT_EQ(call({"convert", "--in", a_, "--out", as_json}).code, 0);
  ASSERT_EQ(call({"convert", "--in", as_json, "--out", back}).code, 0);
  // The plain JSON dump carries tensors only, so metadata does not survive.
  const TensorMap original = load_checkpoint(a_), restored = load_checkpoint(back);
  EXPECT_TRUE(restored.metadata().empty());
  ASSERT_EQ(restored.names(), original.names());
  for (const auto& [name, t] : original) {
    EXPECT_EQ(restored.at(name).shape, t.shape);
    EXPECT_EQ(restored.at(name).data, t.data);
  }
}

TEST_F(CliTest, ConfigFileEqualsFlags) {
  const std::vector<std::string> flags{"--models", a_,          b_,   "--algo",   "ties", "--k",
                                       "40",       "--lambda", "0.7", "--seed",   "9",    "--iterations",
                                       "7",        "--evaluator", kTask};
  std::vector<std::string> flagged{"search"};
  flagged.insert(flagged.end(), flags.begin(), flags.end());
  flagged.push_back("--dump-config");
  const Outcome full = call(flagged);
  ASSERT_EQ(full.code, 0) << full.err;

  const std::string cfg = dir_.file("cfg.json");
  std::ofstream(cfg) << json{{"seed", 9},
                             {"evaluator", kTask},
                             {"io", {{"models", {a_, b_}}}},
                             {"merge", {{"algo", "ties"}, {"k", 10}}},
                             {"search", {{"iterations", 7}}}}
                            .dump();
  const Outcome mixed = call({"search", "--config", cfg, "--k", "40", "--lambda", "0.7", "--dump-config"});
  ASSERT_EQ(mixed.code, 0) << mixed.err;
  EXPECT_EQ(mixed.out, full.out);
}

TEST_F(CliTest, SearchReportsAreByteIdentical) {
  auto run_once = [&](const std::string& name) {
    const std::string report = dir_.file(name);
    const Outcome o = call({"search", "--models", a_, b_, "--init", init_, "--evaluator", kTask, "--algo", "ties",
                            "--iterations", "12", "--seed", "5", "--report", report});
    EXPECT_EQ(o.code, 0) << o.err;
    return slurp(report);
  };
  const std::string first = run_once("r1.jsonl");
  EXPECT_EQ(first, run_once("r2.jsonl"));
  std::istringstream lines(first);
  std::string line;
  int count = 0;
  double best = 0.0;
  while (std::getline(lines, line)) {
    const json rec = json::parse(line);
    EXPECT_EQ(rec["iter"], count);
    EXPECT_GE(rec["best"].get<double>(), best);
    best = rec["best"].get<double>();
    ++count;
  }
  EXPECT_EQ(count, 12);
}

TEST_F(CliTest, EvalPrintsScore) {
  const Outcome o = call({"eval", "--model", a_, "--task", kTask});
  ASSERT_EQ(o.code, 0) << o.err;
  const double score = std::stod(o.out);
  EXPECT_GE(score, 0.0);
  EXPECT_LE(score, 1.0);
}

TEST(CliSdgTest, AllocateAndPipeline) {
  TempDir dir;
  const Outcome alloc = call({"sdg", "allocate", "--total", "10", "--rd", "0.3", "--ri", "0.3", "--rp", "0.2"});
  ASSERT_EQ(alloc.code, 0) << alloc.err;
  const json counts = json::parse(alloc.out);
  EXPECT_EQ(counts["jailbreak"], 2);
  EXPECT_EQ(call({"sdg", "allocate", "--total", "7", "--rd", "0.5", "--ri", "0.5", "--rp", "0.5"}).code, kExitUsage);

  const std::string in = dir.file("in.jsonl"), aug = dir.file("aug.jsonl"), dd = dir.file("dd.jsonl");
  std::ofstream(in) << R"({"prompt":"Hello There","label":"safe"})" << "\n"
                    << R"({"prompt":"hello there","label":"unsafe"})" << "\n";
  ASSERT_EQ(call({"sdg", "augment", "--in", in, "--out", aug, "--probs", "lowercase=1"}).code, 0);
  EXPECT_EQ(slurp(aug).find("Hello"), std::string::npos);
  ASSERT_EQ(call({"sdg", "dedup", "--in", aug, "--out", dd, "--threshold", "1"}).code, 0);
  const std::string deduped = slurp(dd);
  EXPECT_EQ(std::count(deduped.begin(), deduped.end(), '\n'), 1);

  const std::string policy = dir.file("policy.json");
  std::ofstream(policy) << R"({"name":"p","description":"Flag harmful requests","allowed":[],"disallowed":[]})";
  const Outcome fmt = call({"sdg", "format", "--in", dd, "--policy", policy});
  ASSERT_EQ(fmt.code, 0) << fmt.err;
  EXPECT_NE(fmt.out.find("Instruct: Flag harmful requests[SEP]"), std::string::npos) << fmt.out;

  const Outcome failing = call({"sdg", "generate", "--policy", policy, "--adapter", "false", "--total", "2", "--rd",
                                "1", "--ri", "0", "--rp", "0", "--out", dir.file("gen.jsonl")});
  EXPECT_EQ(failing.code, kExitExternal) << failing.err;
}

}  // namespace
}  // namespace gmerge::cli
