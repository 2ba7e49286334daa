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

#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gmerge/tensor_store.hpp"

namespace gmerge::testing {

// Creates a fresh directory under the system temp dir and removes it on exit.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("gmerge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline TensorMap make_map(std::initializer_list<std::pair<std::string, std::vector<float>>> entries) {
  TensorMap map;
  for (const auto& [name, values] : entries) {
    map.insert(name, Tensor({static_cast<std::int64_t>(values.size())}, values));
  }
  return map;
}

inline std::vector<float> values_of(const TensorMap& map, const std::string& name) { return map.at(name).data; }

// Random map with 1..max_tensors tensors of up to max_elements values each.
inline TensorMap random_map(std::mt19937_64& gen, int max_tensors, int max_elements) {
  std::uniform_int_distribution<int> n_tensors(1, max_tensors);
  std::uniform_int_distribution<int> rank(0, 3);
  std::uniform_real_distribution<float> value(-4.0f, 4.0f);
  TensorMap map;
  const int n = n_tensors(gen);
  for (int t = 0; t < n; ++t) {
    Shape shape;
    const int r = rank(gen);
    std::size_t numel = 1;
    for (int d = 0; d < r; ++d) {
      std::uniform_int_distribution<int> dim(0, 4);
      int size = dim(gen);
      if (numel * static_cast<std::size_t>(size) > static_cast<std::size_t>(max_elements)) size = 1;
      shape.push_back(size);
      numel *= static_cast<std::size_t>(size);
    }
    std::vector<float> data(numel);
    for (float& v : data) v = value(gen);
    map.insert("t" + std::to_string(t) + ".w" + std::to_string(gen() % 100), Tensor(shape, data));
  }
  if (gen() % 2) map.metadata()["model"] = "m" + std::to_string(gen() % 1000);
  return map;
}

// Same names and shapes as `like`, fresh values.
inline TensorMap random_like(std::mt19937_64& gen, const TensorMap& like) {
  std::uniform_real_distribution<float> value(-4.0f, 4.0f);
  TensorMap out;
  for (const auto& [name, t] : like) {
    std::vector<float> data(t.numel());
    for (float& v : data) v = value(gen);
    out.insert(name, Tensor(t.shape, data));
  }
  return out;
}

}  // namespace gmerge::testing
