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

// Named-tensor checkpoints and the GMRG1 container format.
//
// Layout on disk:
//   "GMRG1" | u64 little-endian header length L | L bytes of JSON header |
//   packed little-endian f32 data
// The header is {"metadata":{...},"tensors":[{"dtype":"f32","name":...,
// "nbytes":...,"offset":...,"shape":[...]}...]} with tensors in
// lexicographic name order and offsets relative to the end of the header.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace gmerge {

inline constexpr std::string_view kCheckpointMagic = "GMRG1";

using Shape = std::vector<std::int64_t>;
using NameSet = std::set<std::string, std::less<>>;

// Number of elements implied by `shape`; an empty shape is a scalar.
std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() : data(1, 0.0f) {}
  Tensor(Shape s, std::vector<float> d);

  static Tensor scalar(float value) { return Tensor({}, {value}); }

  std::size_t numel() const { return data.size(); }
};

// Compares shapes and the bit patterns of the data.
bool bitwise_equal(const Tensor& a, const Tensor& b);

class TensorMap {
 public:
  using Entries = std::map<std::string, Tensor, std::less<>>;
  using Metadata = std::map<std::string, std::string, std::less<>>;

  TensorMap() = default;

  // Throws kMalformedInput on an empty or duplicate name.
  void insert(std::string name, Tensor tensor);
  // Inserts or overwrites.
  void assign(std::string name, Tensor tensor);

  bool contains(std::string_view name) const {
    return entries_.find(name) != entries_.end();
  }
  // Throws kUnknownName.
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  const Entries& entries() const { return entries_; }
  NameSet names() const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t parameter_count() const;

  const Metadata& metadata() const { return metadata_; }
  Metadata& metadata() { return metadata_; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  Entries entries_;
  Metadata metadata_;
};

bool bitwise_equal(const TensorMap& a, const TensorMap& b);

struct LoadOptions {
  bool allow_nonfinite = false;
};

std::string serialize_checkpoint(const TensorMap& map);
TensorMap parse_checkpoint(std::string_view bytes, const LoadOptions& options = {});

void save_checkpoint(const TensorMap& map, const std::filesystem::path& path);
TensorMap load_checkpoint(const std::filesystem::path& path,
                          const LoadOptions& options = {});

enum class MismatchKind { kMissing, kShape, kDtype };
std::string_view to_string(MismatchKind kind);

struct Mismatch {
  std::string name;
  MismatchKind kind;
  std::string details;
};

struct CompatReport {
  bool compatible = true;
  std::vector<Mismatch> mismatches;
};

// Every map is compared against the union of names; the first map is the
// reference for shapes.
CompatReport validate_compat(std::span<const TensorMap> maps);
CompatReport validate_compat(std::span<const TensorMap* const> maps);

// Throws kIncompatibleCheckpoints with the first mismatch when incompatible.
void require_compatible(std::span<const TensorMap* const> maps);

// Throws kUnknownName if a requested name is absent.
TensorMap subset(const TensorMap& map, const NameSet& names);

// Plain JSON interop: {"name": nested-arrays-or-number, ...}.
nlohmann::json tensors_to_json(const TensorMap& map);
TensorMap tensors_from_json(const nlohmann::json& doc);

}  // namespace gmerge
