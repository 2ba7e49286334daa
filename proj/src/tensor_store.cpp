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

#include "gmerge/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include "gmerge/error.hpp"

namespace gmerge {
namespace {

using nlohmann::json;

constexpr std::size_t kLengthBytes = 8;

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64_le(std::string_view bytes) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]);
  }
  return v;
}

void append_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float read_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<float>(bits);
}

[[noreturn]] void corrupt(const std::string& what) {
  throw Error(ErrorCode::kCorruptHeader, what);
}

std::uint64_t header_uint(const json& entry, const char* key) {
  auto it = entry.find(key);
  if (it == entry.end() || !it->is_number_unsigned()) {
    corrupt(std::string("tensor entry field '") + key + "' must be a nonnegative integer");
  }
  return it->get<std::uint64_t>();
}

struct HeaderEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset;
  std::uint64_t nbytes;
};

std::vector<HeaderEntry> parse_header_entries(const json& header) {
  if (!header.is_object()) corrupt("header is not a JSON object");
  auto tensors = header.find("tensors");
  if (tensors == header.end() || !tensors->is_array()) corrupt("header lacks a 'tensors' array");
  std::vector<HeaderEntry> entries;
  entries.reserve(tensors->size());
  for (const json& entry : *tensors) {
    if (!entry.is_object()) corrupt("tensor entry is not an object");
    HeaderEntry e;
    auto name = entry.find("name");
    if (name == entry.end() || !name->is_string() || name->get<std::string>().empty()) {
      corrupt("tensor entry needs a nonempty string 'name'");
    }
    e.name = name->get<std::string>();
    auto dtype = entry.find("dtype");
    if (dtype == entry.end() || *dtype != "f32") {
      corrupt("tensor '" + e.name + "' has unsupported dtype (only f32)");
    }
    auto shape = entry.find("shape");
    if (shape == entry.end() || !shape->is_array()) corrupt("tensor '" + e.name + "' lacks 'shape'");
    for (const json& dim : *shape) {
      if (!dim.is_number_unsigned()) corrupt("tensor '" + e.name + "' has a negative or non-integer dim");
      const auto d = dim.get<std::uint64_t>();
      if (d > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
        corrupt("tensor '" + e.name + "' dim overflows");
      }
      e.shape.push_back(static_cast<std::int64_t>(d));
    }
    e.offset = header_uint(entry, "offset");
    e.nbytes = header_uint(entry, "nbytes");
    std::uint64_t numel = 1;
    for (auto d : e.shape) {
      if (d != 0 && numel > std::numeric_limits<std::uint64_t>::max() / 4 / static_cast<std::uint64_t>(d)) {
        corrupt("tensor '" + e.name + "' element count overflows");
      }
      numel *= static_cast<std::uint64_t>(d);
    }
    if (e.nbytes != numel * 4) {
      corrupt("tensor '" + e.name + "' nbytes " + std::to_string(e.nbytes) +
              " does not match shape " + shape_to_string(e.shape));
    }
    if (e.offset > std::numeric_limits<std::uint64_t>::max() - e.nbytes) {
      corrupt("tensor '" + e.name + "' offset overflows");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
  for (auto dim : shape) {
    if (dim < 0) throw Error(ErrorCode::kMalformedInput, "negative dimension in shape " + shape_to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorCode::kMalformedInput,
                "shape " + shape_to_string(shape) + " implies " + std::to_string(shape_numel(shape)) +
                    " elements but data has " + std::to_string(data.size()));
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && a.data.size() == b.data.size() &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

void TensorMap::insert(std::string name, Tensor tensor) {
  if (name.empty()) throw Error(ErrorCode::kMalformedInput, "tensor name must be nonempty");
  auto [it, inserted] = entries_.emplace(std::move(name), std::move(tensor));
  if (!inserted) throw Error(ErrorCode::kMalformedInput, "duplicate tensor name '" + it->first + "'");
}

void TensorMap::assign(std::string name, Tensor tensor) {
  if (name.empty()) throw Error(ErrorCode::kMalformedInput, "tensor name must be nonempty");
  entries_.insert_or_assign(std::move(name), std::move(tensor));
}

const Tensor& TensorMap::at(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorCode::kUnknownName, "no tensor named '" + std::string(name) + "'");
  return it->second;
}

Tensor& TensorMap::at(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorCode::kUnknownName, "no tensor named '" + std::string(name) + "'");
  return it->second;
}

NameSet TensorMap::names() const {
  NameSet out;
  for (const auto& [name, _] : entries_) out.insert(name);
  return out;
}

std::size_t TensorMap::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

bool bitwise_equal(const TensorMap& a, const TensorMap& b) {
  if (a.size() != b.size() || a.metadata() != b.metadata()) return false;
  auto ib = b.begin();
  for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bitwise_equal(ia->second, ib->second)) return false;
  }
  return true;
}

std::string serialize_checkpoint(const TensorMap& map) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : map) {
    const std::uint64_t nbytes = t.numel() * 4;
    tensors.push_back({{"name", name},
                       {"dtype", "f32"},
                       {"shape", t.shape},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  json metadata = json::object();
  for (const auto& [k, v] : map.metadata()) metadata[k] = v;
  const json header = {{"tensors", std::move(tensors)}, {"metadata", std::move(metadata)}};
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(kCheckpointMagic.size() + kLengthBytes + header_text.size() + offset);
  out.append(kCheckpointMagic);
  append_u64_le(out, header_text.size());
  out.append(header_text);
  for (const auto& [_, t] : map) {
    for (float f : t.data) append_f32_le(out, f);
  }
  return out;
}

TensorMap parse_checkpoint(std::string_view bytes, const LoadOptions& options) {
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw Error(ErrorCode::kBadMagic, "missing GMRG1 magic");
  }
  bytes.remove_prefix(kCheckpointMagic.size());
  if (bytes.size() < kLengthBytes) throw Error(ErrorCode::kTruncatedData, "file ends inside the header length");
  const std::uint64_t header_len = read_u64_le(bytes);
  bytes.remove_prefix(kLengthBytes);
  if (header_len > bytes.size()) {
    throw Error(ErrorCode::kTruncatedData, "header length " + std::to_string(header_len) + " exceeds file size");
  }
  json header;
  try {
    header = json::parse(bytes.substr(0, header_len));
  } catch (const json::parse_error& e) {
    corrupt(std::string("header JSON: ") + e.what());
  }
  const std::string_view data = bytes.substr(header_len);

  auto entries = parse_header_entries(header);

  TensorMap map;
  if (auto meta = header.find("metadata"); meta != header.end()) {
    if (!meta->is_object()) corrupt("'metadata' must be an object");
    for (const auto& [k, v] : meta->items()) {
      if (!v.is_string()) corrupt("metadata value for '" + k + "' must be a string");
      map.metadata()[k] = v.get<std::string>();
    }
  }

  std::vector<const HeaderEntry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(), [](const HeaderEntry* a, const HeaderEntry* b) {
    return a->offset < b->offset || (a->offset == b->offset && a->nbytes < b->nbytes);
  });
  std::uint64_t covered = 0;
  for (const HeaderEntry* e : by_offset) {
    if (e->nbytes > 0 && e->offset < covered) corrupt("tensor '" + e->name + "' overlaps another tensor");
    if (e->offset + e->nbytes > data.size()) {
      throw Error(ErrorCode::kTruncatedData, "tensor '" + e->name + "' extends past the end of the file");
    }
    covered = std::max(covered, e->offset + e->nbytes);
  }
  if (covered != data.size()) corrupt("data section has " + std::to_string(data.size() - covered) + " trailing bytes");

  for (const auto& e : entries) {
    std::vector<float> values(e.nbytes / 4);
    const char* p = data.data() + e.offset;
    for (std::size_t i = 0; i < values.size(); ++i, p += 4) {
      values[i] = read_f32_le(p);
      if (!options.allow_nonfinite && !std::isfinite(values[i])) {
        throw Error(ErrorCode::kNonFiniteValue,
                    "tensor '" + e.name + "' element " + std::to_string(i) + " is not finite");
      }
    }
    if (map.contains(e.name)) corrupt("duplicate tensor name '" + e.name + "'");
    map.insert(e.name, Tensor(e.shape, std::move(values)));
  }
  return map;
}

void save_checkpoint(const TensorMap& map, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorCode::kIoError, "failed writing '" + path.string() + "'");
}

TensorMap load_checkpoint(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_checkpoint(buffer.view(), options);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + std::string(e.what()).substr(to_string(e.code()).size() + 2));
  }
}

std::string_view to_string(MismatchKind kind) {
  switch (kind) {
    case MismatchKind::kMissing: return "missing";
    case MismatchKind::kShape: return "shape";
    case MismatchKind::kDtype: return "dtype";
  }
  return "unknown";
}

CompatReport validate_compat(std::span<const TensorMap* const> maps) {
  CompatReport report;
  if (maps.empty()) return report;
  NameSet all;
  for (const TensorMap* m : maps) {
    for (const auto& [name, _] : *m) all.insert(name);
  }
  for (const std::string& name : all) {
    const Tensor* reference = nullptr;
    std::vector<std::size_t> missing_in;
    bool shape_mismatch = false;
    std::string shapes;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      auto it = maps[i]->entries().find(name);
      if (it == maps[i]->entries().end()) {
        missing_in.push_back(i);
        continue;
      }
      if (!shapes.empty()) shapes += " vs ";
      shapes += shape_to_string(it->second.shape);
      if (reference == nullptr) {
        reference = &it->second;
      } else if (reference->shape != it->second.shape) {
        shape_mismatch = true;
      }
    }
    if (!missing_in.empty()) {
      std::string details = "absent from map";
      details += missing_in.size() > 1 ? "s" : "";
      for (std::size_t i = 0; i < missing_in.size(); ++i) {
        details += (i ? ", " : " ") + std::to_string(missing_in[i]);
      }
      report.mismatches.push_back({name, MismatchKind::kMissing, details});
    }
    if (shape_mismatch) report.mismatches.push_back({name, MismatchKind::kShape, shapes});
  }
  report.compatible = report.mismatches.empty();
  return report;
}

CompatReport validate_compat(std::span<const TensorMap> maps) {
  std::vector<const TensorMap*> ptrs;
  for (const auto& m : maps) ptrs.push_back(&m);
  return validate_compat(std::span<const TensorMap* const>(ptrs));
}

void require_compatible(std::span<const TensorMap* const> maps) {
  const CompatReport report = validate_compat(maps);
  if (!report.compatible) {
    const Mismatch& m = report.mismatches.front();
    throw Error(ErrorCode::kIncompatibleCheckpoints,
                "tensor '" + m.name + "' " + std::string(to_string(m.kind)) + " mismatch (" + m.details + ")" +
                    (report.mismatches.size() > 1
                         ? " and " + std::to_string(report.mismatches.size() - 1) + " more"
                         : ""));
  }
}

TensorMap subset(const TensorMap& map, const NameSet& names) {
  TensorMap out;
  for (const std::string& name : names) out.insert(name, map.at(name));
  out.metadata() = map.metadata();
  return out;
}

namespace {

json nested_values(const Tensor& t, std::size_t dim, std::size_t& cursor) {
  if (dim == t.shape.size()) return t.data[cursor++];
  json arr = json::array();
  for (std::int64_t i = 0; i < t.shape[dim]; ++i) arr.push_back(nested_values(t, dim + 1, cursor));
  return arr;
}

// Follows the first element at each depth.
void infer_shape(const json& node, Shape& shape) {
  if (node.is_number()) return;
  if (!node.is_array()) throw Error(ErrorCode::kMalformedInput, "tensor values must be numbers or arrays");
  shape.push_back(static_cast<std::int64_t>(node.size()));
  if (!node.empty()) infer_shape(node.front(), shape);
}

void flatten(const json& node, const Shape& shape, std::size_t depth, std::vector<float>& out,
             const std::string& name) {
  if (depth == shape.size()) {
    if (!node.is_number()) throw Error(ErrorCode::kMalformedInput, "tensor '" + name + "' is not rectangular");
    out.push_back(node.get<float>());
    return;
  }
  if (!node.is_array() || static_cast<std::int64_t>(node.size()) != shape[depth]) {
    throw Error(ErrorCode::kMalformedInput, "tensor '" + name + "' is not rectangular");
  }
  for (const json& child : node) flatten(child, shape, depth + 1, out, name);
}

}  // namespace

json tensors_to_json(const TensorMap& map) {
  json doc = json::object();
  for (const auto& [name, t] : map) {
    std::size_t cursor = 0;
    doc[name] = nested_values(t, 0, cursor);
  }
  return doc;
}

TensorMap tensors_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kMalformedInput, "tensor dump must be a JSON object");
  TensorMap map;
  for (const auto& [name, node] : doc.items()) {
    Shape shape;
    infer_shape(node, shape);
    // An empty innermost array leaves deeper dimensions unknown; they are
    // treated as absent, so [] is shape [0] and [[],[]] is shape [2,0].
    std::vector<float> values;
    flatten(node, shape, 0, values, name);
    map.insert(name, Tensor(shape, std::move(values)));
  }
  return map;
}

}  // namespace gmerge
