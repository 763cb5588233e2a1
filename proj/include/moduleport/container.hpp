/* Copyright 2026 The ModulePort Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// On-disk layout, all integers little-endian:
//
//   bytes [0, 8)        ASCII magic "PEFTXFR1"
//   bytes [8, 16)       u64 header length H
//   bytes [16, 16 + H)  UTF-8 JSON header, canonical (sorted keys, no spaces):
//                       {"meta":{k:v,...},
//                        "tensors":{name:{"dtype","nbytes","offset","shape"}}}
//   bytes [16 + H, ...) tensor payloads, IEEE-754 little-endian, packed in
//                       name order with no padding; offsets are relative to
//                       the start of this section.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moduleport/matrix.hpp"

namespace moduleport {

inline constexpr std::string_view kContainerMagic = "PEFTXFR1";

enum class DType { kF32, kF64 };

std::size_t DTypeSize(DType dtype);
std::string ToString(DType dtype);
DType ParseDType(const std::string& text);

struct TensorEntry {
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> shape;
  // Little-endian encoded values, product(shape) * DTypeSize(dtype) bytes.
  std::vector<std::uint8_t> payload;

  std::uint64_t element_count() const;
  friend bool operator==(const TensorEntry&, const TensorEntry&) = default;
};

// True when `name` is non-empty and only uses [A-Za-z0-9_./-].
bool IsValidTensorName(std::string_view name);

class TensorContainer {
 public:
  // Throws ConfigError on an invalid or duplicate name, ShapeError when the
  // payload does not match the shape.
  void Add(const std::string& name, TensorEntry entry);

  // Encodes the values with `dtype`; f32 rounds to nearest.
  void AddMatrix(const std::string& name, const Matrix& m, DType dtype);
  void AddVector(const std::string& name, std::span<const double> v, DType dtype);

  bool Contains(const std::string& name) const { return entries_.contains(name); }
  const TensorEntry& Get(const std::string& name) const;

  // Decoded to double. GetMatrix requires a 2-D tensor, GetVector a 1-D one.
  Matrix GetMatrix(const std::string& name) const;
  std::vector<double> GetVector(const std::string& name) const;

  void SetMeta(const std::string& key, std::string value) { meta_[key] = std::move(value); }
  bool HasMeta(const std::string& key) const { return meta_.contains(key); }
  // Throws FormatError when the key is missing.
  const std::string& GetMeta(const std::string& key) const;

  const std::map<std::string, TensorEntry>& entries() const { return entries_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;

 private:
  std::map<std::string, TensorEntry> entries_;
  std::map<std::string, std::string> meta_;
};

std::string SerializeContainer(const TensorContainer& c);
TensorContainer DeserializeContainer(std::string_view bytes);

// Writes to a sibling temporary file and renames it over `path`. Returns the
// number of bytes written.
std::size_t WriteContainer(const TensorContainer& c, const std::filesystem::path& path);
TensorContainer ReadContainer(const std::filesystem::path& path);

}  // namespace moduleport
