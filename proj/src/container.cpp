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

#include "moduleport/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "moduleport/error.hpp"

namespace moduleport {

namespace {

using nlohmann::json;

template <class T>
void AppendLittleEndian(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T LoadLittleEndian(const std::uint8_t* src) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::uint64_t CheckedProduct(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
      throw InconsistentShapeError("tensor shape overflows 64 bits");
    }
    n *= d;
  }
  return n;
}

std::vector<std::uint8_t> Encode(std::span<const double> values, DType dtype) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * DTypeSize(dtype));
  for (double v : values) {
    if (dtype == DType::kF64) {
      AppendLittleEndian(out, v);
    } else {
      AppendLittleEndian(out, static_cast<float>(v));
    }
  }
  return out;
}

std::vector<double> Decode(const TensorEntry& e) {
  const std::size_t n = static_cast<std::size_t>(e.element_count());
  std::vector<double> out(n);
  const std::uint8_t* p = e.payload.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = e.dtype == DType::kF64
                 ? LoadLittleEndian<double>(p + i * 8)
                 : static_cast<double>(LoadLittleEndian<float>(p + i * 4));
  }
  return out;
}

}  // namespace

std::size_t DTypeSize(DType dtype) { return dtype == DType::kF32 ? 4 : 8; }

std::string ToString(DType dtype) { return dtype == DType::kF32 ? "f32" : "f64"; }

DType ParseDType(const std::string& text) {
  if (text == "f32") return DType::kF32;
  if (text == "f64") return DType::kF64;
  throw MalformedHeaderError("unknown dtype '" + text + "'");
}

std::uint64_t TensorEntry::element_count() const { return CheckedProduct(shape); }

bool IsValidTensorName(std::string_view name) {
  return !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '.' || c == '/' || c == '-';
  });
}

void TensorContainer::Add(const std::string& name, TensorEntry entry) {
  if (!IsValidTensorName(name)) {
    throw ConfigError("invalid tensor name '" + name + "'");
  }
  if (entries_.contains(name)) {
    throw ConfigError("duplicate tensor name '" + name + "'");
  }
  if (entry.payload.size() != entry.element_count() * DTypeSize(entry.dtype)) {
    throw ShapeError("tensor '" + name + "' payload has " +
                     std::to_string(entry.payload.size()) + " bytes, shape implies " +
                     std::to_string(entry.element_count() * DTypeSize(entry.dtype)));
  }
  entries_.emplace(name, std::move(entry));
}

void TensorContainer::AddMatrix(const std::string& name, const Matrix& m, DType dtype) {
  Add(name, TensorEntry{dtype, {m.rows(), m.cols()}, Encode(m.values(), dtype)});
}

void TensorContainer::AddVector(const std::string& name, std::span<const double> v,
                                DType dtype) {
  Add(name, TensorEntry{dtype, {v.size()}, Encode(v, dtype)});
}

const TensorEntry& TensorContainer::Get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw FormatError("missing tensor '" + name + "'");
  return it->second;
}

Matrix TensorContainer::GetMatrix(const std::string& name) const {
  const TensorEntry& e = Get(name);
  if (e.shape.size() != 2) {
    throw ShapeError("tensor '" + name + "' has rank " + std::to_string(e.shape.size()) +
                     ", expected a matrix");
  }
  return Matrix(e.shape[0], e.shape[1], Decode(e));
}

std::vector<double> TensorContainer::GetVector(const std::string& name) const {
  const TensorEntry& e = Get(name);
  if (e.shape.size() != 1) {
    throw ShapeError("tensor '" + name + "' has rank " + std::to_string(e.shape.size()) +
                     ", expected a vector");
  }
  return Decode(e);
}

const std::string& TensorContainer::GetMeta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw FormatError("missing metadata key '" + key + "'");
  return it->second;
}

std::string SerializeContainer(const TensorContainer& c) {
  json header;
  header["meta"] = json::object();
  for (const auto& [k, v] : c.meta()) header["meta"][k] = v;
  header["tensors"] = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : c.entries()) {
    header["tensors"][name] = {{"dtype", ToString(e.dtype)},
                               {"shape", e.shape},
                               {"offset", offset},
                               {"nbytes", e.payload.size()}};
    offset += e.payload.size();
  }
  // nlohmann::json objects are std::map backed, so keys come out sorted.
  const std::string text = header.dump();

  std::vector<std::uint8_t> prefix;
  AppendLittleEndian<std::uint64_t>(prefix, text.size());
  std::string out;
  out.reserve(16 + text.size() + offset);
  out.append(kContainerMagic);
  out.append(reinterpret_cast<const char*>(prefix.data()), prefix.size());
  out.append(text);
  for (const auto& [name, e] : c.entries()) {
    out.append(reinterpret_cast<const char*>(e.payload.data()), e.payload.size());
  }
  return out;
}

TensorContainer DeserializeContainer(std::string_view bytes) {
  const std::size_t seen = std::min(bytes.size(), kContainerMagic.size());
  if (bytes.substr(0, seen) != kContainerMagic.substr(0, seen)) {
    throw BadMagicError("not a PEFTXFR1 container (bad magic)");
  }
  // A prefix of the magic is a cut-off file, not a foreign one.
  if (bytes.size() < kContainerMagic.size()) {
    throw TruncatedError("container ends inside the magic");
  }
  if (bytes.size() < 16) throw TruncatedError("container ends inside the header length");
  const auto* raw = reinterpret_cast<const std::uint8_t*>(bytes.data());
  const std::uint64_t header_len = LoadLittleEndian<std::uint64_t>(raw + 8);
  if (header_len > bytes.size() - 16) {
    throw TruncatedError("header length " + std::to_string(header_len) +
                         " runs past end of file");
  }
  const std::string_view header_text = bytes.substr(16, header_len);
  const std::string_view data = bytes.substr(16 + header_len);

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw MalformedHeaderError(std::string("header is not valid JSON: ") + e.what());
  }

  TensorContainer c;
  try {
    if (!header.is_object() || !header.contains("meta") || !header.contains("tensors") ||
        !header["meta"].is_object() || !header["tensors"].is_object()) {
      throw MalformedHeaderError("header must be an object with 'meta' and 'tensors'");
    }
    for (const auto& [k, v] : header["meta"].items()) {
      if (!v.is_string()) throw MalformedHeaderError("meta value for '" + k + "' is not a string");
      c.SetMeta(k, v.get<std::string>());
    }
    for (const auto& [name, desc] : header["tensors"].items()) {
      if (!desc.is_object()) throw MalformedHeaderError("tensor '" + name + "' is not an object");
      TensorEntry e;
      e.dtype = ParseDType(desc.at("dtype").get<std::string>());
      e.shape = desc.at("shape").get<std::vector<std::uint64_t>>();
      const auto offset = desc.at("offset").get<std::uint64_t>();
      const auto nbytes = desc.at("nbytes").get<std::uint64_t>();
      if (CheckedProduct(e.shape) > std::numeric_limits<std::uint64_t>::max() / 8 ||
          CheckedProduct(e.shape) * DTypeSize(e.dtype) != nbytes) {
        throw InconsistentShapeError("tensor '" + name + "' declares " +
                                     std::to_string(nbytes) +
                                     " bytes, inconsistent with its shape and dtype");
      }
      if (offset > data.size() || nbytes > data.size() - offset) {
        throw TruncatedError("tensor '" + name + "' payload runs past end of file");
      }
      const auto* begin = reinterpret_cast<const std::uint8_t*>(data.data()) + offset;
      e.payload.assign(begin, begin + nbytes);
      if (!IsValidTensorName(name)) {
        throw MalformedHeaderError("invalid tensor name '" + name + "'");
      }
      c.Add(name, std::move(e));
    }
  } catch (const json::exception& e) {
    throw MalformedHeaderError(std::string("malformed tensor record: ") + e.what());
  }
  return c;
}

std::size_t WriteContainer(const TensorContainer& c, const std::filesystem::path& path) {
  const std::string bytes = SerializeContainer(c);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move container into place at '" + path.string() + "'");
  }
  return bytes.size();
}

TensorContainer ReadContainer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return DeserializeContainer(bytes);
}

}  // namespace moduleport
