#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "metawaf/tensor.h"

namespace metawaf {

/// Named-tensor container: a JSON metadata block followed by named dense
/// matrices. On disk (all integers little-endian):
///
///   "MWTENSOR" u32 version=1
///   u32 meta_len, meta_len bytes of JSON
///   u32 count, then per tensor:
///     u32 name_len, name bytes, u64 rows, u64 cols,
///     rows*cols IEEE-754 doubles in column-major order
struct NamedTensors {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(std::string name, Matrix m) { tensors.emplace_back(std::move(name), std::move(m)); }
  bool contains(std::string_view name) const;
  /// Throws std::out_of_range naming the missing tensor.
  const Matrix& at(std::string_view name) const;
};

std::string encode_tensors(const NamedTensors& file);
NamedTensors decode_tensors(std::string_view bytes);

void write_tensors(const std::filesystem::path& path, const NamedTensors& file);
NamedTensors read_tensors(const std::filesystem::path& path);

}  // namespace metawaf
