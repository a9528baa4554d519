#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "viewflow/tensor.hpp"

namespace viewflow {

/// Ordered archive of uniquely named float32 tensors.
class WeightContainer {
 public:
  struct Entry {
    std::string name;
    TensorF value;
    bool operator==(const Entry&) const = default;
  };

  /// Throws ContractError on a duplicate name.
  void add(std::string name, TensorF value);
  /// Replaces an existing entry or appends a new one.
  void set(std::string name, TensorF value);

  const TensorF* find(std::string_view name) const;
  const TensorF& at(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name) != nullptr; }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  bool operator==(const WeightContainer&) const = default;

 private:
  std::vector<Entry> entries_;
};

/// VWTC layout (all integers little-endian):
///   "VWTC", u32 version = 1, u32 tensor count, then per tensor
///   u32 name length, UTF-8 name, u8 dtype (0 = float32), u8 ndim,
///   ndim x u64 dims, row-major float32 payload.
void write_weights(const std::filesystem::path& path, const WeightContainer& weights);

/// Validates the layout while reading. Malformed or truncated files raise
/// IntegrityError carrying the byte offset; NaN/Inf payloads raise
/// NumericError naming the tensor.
WeightContainer read_weights(const std::filesystem::path& path);

}  // namespace viewflow
