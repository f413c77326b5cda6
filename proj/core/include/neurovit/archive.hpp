#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "neurovit/tensor.hpp"

namespace neurovit {

/// Named f32 tensors, kept in byte-wise sorted name order.
///
/// On-disk layout (little-endian): "NWA1" magic, u32 version (1), u32
/// tensor count, then per tensor: u16 name length, UTF-8 name bytes, u8
/// rank, rank x u32 dims, u8 dtype (0 = f32), row-major f32 payload.
class WeightArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  /// Throws DuplicateName if `name` is already present.
  void add(const std::string& name, Tensor tensor);
  /// Inserts or replaces.
  void set(const std::string& name, Tensor tensor);
  /// Throws MissingTensor.
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.contains(name); }

  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }
  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }
  std::vector<std::string> names() const;

  /// Values compared bitwise.
  friend bool operator==(const WeightArchive& a, const WeightArchive& b);

 private:
  std::map<std::string, Tensor> tensors_;
};

std::vector<char> serialize_archive(const WeightArchive& archive);

/// Throws BadMagic, UnsupportedVersion, Truncated, DuplicateName,
/// UnsupportedDtype or ShapeMismatch (zero-sized dims).
WeightArchive deserialize_archive(std::span<const char> bytes);

void write_archive(const WeightArchive& archive, const std::filesystem::path& path);
WeightArchive read_archive(const std::filesystem::path& path);

}  // namespace neurovit
