#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace neurovit {

/// Every failure the library reports. The names double as the
/// machine-parsable codes printed by the command-line driver.
enum class Errc : std::uint8_t {
  // swc
  MalformedLine,
  DuplicateId,
  DanglingParent,
  CycleDetected,
  NonPositiveRadius,
  EmptyMorphology,
  // volume
  SizeMismatch,
  UnsupportedDtype,
  BadMeta,
  CoverageGap,
  AlignmentMismatch,
  // numerics / vit
  ShapeMismatch,
  BadHeadCount,
  NonSquareGrid,
  NonFinite,
  // transfer / archive
  BadDepth,
  BadChannels,
  MissingTensor,
  DimMismatch,
  BadMagic,
  UnsupportedVersion,
  Truncated,
  DuplicateName,
  // train
  EmptyDataset,
  NonFiniteLoss,
  // metrics
  EmptyMask,
  // config / io
  BadConfig,
  Io,
};

std::string_view errc_name(Errc code) noexcept;

/// True for failures caused by numerics blowing up rather than bad input.
bool is_numeric_failure(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, std::int64_t line = 0);

  Errc code() const noexcept { return code_; }
  /// 1-based source line for line-scoped parse faults, 0 otherwise.
  std::int64_t line() const noexcept { return line_; }

 private:
  Errc code_;
  std::int64_t line_;
};

}  // namespace neurovit
