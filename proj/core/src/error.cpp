#include "neurovit/error.hpp"

namespace neurovit {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::DanglingParent: return "DanglingParent";
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::NonPositiveRadius: return "NonPositiveRadius";
    case Errc::EmptyMorphology: return "EmptyMorphology";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::UnsupportedDtype: return "UnsupportedDtype";
    case Errc::BadMeta: return "BadMeta";
    case Errc::CoverageGap: return "CoverageGap";
    case Errc::AlignmentMismatch: return "AlignmentMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::BadHeadCount: return "BadHeadCount";
    case Errc::NonSquareGrid: return "NonSquareGrid";
    case Errc::NonFinite: return "NonFinite";
    case Errc::BadDepth: return "BadDepth";
    case Errc::BadChannels: return "BadChannels";
    case Errc::MissingTensor: return "MissingTensor";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::Truncated: return "Truncated";
    case Errc::DuplicateName: return "DuplicateName";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::BadConfig: return "BadConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

bool is_numeric_failure(Errc code) noexcept {
  return code == Errc::NonFiniteLoss || code == Errc::NonFinite;
}

Error::Error(Errc code, const std::string& message, std::int64_t line)
    : std::runtime_error(message), code_(code), line_(line) {}

}  // namespace neurovit
