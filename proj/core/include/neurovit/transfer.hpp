#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "neurovit/archive.hpp"
#include "neurovit/rng.hpp"
#include "neurovit/vit.hpp"

namespace neurovit {

/// How a pre-trained 2D patch kernel is spread over the 3D block depth.
enum class TransferStrategy {
  /// Every depth slice receives w2 / D.
  Average,
  /// Slice floor(D/2) receives w2; every other slice is zero.
  Center,
};

std::string_view strategy_name(TransferStrategy s) noexcept;
/// Accepts "average" or "center"; throws BadConfig otherwise.
TransferStrategy parse_strategy(std::string_view name);

/// Inflates a [e, C, p, p] kernel to [e, C, D, p, p]. Throws BadDepth for D < 1.
Tensor inflate_patch_embed(const Tensor& w2, int depth, TransferStrategy strategy);

/// Folds an RGB kernel [e, 3, p, p] into a single-channel [e, 1, p, p] by
/// summing channels, so a gray image replicated to RGB keeps its response.
Tensor reduce_input_channels(const Tensor& w);

enum class Provenance { Copied, ChannelReduced, Inflated, Interpolated, Reinitialized };
std::string_view provenance_name(Provenance p) noexcept;

struct TransferEntry {
  std::string name;
  Provenance how;
  Shape source_shape;  // empty for re-initialized tensors
  Shape target_shape;
};

/// Builds target-model parameters from a 2D archive: patch embedding
/// inflated (after channel reduction when needed), encoder tensors copied,
/// positional table resampled when the token grids differ, decoder freshly
/// initialized from `rng`. A TwoD target skips inflation.
///
/// Throws MissingTensor for absent names, DimMismatch when the archive's
/// encoder shapes conflict with `target`, NonSquareGrid when a positional
/// table cannot be resampled.
VitParams transfer_weights(const WeightArchive& source, const VitConfig& target, TransferStrategy strategy, Rng& rng,
                           std::vector<TransferEntry>* report = nullptr);

/// Canonical-named archive of a parameter set.
WeightArchive to_archive(const VitParams& params);

/// Parameters for `cfg` read from an archive; MissingTensor or DimMismatch
/// on schema problems.
VitParams from_archive(const WeightArchive& archive, const VitConfig& cfg);

}  // namespace neurovit
