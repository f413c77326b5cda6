#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neurovit/volume.hpp"
#include "neurovit/vit.hpp"

namespace neurovit {

struct BinaryMask {
  Dims3 dims{0, 0, 0};
  std::vector<std::uint8_t> bits;  // one byte per voxel, 0 or 1

  BinaryMask() = default;
  explicit BinaryMask(Dims3 d) : dims(d), bits(d.count(), 0) {}

  /// value >= threshold is foreground.
  static BinaryMask from_volume(const Volume3D& v, float threshold = 0.5f);

  bool at(int x, int y, int z) const noexcept { return bits[linear_index(dims, x, y, z)] != 0; }
  void set(int x, int y, int z, bool on = true) noexcept { bits[linear_index(dims, x, y, z)] = on ? 1 : 0; }
  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }
};

/// 2|A and B| / (|A| + |B|); 1 when both are empty. Throws DimMismatch.
float dice(const BinaryMask& a, const BinaryMask& b);

/// Foreground voxels with at least one background 6-neighbour (outside the
/// grid counts as background), in linear-index order.
std::vector<Index3> surface_voxels(const BinaryMask& mask);

/// Exact squared Euclidean distance from every voxel to the nearest
/// foreground voxel of `sites`; -1 everywhere when there are no sites.
std::vector<std::int64_t> squared_distance_map(const BinaryMask& sites);

/// Pooled symmetric surface distances, nearest-rank 95th percentile
/// (sorted element ceil(0.95 n) - 1). Throws EmptyMask / DimMismatch.
float hd95(const BinaryMask& a, const BinaryMask& b);

struct VolumeEval {
  float dice = 0.0f;
  std::optional<float> hd95;  // empty when hd95 is undefined
  std::string failure;        // reason hd95 is missing
};

struct EvalResult {
  float dice = 0.0f;                    // mean over volumes
  std::optional<float> hd95;            // mean over volumes where it is defined
  int hd95_failures = 0;
  std::vector<VolumeEval> per_volume;

  nlohmann::ordered_json to_json() const;
};

/// Dice and hd95 of one predicted mask; an empty side becomes a recorded
/// failure instead of an exception.
VolumeEval evaluate_masks(const BinaryMask& pred, const BinaryMask& truth);

EvalResult aggregate(std::vector<VolumeEval> per_volume);

/// blockify -> forward -> sigmoid -> stitch. `stride` defaults to the model
/// block size (non-overlapping tiling).
Volume3D predict_volume(const VitParams& params, const VitConfig& cfg, const Volume3D& image,
                        std::optional<Dims3> stride = std::nullopt);

/// Predicts `image`, thresholds at prob_threshold and scores against `truth`.
EvalResult evaluate(const VitParams& params, const VitConfig& cfg, const Volume3D& image, const BinaryMask& truth,
                    float prob_threshold = 0.5f);

}  // namespace neurovit
