#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace neurovit {

struct Dims3 {
  int w = 1;
  int h = 1;
  int d = 1;

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(d);
  }
  bool positive() const noexcept { return w > 0 && h > 0 && d > 0; }

  friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct Index3 {
  int x = 0;
  int y = 0;
  int z = 0;

  friend bool operator==(const Index3&, const Index3&) = default;
  friend auto operator<=>(const Index3& a, const Index3& b) noexcept {
    if (auto c = a.z <=> b.z; c != 0) return c;
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
};

/// Linear index of (x, y, z) in a grid of `dims`: (z*H + y)*W + x.
inline std::size_t linear_index(const Dims3& dims, int x, int y, int z) noexcept {
  return (static_cast<std::size_t>(z) * static_cast<std::size_t>(dims.h) + static_cast<std::size_t>(y)) *
             static_cast<std::size_t>(dims.w) +
         static_cast<std::size_t>(x);
}

/// Dense f32 voxel grid, x fastest.
class Volume3D {
 public:
  Volume3D() = default;
  explicit Volume3D(Dims3 dims, float fill = 0.0f);
  Volume3D(Dims3 dims, std::vector<float> voxels);

  const Dims3& dims() const noexcept { return dims_; }
  int width() const noexcept { return dims_.w; }
  int height() const noexcept { return dims_.h; }
  int depth() const noexcept { return dims_.d; }
  std::size_t size() const noexcept { return voxels_.size(); }

  float at(int x, int y, int z) const noexcept { return voxels_[linear_index(dims_, x, y, z)]; }
  float& at(int x, int y, int z) noexcept { return voxels_[linear_index(dims_, x, y, z)]; }

  std::span<const float> voxels() const noexcept { return voxels_; }
  std::span<float> voxels() noexcept { return voxels_; }
  std::vector<float>& storage() noexcept { return voxels_; }

  /// z-slice as a depth-1 volume.
  Volume3D slice(int z) const;

  friend bool operator==(const Volume3D&, const Volume3D&) = default;

 private:
  Dims3 dims_{0, 0, 0};
  std::vector<float> voxels_;
};

/// Bitwise comparison; `operator==` treats -0 and 0 as equal and NaN as unequal.
bool bitwise_equal(std::span<const float> a, std::span<const float> b) noexcept;

// ---- raw I/O ---------------------------------------------------------------

/// Sidecar path convention used by the tools: "x.raw" -> "x.json".
std::filesystem::path meta_path_for(const std::filesystem::path& data_path);

/// Reads a little-endian f32 payload described by a JSON sidecar with keys
/// width, height, depth, dtype ("f32le") and order ("zyx").
Volume3D load_raw(const std::filesystem::path& data_path, const std::filesystem::path& meta_path);
void save_raw(const Volume3D& volume, const std::filesystem::path& data_path,
              const std::filesystem::path& meta_path);

/// Encodes voxels as little-endian f32 bytes.
std::vector<char> encode_f32le(std::span<const float> values);

// ---- preprocessing ---------------------------------------------------------

/// Linear-interpolated percentile (p in [0, 100]) of the values.
float percentile(std::span<const float> values, float p);

/// Clips to the [lo_pct, hi_pct] percentiles and maps that range onto
/// [0, 1]. A zero-width range maps to all zeros.
Volume3D normalize(const Volume3D& volume, float lo_pct = 1.0f, float hi_pct = 99.0f);

// ---- blocks ----------------------------------------------------------------

struct Block {
  Index3 origin;
  Dims3 size;
  std::vector<float> data;  // same (z, y, x) layout as Volume3D
};

struct BlockGridSpec {
  Dims3 block_size{100, 100, 5};
  Dims3 stride{100, 100, 5};
  float pad_value = 0.0f;

  /// Non-overlapping grid of the given block size.
  static BlockGridSpec tiling(Dims3 block);
  void validate() const;
};

/// Grid origins along one axis: 0, s, 2s, ... while < extent.
std::vector<int> axis_origins(int extent, int stride);
std::vector<Index3> block_origins(const Dims3& volume, const BlockGridSpec& spec);

Block extract_block(const Volume3D& volume, Index3 origin, Dims3 size, float pad_value = 0.0f);

/// Cuts the volume into a grid of blocks covering every voxel. Blocks are
/// ordered by origin (z, then y, then x); out-of-volume voxels get pad_value.
std::vector<Block> blockify(const Volume3D& volume, const BlockGridSpec& spec);

/// Reassembles block predictions. Overlaps are averaged, accumulating in
/// sorted-origin order; voxels outside `dims` are dropped. Throws
/// CoverageGap when some voxel is not covered.
Volume3D stitch(std::span<const Block> blocks, const Dims3& dims);

/// Fraction of voxels with value >= threshold.
float foreground_ratio(const Block& label, float threshold = 0.5f);

struct TrainingPair {
  Block image;
  Block label;
};

/// Keeps (image, label) pairs whose label foreground ratio is >= tau.
/// Throws AlignmentMismatch if the lists differ in length, origin or size.
std::vector<TrainingPair> filter_training_blocks(std::span<const Block> images,
                                                 std::span<const Block> labels, float tau);

}  // namespace neurovit
