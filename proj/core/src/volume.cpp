#include "neurovit/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include <nlohmann/json.hpp>

#include "neurovit/error.hpp"
#include "neurovit/io.hpp"

namespace neurovit {

namespace fs = std::filesystem;

Volume3D::Volume3D(Dims3 dims, float fill) : dims_(dims), voxels_(dims.count(), fill) {
  if (!dims.positive()) throw Error(Errc::SizeMismatch, "volume dimensions must be positive");
}

Volume3D::Volume3D(Dims3 dims, std::vector<float> voxels) : dims_(dims), voxels_(std::move(voxels)) {
  if (!dims.positive()) throw Error(Errc::SizeMismatch, "volume dimensions must be positive");
  if (voxels_.size() != dims.count()) {
    throw Error(Errc::SizeMismatch, "voxel count " + std::to_string(voxels_.size()) +
                                        " does not match dimensions (" + std::to_string(dims.count()) + ")");
  }
}

Volume3D Volume3D::slice(int z) const {
  const std::size_t plane = static_cast<std::size_t>(dims_.w) * dims_.h;
  const auto first = voxels_.begin() + static_cast<std::ptrdiff_t>(plane * z);
  return Volume3D({dims_.w, dims_.h, 1}, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(plane)));
}

bool bitwise_equal(std::span<const float> a, std::span<const float> b) noexcept {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size_bytes()) == 0);
}

// ---- raw I/O ---------------------------------------------------------------

fs::path meta_path_for(const fs::path& data_path) {
  fs::path meta = data_path;
  meta.replace_extension(".json");
  return meta;
}

std::vector<char> encode_f32le(std::span<const float> values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return bytes;
}

Volume3D load_raw(const fs::path& data_path, const fs::path& meta_path) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadMeta, meta_path.string() + ": " + e.what());
  }
  Dims3 dims;
  std::string dtype;
  std::string order = "zyx";
  try {
    dims.w = meta.at("width").get<int>();
    dims.h = meta.at("height").get<int>();
    dims.d = meta.at("depth").get<int>();
    dtype = meta.at("dtype").get<std::string>();
    if (meta.contains("order")) order = meta.at("order").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadMeta, meta_path.string() + ": " + e.what());
  }
  if (!dims.positive()) throw Error(Errc::BadMeta, meta_path.string() + ": dimensions must be positive");
  if (dtype != "f32le") throw Error(Errc::UnsupportedDtype, "unsupported dtype '" + dtype + "'");
  if (order != "zyx") throw Error(Errc::BadMeta, "unsupported voxel order '" + order + "'");

  const auto bytes = read_binary_file(data_path);
  if (bytes.size() != dims.count() * 4) {
    throw Error(Errc::SizeMismatch, data_path.string() + ": expected " + std::to_string(dims.count() * 4) +
                                        " bytes, found " + std::to_string(bytes.size()));
  }
  std::vector<float> voxels(dims.count());
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    }
    voxels[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(voxels[i])) {
      throw Error(Errc::BadMeta, data_path.string() + ": non-finite voxel at index " + std::to_string(i));
    }
  }
  return Volume3D(dims, std::move(voxels));
}

void save_raw(const Volume3D& volume, const fs::path& data_path, const fs::path& meta_path) {
  const nlohmann::ordered_json meta = {{"width", volume.width()},
                                       {"height", volume.height()},
                                       {"depth", volume.depth()},
                                       {"dtype", "f32le"},
                                       {"order", "zyx"}};
  write_file_atomic(data_path, encode_f32le(volume.voxels()));
  write_file_atomic(meta_path, meta.dump(2) + "\n");
}

// ---- preprocessing ---------------------------------------------------------

float percentile(std::span<const float> values, float p) {
  if (values.empty()) throw Error(Errc::SizeMismatch, "percentile of an empty set");
  std::vector<float> work(values.begin(), values.end());
  const double rank = std::clamp(static_cast<double>(p), 0.0, 100.0) / 100.0 * static_cast<double>(work.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(lo), work.end());
  const double a = work[lo];
  if (frac == 0.0 || lo + 1 >= work.size()) return static_cast<float>(a);
  // The next order statistic is the minimum of the upper partition.
  const double b = *std::min_element(work.begin() + static_cast<std::ptrdiff_t>(lo) + 1, work.end());
  return static_cast<float>(a + frac * (b - a));
}

Volume3D normalize(const Volume3D& volume, float lo_pct, float hi_pct) {
  if (volume.size() == 0) throw Error(Errc::SizeMismatch, "normalize of an empty volume");
  const float lo = percentile(volume.voxels(), lo_pct);
  const float hi = percentile(volume.voxels(), hi_pct);
  Volume3D out(volume.dims(), 0.0f);
  if (!(hi > lo)) return out;
  const float scale = 1.0f / (hi - lo);
  auto src = volume.voxels();
  auto dst = out.voxels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = std::clamp((std::clamp(src[i], lo, hi) - lo) * scale, 0.0f, 1.0f);
  }
  return out;
}

// ---- blocks ----------------------------------------------------------------

BlockGridSpec BlockGridSpec::tiling(Dims3 block) { return {block, block, 0.0f}; }

void BlockGridSpec::validate() const {
  if (!block_size.positive()) throw Error(Errc::BadConfig, "block size must be positive");
  if (!stride.positive()) throw Error(Errc::BadConfig, "block stride must be >= 1");
  if (stride.w > block_size.w || stride.h > block_size.h || stride.d > block_size.d) {
    throw Error(Errc::BadConfig, "block stride must not exceed block size");
  }
}

std::vector<int> axis_origins(int extent, int stride) {
  std::vector<int> out;
  for (int o = 0; o < extent; o += stride) out.push_back(o);
  return out;
}

std::vector<Index3> block_origins(const Dims3& volume, const BlockGridSpec& spec) {
  spec.validate();
  const auto xs = axis_origins(volume.w, spec.stride.w);
  const auto ys = axis_origins(volume.h, spec.stride.h);
  const auto zs = axis_origins(volume.d, spec.stride.d);
  std::vector<Index3> out;
  out.reserve(xs.size() * ys.size() * zs.size());
  for (int z : zs)
    for (int y : ys)
      for (int x : xs) out.push_back({x, y, z});
  return out;
}

Block extract_block(const Volume3D& volume, Index3 origin, Dims3 size, float pad_value) {
  Block b{origin, size, std::vector<float>(size.count(), pad_value)};
  const Dims3& vd = volume.dims();
  const int x_end = std::min(size.w, vd.w - origin.x);
  for (int z = 0; z < size.d; ++z) {
    const int sz = origin.z + z;
    if (sz < 0 || sz >= vd.d) continue;
    for (int y = 0; y < size.h; ++y) {
      const int sy = origin.y + y;
      if (sy < 0 || sy >= vd.h) continue;
      for (int x = std::max(0, -origin.x); x < x_end; ++x) {
        b.data[linear_index(size, x, y, z)] = volume.at(origin.x + x, sy, sz);
      }
    }
  }
  return b;
}

std::vector<Block> blockify(const Volume3D& volume, const BlockGridSpec& spec) {
  std::vector<Block> out;
  for (const Index3& origin : block_origins(volume.dims(), spec)) {
    out.push_back(extract_block(volume, origin, spec.block_size, spec.pad_value));
  }
  return out;
}

Volume3D stitch(std::span<const Block> blocks, const Dims3& dims) {
  std::vector<std::size_t> order(blocks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return blocks[a].origin < blocks[b].origin; });

  Volume3D out(dims, 0.0f);
  std::vector<std::uint32_t> hits(dims.count(), 0);
  auto acc = out.voxels();
  for (std::size_t bi : order) {
    const Block& b = blocks[bi];
    if (b.data.size() != b.size.count()) throw Error(Errc::SizeMismatch, "block data does not match its size");
    for (int z = 0; z < b.size.d; ++z) {
      const int vz = b.origin.z + z;
      if (vz < 0 || vz >= dims.d) continue;
      for (int y = 0; y < b.size.h; ++y) {
        const int vy = b.origin.y + y;
        if (vy < 0 || vy >= dims.h) continue;
        for (int x = 0; x < b.size.w; ++x) {
          const int vx = b.origin.x + x;
          if (vx < 0 || vx >= dims.w) continue;
          const std::size_t i = linear_index(dims, vx, vy, vz);
          const float v = b.data[linear_index(b.size, x, y, z)];
          // First writer stores the value itself so a single cover is bitwise exact.
          acc[i] = hits[i] == 0 ? v : acc[i] + v;
          ++hits[i];
        }
      }
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (hits[i] == 0) {
      throw Error(Errc::CoverageGap, "voxel " + std::to_string(i) + " is not covered by any block");
    }
    if (hits[i] > 1) acc[i] /= static_cast<float>(hits[i]);
  }
  return out;
}

float foreground_ratio(const Block& label, float threshold) {
  if (label.data.empty()) return 0.0f;
  const auto fg = std::count_if(label.data.begin(), label.data.end(), [&](float v) { return v >= threshold; });
  return static_cast<float>(static_cast<double>(fg) / static_cast<double>(label.data.size()));
}

std::vector<TrainingPair> filter_training_blocks(std::span<const Block> images, std::span<const Block> labels,
                                                 float tau) {
  if (images.size() != labels.size()) {
    throw Error(Errc::AlignmentMismatch, "image and label block lists differ in length");
  }
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].origin != labels[i].origin || images[i].size != labels[i].size) {
      throw Error(Errc::AlignmentMismatch, "image and label blocks are not aligned at index " + std::to_string(i));
    }
    if (foreground_ratio(labels[i]) >= tau) out.push_back({images[i], labels[i]});
  }
  return out;
}

}  // namespace neurovit
