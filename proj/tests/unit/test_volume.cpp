#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "neurovit/error.hpp"
#include "neurovit/groundtruth.hpp"
#include "neurovit/io.hpp"
#include "neurovit/rng.hpp"
#include "neurovit/volume.hpp"

using namespace neurovit;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const auto d = fs::temp_directory_path() / "neurovit_volume_tests";
  fs::create_directories(d);
  return d;
}

Volume3D random_volume(Dims3 d, std::uint64_t seed) {
  Rng rng(seed);
  Volume3D v(d);
  for (auto& x : v.storage()) x = static_cast<float>(rng.uniform(-5.0, 5.0));
  return v;
}

Errc load_error(const fs::path& data, const fs::path& meta) {
  try {
    load_raw(data, meta);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a load error");
  return Errc::Io;
}

}  // namespace

TEST_CASE("raw format of a single 0.5 voxel") {
  const auto dir = scratch_dir();
  save_raw(Volume3D({1, 1, 1}, 0.5f), dir / "half.raw", dir / "half.json");
  const auto bytes = read_binary_file(dir / "half.raw");
  REQUIRE(bytes.size() == 4);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[1]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[2]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[3]) == 0x3f);
  const auto meta = read_text_file(dir / "half.json");
  CHECK(meta.find("\"f32le\"") != std::string::npos);
  CHECK(meta.find("\"zyx\"") != std::string::npos);
}

TEST_CASE("raw round trip is bitwise") {
  const auto dir = scratch_dir();
  auto v = random_volume({10, 10, 5}, 1);
  v.storage()[3] = -0.0f;
  v.storage()[4] = 1e-40f;  // subnormal
  save_raw(v, dir / "r.raw", dir / "r.json");
  const auto back = load_raw(dir / "r.raw", dir / "r.json");
  CHECK(back.dims() == v.dims());
  CHECK(bitwise_equal(back.voxels(), v.voxels()));
  CHECK(meta_path_for(dir / "r.raw") == dir / "r.json");
}

TEST_CASE("raw loading rejects bad payloads and metadata") {
  const auto dir = scratch_dir();
  write_file_atomic(dir / "short.raw", std::string_view("\0\0\0\0", 4));
  write_file_atomic(dir / "short.json",
                    std::string(R"({"width":2,"height":2,"depth":2,"dtype":"f32le","order":"zyx"})"));
  CHECK(load_error(dir / "short.raw", dir / "short.json") == Errc::SizeMismatch);

  write_file_atomic(dir / "u8.json", std::string(R"({"width":1,"height":1,"depth":4,"dtype":"u8","order":"zyx"})"));
  CHECK(load_error(dir / "short.raw", dir / "u8.json") == Errc::UnsupportedDtype);

  write_file_atomic(dir / "nodims.json", std::string(R"({"width":1,"dtype":"f32le","order":"zyx"})"));
  CHECK(load_error(dir / "short.raw", dir / "nodims.json") == Errc::BadMeta);

  write_file_atomic(dir / "order.json",
                    std::string(R"({"width":1,"height":1,"depth":1,"dtype":"f32le","order":"xyz"})"));
  CHECK(load_error(dir / "short.raw", dir / "order.json") == Errc::BadMeta);

  write_file_atomic(dir / "junk.json", std::string("not json"));
  CHECK(load_error(dir / "short.raw", dir / "junk.json") == Errc::BadMeta);

  write_file_atomic(dir / "neg.json",
                    std::string(R"({"width":-1,"height":1,"depth":1,"dtype":"f32le","order":"zyx"})"));
  CHECK(load_error(dir / "short.raw", dir / "neg.json") == Errc::BadMeta);
}

TEST_CASE("linear index layout") {
  const Dims3 d{4, 3, 2};
  CHECK(linear_index(d, 0, 0, 0) == 0);
  CHECK(linear_index(d, 1, 0, 0) == 1);
  CHECK(linear_index(d, 0, 1, 0) == 4);
  CHECK(linear_index(d, 0, 0, 1) == 12);
  CHECK(linear_index(d, 3, 2, 1) == 23);
}

TEST_CASE("percentile interpolates linearly") {
  std::vector<float> v{4, 1, 3, 2};
  CHECK(percentile(v, 0) == 1.0f);
  CHECK(percentile(v, 100) == 4.0f);
  CHECK(percentile(v, 50) == doctest::Approx(2.5));
  CHECK(percentile(v, 25) == doctest::Approx(1.75));
}

TEST_CASE("normalize edge cases") {
  const auto c = normalize(Volume3D({3, 3, 3}, 7.0f));
  CHECK(std::all_of(c.voxels().begin(), c.voxels().end(), [](float x) { return x == 0.0f; }));

  Volume3D two({2, 1, 1});
  two.storage() = {0.0f, 10.0f};
  const auto n2 = normalize(two, 0.0f, 100.0f);
  CHECK(n2.voxels()[0] == 0.0f);
  CHECK(n2.voxels()[1] == 1.0f);
}

TEST_CASE("normalize a ramp against a sorted-order oracle") {
  Volume3D ramp({10, 10, 10});
  for (int i = 0; i < 1000; ++i) ramp.storage()[static_cast<std::size_t>(i)] = static_cast<float>(i);
  const auto out = normalize(ramp, 1.0f, 99.0f);
  // For values 0..999 the p-th percentile with linear interpolation is p/100 * 999.
  const double lo = 0.01 * 999.0, hi = 0.99 * 999.0;
  for (int i = 0; i < 1000; ++i) {
    const double want = (std::clamp(static_cast<double>(i), lo, hi) - lo) / (hi - lo);
    REQUIRE(out.voxels()[static_cast<std::size_t>(i)] == doctest::Approx(want).epsilon(1e-5));
  }
  CHECK(*std::min_element(out.voxels().begin(), out.voxels().end()) >= 0.0f);
  CHECK(*std::max_element(out.voxels().begin(), out.voxels().end()) <= 1.0f);
}

TEST_CASE("blockify grid examples") {
  BlockGridSpec spec;
  CHECK(blockify(Volume3D({100, 100, 5}), spec).size() == 1);

  const auto two = blockify(Volume3D({200, 100, 5}), spec);
  REQUIRE(two.size() == 2);
  CHECK(two[0].origin == Index3{0, 0, 0});
  CHECK(two[1].origin == Index3{100, 0, 0});

  const auto v = random_volume({250, 130, 7}, 2);
  const auto blocks = blockify(v, spec);
  REQUIRE(blocks.size() == 12);
  std::size_t k = 0;
  for (int z : {0, 5})
    for (int y : {0, 100})
      for (int x : {0, 100, 200}) {
        const auto& b = blocks[k++];
        REQUIRE(b.origin == Index3{x, y, z});
        REQUIRE(b.size == Dims3{100, 100, 5});
        for (int dz = 0; dz < 5; ++dz)
          for (int dy = 0; dy < 100; ++dy)
            for (int dx = 0; dx < 100; ++dx) {
              const int X = x + dx, Y = y + dy, Z = z + dz;
              const bool inside = X < 250 && Y < 130 && Z < 7;
              const float want = inside ? v.at(X, Y, Z) : 0.0f;
              REQUIRE(b.data[linear_index(b.size, dx, dy, dz)] == want);
            }
      }
}

TEST_CASE("axis origins and block grid validation") {
  CHECK(axis_origins(10, 4) == std::vector<int>{0, 4, 8});
  CHECK(axis_origins(8, 4) == std::vector<int>{0, 4});
  BlockGridSpec bad_spec;
  bad_spec.stride = {101, 100, 5};
  CHECK_THROWS_AS(bad_spec.validate(), Error);
  bad_spec.stride = {0, 100, 5};
  CHECK_THROWS_AS(bad_spec.validate(), Error);
}

TEST_CASE("stitch inverts blockify at stride = block size") {
  const auto v = random_volume({37, 23, 11}, 3);
  const auto spec = BlockGridSpec::tiling({8, 8, 3});
  const auto back = stitch(blockify(v, spec), v.dims());
  CHECK(bitwise_equal(back.voxels(), v.voxels()));
}

TEST_CASE("stitch averages overlaps") {
  Block a{{0, 0, 0}, {4, 1, 1}, std::vector<float>(4, 0.0f)};
  Block b{{2, 0, 0}, {4, 1, 1}, std::vector<float>(4, 1.0f)};
  const std::vector<Block> blocks{a, b};
  const auto v = stitch(blocks, {6, 1, 1});
  CHECK(v.voxels()[0] == 0.0f);
  CHECK(v.voxels()[2] == 0.5f);
  CHECK(v.voxels()[3] == 0.5f);
  CHECK(v.voxels()[5] == 1.0f);
}

TEST_CASE("stitch with random overlaps matches a per-voxel mean oracle") {
  const Dims3 d{13, 9, 6};
  const auto v = random_volume(d, 4);
  BlockGridSpec spec;
  spec.block_size = {5, 4, 3};
  spec.stride = {3, 2, 2};
  auto blocks = blockify(v, spec);
  Rng rng(9);
  for (auto& b : blocks)
    for (auto& x : b.data) x = static_cast<float>(rng.uniform());
  std::vector<double> sum(d.count(), 0.0);
  std::vector<int> cnt(d.count(), 0);
  for (const auto& b : blocks)
    for (int z = 0; z < b.size.d; ++z)
      for (int y = 0; y < b.size.h; ++y)
        for (int x = 0; x < b.size.w; ++x) {
          const int X = b.origin.x + x, Y = b.origin.y + y, Z = b.origin.z + z;
          if (X >= d.w || Y >= d.h || Z >= d.d) continue;
          sum[linear_index(d, X, Y, Z)] += b.data[linear_index(b.size, x, y, z)];
          cnt[linear_index(d, X, Y, Z)] += 1;
        }
  const auto out = stitch(blocks, d);
  for (std::size_t i = 0; i < d.count(); ++i) REQUIRE(out.voxels()[i] == doctest::Approx(sum[i] / cnt[i]).epsilon(1e-6));
}

TEST_CASE("stitch reports coverage gaps") {
  Block a{{0, 0, 0}, {2, 1, 1}, {1.0f, 1.0f}};
  const std::vector<Block> blocks{a};
  CHECK_THROWS_AS(stitch(blocks, {3, 1, 1}), Error);
  try {
    stitch(blocks, {3, 1, 1});
  } catch (const Error& e) {
    CHECK(e.code() == Errc::CoverageGap);
  }
}

TEST_CASE("foreground ratio") {
  Block zero{{0, 0, 0}, {4, 4, 2}, std::vector<float>(32, 0.0f)};
  Block one{{0, 0, 0}, {4, 4, 2}, std::vector<float>(32, 1.0f)};
  CHECK(foreground_ratio(zero) == 0.0f);
  CHECK(foreground_ratio(one) == 1.0f);
  Block big{{0, 0, 0}, {100, 100, 5}, std::vector<float>(50000, 0.0f)};
  for (int i = 0; i < 500; ++i) big.data[static_cast<std::size_t>(i) * 100] = 1.0f;
  CHECK(foreground_ratio(big) == doctest::Approx(0.01));
  Block edge{{0, 0, 0}, {2, 1, 1}, {0.5f, 0.4999f}};
  CHECK(foreground_ratio(edge) == 0.5f);
}

TEST_CASE("filter_training_blocks") {
  SynthParams p;
  p.seed = 12;
  const auto s = synthesize_sample(p, 0);
  const auto spec = BlockGridSpec::tiling({16, 16, 5});
  const auto images = blockify(s.image, spec);
  const auto labels = blockify(s.label, spec);

  CHECK(filter_training_blocks(images, labels, 0.0f).size() == images.size());

  std::vector<std::size_t> want;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t fg = 0;
    for (float x : labels[i].data) fg += x >= 0.5f ? 1 : 0;
    if (static_cast<double>(fg) / labels[i].data.size() >= 0.01) want.push_back(i);
  }
  const auto kept = filter_training_blocks(images, labels, 0.01f);
  REQUIRE(kept.size() == want.size());
  for (std::size_t k = 0; k < want.size(); ++k) {
    CHECK(kept[k].image.origin == images[want[k]].origin);
    CHECK(kept[k].label.data == labels[want[k]].data);
  }

  std::vector<Block> full{Block{{0, 0, 0}, {2, 1, 1}, {1.0f, 1.0f}}, Block{{2, 0, 0}, {2, 1, 1}, {1.0f, 0.0f}}};
  CHECK(filter_training_blocks(full, full, 1.0f).size() == 1);

  std::vector<Block> shorter(images.begin(), images.end() - 1);
  CHECK_THROWS_AS(filter_training_blocks(shorter, labels, 0.0f), Error);
  auto moved = images;
  moved[0].origin.x += 1;
  try {
    filter_training_blocks(moved, labels, 0.0f);
    FAIL("expected AlignmentMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AlignmentMismatch);
  }
}
