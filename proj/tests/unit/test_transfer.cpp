#include <doctest.h>

#include "../support/errors.hpp"
#include "../support/oracles.hpp"
#include "neurovit/transfer.hpp"
#include "neurovit/volume.hpp"

using namespace neurovit;
using oracle::error_of;

namespace {

VitConfig cfg_of(ModelKind kind, int depth, int img = 8, int channels = 1) {
  VitConfig c;
  c.kind = kind;
  c.img_h = c.img_w = img;
  c.patch = 4;
  c.depth = depth;
  c.in_channels = channels;
  c.embed_dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

WeightArchive random_2d_archive(const VitConfig& c2, std::uint64_t seed) {
  Rng rng(seed);
  auto p = init_params(c2, rng);
  p.for_each([&](const std::string&, Tensor& t) {
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  });
  return to_archive(p);
}

}  // namespace

TEST_CASE("inflation examples") {
  const Tensor w2({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const auto avg = inflate_patch_embed(w2, 4, TransferStrategy::Average);
  REQUIRE(avg.shape() == Shape{1, 1, 4, 2, 2});
  for (int d = 0; d < 4; ++d)
    for (int k = 0; k < 4; ++k) CHECK(avg[static_cast<std::size_t>(d * 4 + k)] == (k + 1) * 0.25f);

  const auto ctr = inflate_patch_embed(w2, 5, TransferStrategy::Center);
  for (int d = 0; d < 5; ++d)
    for (int k = 0; k < 4; ++k) CHECK(ctr[static_cast<std::size_t>(d * 4 + k)] == (d == 2 ? k + 1.0f : 0.0f));
  const auto even = inflate_patch_embed(w2, 4, TransferStrategy::Center);
  for (int k = 0; k < 4; ++k) CHECK(even[static_cast<std::size_t>(2 * 4 + k)] == k + 1.0f);

  CHECK(inflate_patch_embed(w2, 1, TransferStrategy::Average).reshaped({1, 1, 2, 2}) == w2);
  CHECK(inflate_patch_embed(w2, 1, TransferStrategy::Center).reshaped({1, 1, 2, 2}) == w2);
  CHECK(error_of([&] { inflate_patch_embed(w2, 0, TransferStrategy::Center); }) == Errc::BadDepth);
  CHECK(strategy_name(TransferStrategy::Average) == "average");
  CHECK(parse_strategy("center") == TransferStrategy::Center);
  CHECK(error_of([] { parse_strategy("middle"); }) == Errc::BadConfig);
}

TEST_CASE("inflated embedding of a depth-constant block equals the 2D embedding") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const int D = 1 + static_cast<int>(rng.below(6));
    const auto w2 = oracle::random_tensor<float>(rng, {6, 2, 2, 2});
    const auto b = oracle::random_tensor<float>(rng, {6});
    const auto img = oracle::random_tensor<float>(rng, {2, 4, 6});
    Tensor block({2, D, 4, 6});
    for (int c = 0; c < 2; ++c)
      for (int d = 0; d < D; ++d)
        for (int i = 0; i < 24; ++i)
          block[(static_cast<std::size_t>(c) * D + d) * 24 + i] = img[static_cast<std::size_t>(c) * 24 + i];
    const auto ref = patch_embed_2d(img, w2, b);
    const auto ctr = patch_embed_3d(block, inflate_patch_embed(w2, D, TransferStrategy::Center), b);
    const auto avg = patch_embed_3d(block, inflate_patch_embed(w2, D, TransferStrategy::Average), b);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      REQUIRE(ctr[i] == doctest::Approx(ref[i]).epsilon(1e-5));
      REQUIRE(avg[i] == doctest::Approx(ref[i]).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("RGB kernels fold into one channel") {
  Rng rng(22);
  const auto w = oracle::random_tensor<float>(rng, {4, 3, 2, 2});
  const auto g = reduce_input_channels(w);
  REQUIRE(g.shape() == Shape{4, 1, 2, 2});
  for (int o = 0; o < 4; ++o)
    for (int k = 0; k < 4; ++k) {
      const std::size_t base = static_cast<std::size_t>(o) * 12 + k;
      CHECK(g[static_cast<std::size_t>(o) * 4 + k] == (w[base] + w[base + 4]) + w[base + 8]);
    }
  // Gray image replicated to RGB gets the same response, exactly for dyadic values.
  Tensor dy({2, 3, 2, 2});
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = static_cast<float>(static_cast<int>(i % 7) - 3) * 0.25f;
  Tensor gray({1, 2, 2}, std::vector<float>{0.5f, -1.0f, 2.0f, 0.125f});
  Tensor rgb({3, 2, 2});
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 4; ++k) rgb[static_cast<std::size_t>(c) * 4 + k] = gray[static_cast<std::size_t>(k)];
  const Tensor b({2}, 0.0f);
  CHECK(patch_embed_2d(gray, reduce_input_channels(dy), b) == patch_embed_2d(rgb, dy, b));
  CHECK(reduce_input_channels(Tensor({2, 3, 2, 2}, 0.0f)) == Tensor({2, 1, 2, 2}, 0.0f));
  CHECK(error_of([] { reduce_input_channels(Tensor({2, 2, 2, 2})); }) == Errc::BadChannels);
}

TEST_CASE("transfer_weights into a 3D model") {
  const auto c2 = cfg_of(ModelKind::TwoD, 1);
  const auto c3 = cfg_of(ModelKind::ThreeD, 5);
  const auto src = random_2d_archive(c2, 23);

  Rng r1(7), r2(7);
  std::vector<TransferEntry> report;
  const auto ctr = transfer_weights(src, c3, TransferStrategy::Center, r1, &report);
  const auto avg = transfer_weights(src, c3, TransferStrategy::Average, r2);
  check_params(ctr, c3);
  REQUIRE(ctr.patch_w.shape() == Shape{8, 1, 5, 4, 4});

  // Only the patch kernel depends on the strategy.
  ctr.for_each([&](const std::string& name, const Tensor&) {
    const auto a = to_archive(ctr), b = to_archive(avg);
    if (name == "patch_embed.w")
      CHECK_FALSE(a.get(name) == b.get(name));
    else
      CHECK(a.get(name) == b.get(name));
  });

  // Encoder tensors copied bit for bit.
  const auto out = to_archive(ctr);
  for (const auto& [name, t] : src) {
    if (name == "patch_embed.w" || name.rfind("decoder.", 0) == 0) continue;
    CHECK(out.get(name) == t);
  }
  // Decoder sized for the block depth and freshly initialized.
  CHECK(ctr.dec_w.shape() == Shape{8, 4 * 4 * 5});
  for (float v : ctr.dec_b.values()) CHECK(v == 0.0f);

  REQUIRE(report.size() == expected_tensors(c3).size());
  CHECK(report.front().how == Provenance::Inflated);
  CHECK(report.back().how == Provenance::Reinitialized);
  CHECK(report.back().source_shape.empty());

  Rng r3(7);
  CHECK(transfer_weights(src, c3, TransferStrategy::Center, r3) == ctr);
}

TEST_CASE("depth-1 transfer reproduces the 2D encoder exactly") {
  const auto c2 = cfg_of(ModelKind::TwoD, 1);
  const auto src = random_2d_archive(c2, 24);
  Rng rng(1);
  const auto p = transfer_weights(src, cfg_of(ModelKind::ThreeD, 1), TransferStrategy::Average, rng);
  const auto out = to_archive(p);
  for (const auto& [name, t] : src) {
    if (name.rfind("decoder.", 0) == 0) continue;
    CHECK(bitwise_equal(out.get(name).reshaped(t.shape()).data(), t.data()));
  }
}

TEST_CASE("transfer handles grids, channels and schema errors") {
  const auto c2 = cfg_of(ModelKind::TwoD, 1);
  const auto src = random_2d_archive(c2, 25);

  Rng rng(2);
  std::vector<TransferEntry> report;
  const auto big = transfer_weights(src, cfg_of(ModelKind::ThreeD, 3, 16), TransferStrategy::Center, rng, &report);
  CHECK(big.pos.shape() == Shape{1 + 16, 8});
  bool interpolated = false;
  for (const auto& e : report) interpolated = interpolated || (e.name == "pos" && e.how == Provenance::Interpolated);
  CHECK(interpolated);

  const auto rgb = random_2d_archive(cfg_of(ModelKind::TwoD, 1, 8, 3), 26);
  report.clear();
  const auto gray = transfer_weights(rgb, cfg_of(ModelKind::ThreeD, 3), TransferStrategy::Average, rng, &report);
  CHECK(gray.patch_w.shape() == Shape{8, 1, 3, 4, 4});
  CHECK(report.front().how == Provenance::Inflated);
  report.clear();
  const auto gray2d = transfer_weights(rgb, cfg_of(ModelKind::TwoD, 1), TransferStrategy::Average, rng, &report);
  CHECK(gray2d.patch_w == reduce_input_channels(rgb.get("patch_embed.w")));
  CHECK(report.front().how == Provenance::ChannelReduced);

  auto missing = WeightArchive();
  for (const auto& [name, t] : src)
    if (name != "blocks.1.mlp.w2") missing.add(name, t);
  CHECK(error_of([&] { transfer_weights(missing, cfg_of(ModelKind::ThreeD, 3), TransferStrategy::Center, rng); }) ==
        Errc::MissingTensor);

  auto wide = cfg_of(ModelKind::ThreeD, 3);
  wide.embed_dim = 16;
  CHECK(error_of([&] { transfer_weights(src, wide, TransferStrategy::Center, rng); }) == Errc::DimMismatch);

  auto other_patch = cfg_of(ModelKind::ThreeD, 3);
  other_patch.patch = 2;
  CHECK(error_of([&] { transfer_weights(src, other_patch, TransferStrategy::Center, rng); }) == Errc::DimMismatch);

  WeightArchive bad_pos;
  for (const auto& [name, t] : src) bad_pos.add(name, name == "pos" ? Tensor({6, 8}) : t);
  CHECK(error_of([&] { transfer_weights(bad_pos, cfg_of(ModelKind::ThreeD, 3, 16), TransferStrategy::Center, rng); }) ==
        Errc::NonSquareGrid);
}

TEST_CASE("archive round trip of parameters") {
  const auto c3 = cfg_of(ModelKind::ThreeD, 3);
  Rng rng(3);
  const auto p = init_params(c3, rng);
  CHECK(from_archive(to_archive(p), c3) == p);
  CHECK(error_of([&] { from_archive(to_archive(p), cfg_of(ModelKind::ThreeD, 5)); }) == Errc::DimMismatch);
  auto partial = to_archive(p);
  WeightArchive cut;
  for (const auto& [name, t] : partial)
    if (name != "cls") cut.add(name, t);
  CHECK(error_of([&] { from_archive(cut, c3); }) == Errc::MissingTensor);
}
