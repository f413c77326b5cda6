#include <doctest.h>

#include <cmath>

#include "../support/errors.hpp"
#include "../support/oracles.hpp"
#include "neurovit/metrics.hpp"

using namespace neurovit;
using oracle::error_of;

namespace {

BinaryMask from_points(Dims3 d, std::initializer_list<Index3> pts) {
  BinaryMask m(d);
  for (const auto& p : pts) m.set(p.x, p.y, p.z);
  return m;
}

VitConfig tiny3d() {
  VitConfig c;
  c.kind = ModelKind::ThreeD;
  c.img_h = c.img_w = 4;
  c.patch = 2;
  c.depth = 2;
  c.embed_dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

VitParams constant_logit(const VitConfig& cfg, float z) {
  Rng rng(1);
  auto p = init_params(cfg, rng);
  std::fill(p.dec_w.values().begin(), p.dec_w.values().end(), 0.0f);
  std::fill(p.dec_b.values().begin(), p.dec_b.values().end(), z);
  return p;
}

}  // namespace

TEST_CASE("dice examples") {
  const Dims3 d{4, 1, 1};
  const auto a = from_points(d, {{0, 0, 0}, {1, 0, 0}});
  CHECK(dice(a, a) == 1.0f);
  CHECK(dice(a, from_points(d, {{2, 0, 0}, {3, 0, 0}})) == 0.0f);
  CHECK(dice(a, from_points(d, {{0, 0, 0}})) == doctest::Approx(2.0f / 3.0f));
  CHECK(dice(BinaryMask(d), BinaryMask(d)) == 1.0f);
  CHECK(error_of([&] { dice(a, BinaryMask({2, 2, 1})); }) == Errc::DimMismatch);

  Volume3D v(d, std::vector<float>{0.2f, 0.5f, 0.7f, 0.49f});
  const auto m = BinaryMask::from_volume(v);
  CHECK(m.bits == std::vector<std::uint8_t>{0, 1, 1, 0});
  CHECK(m.count() == 2);
}

TEST_CASE("surface voxels") {
  const Dims3 d{5, 5, 5};
  BinaryMask cube(d);
  for (int z = 1; z < 4; ++z)
    for (int y = 1; y < 4; ++y)
      for (int x = 1; x < 4; ++x) cube.set(x, y, z);
  const auto s = surface_voxels(cube);
  CHECK(s.size() == 26);
  for (const auto& p : s) CHECK_FALSE((p.x == 2 && p.y == 2 && p.z == 2));
  BinaryMask full(d);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  CHECK(surface_voxels(full).size() == 125 - 27);
}

TEST_CASE("exact squared distance map") {
  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims3 d{1 + static_cast<int>(rng.below(9)), 1 + static_cast<int>(rng.below(9)),
                  1 + static_cast<int>(rng.below(9))};
    const auto sites = oracle::random_mask(rng, d, 0, 0.05);
    const auto map = squared_distance_map(sites);
    REQUIRE(map.size() == d.count());
    for (int z = 0; z < d.d; ++z)
      for (int y = 0; y < d.h; ++y)
        for (int x = 0; x < d.w; ++x) {
          std::int64_t best = -1;
          for (int zz = 0; zz < d.d; ++zz)
            for (int yy = 0; yy < d.h; ++yy)
              for (int xx = 0; xx < d.w; ++xx)
                if (sites.bits[oracle::idx(d, xx, yy, zz)]) {
                  const std::int64_t q = (x - xx) * (x - xx) + (y - yy) * (y - yy) + (z - zz) * (z - zz);
                  if (best < 0 || q < best) best = q;
                }
          REQUIRE(map[oracle::idx(d, x, y, z)] == best);
        }
  }
}

TEST_CASE("hd95 examples") {
  const Dims3 d{4, 4, 4};
  const auto a = from_points(d, {{0, 0, 0}});
  CHECK(hd95(a, a) == 0.0f);
  CHECK(hd95(a, from_points(d, {{3, 0, 0}})) == 3.0f);
  CHECK(hd95(a, from_points(d, {{1, 2, 2}})) == 3.0f);
  CHECK(error_of([&] { hd95(a, BinaryMask(d)); }) == Errc::EmptyMask);
  CHECK(error_of([&] { hd95(BinaryMask(d), a); }) == Errc::EmptyMask);
  CHECK(error_of([&] { hd95(a, from_points({4, 4, 3}, {{0, 0, 0}})); }) == Errc::DimMismatch);
}

TEST_CASE("hd95 matches brute force on random masks") {
  Rng rng(52);
  for (int trial = 0; trial < 200; ++trial) {
    const Dims3 d{2 + static_cast<int>(rng.below(15)), 2 + static_cast<int>(rng.below(15)),
                  1 + static_cast<int>(rng.below(16))};
    auto a = oracle::random_mask(rng, d, 1 + static_cast<int>(rng.below(3)), 0.02);
    auto b = oracle::random_mask(rng, d, 1 + static_cast<int>(rng.below(3)), 0.02);
    const float h = hd95(a, b);
    INFO("trial " << trial);
    REQUIRE(h == oracle::hd95(a, b));
    REQUIRE(h == hd95(b, a));
    REQUIRE(dice(a, b) == oracle::dice(a, b));
    float directed_max = 0.0f;
    const auto sa = oracle::surface(a), sb = oracle::surface(b);
    for (const auto* pair : {&sa, &sb}) {
      const auto& to = pair == &sa ? sb : sa;
      for (const auto& p : *pair) {
        double best = 1e30;
        for (const auto& q : to)
          best = std::min(best, std::hypot(double(p.x - q.x), double(p.y - q.y), double(p.z - q.z)));
        directed_max = std::max(directed_max, static_cast<float>(best));
      }
    }
    REQUIRE(h <= directed_max);
  }
}

TEST_CASE("evaluate_masks and aggregate") {
  const Dims3 d{4, 4, 1};
  const auto a = from_points(d, {{0, 0, 0}, {1, 1, 0}});
  const auto ok = evaluate_masks(a, a);
  CHECK(ok.dice == 1.0f);
  REQUIRE(ok.hd95.has_value());
  CHECK(*ok.hd95 == 0.0f);
  const auto bad = evaluate_masks(BinaryMask(d), a);
  CHECK(bad.dice == 0.0f);
  CHECK_FALSE(bad.hd95.has_value());
  CHECK(bad.failure.rfind("EmptyMask", 0) == 0);

  const auto r = aggregate({ok, bad});
  CHECK(r.dice == 0.5f);
  REQUIRE(r.hd95.has_value());
  CHECK(*r.hd95 == 0.0f);
  CHECK(r.hd95_failures == 1);
  const auto j = r.to_json();
  CHECK(j.at("per_volume").size() == 2);
  CHECK(j.at("hd95_failures") == 1);
  CHECK_FALSE(aggregate({bad}).hd95.has_value());
}

TEST_CASE("evaluate end to end with constant models") {
  const auto cfg = tiny3d();
  const Dims3 d{6, 5, 3};
  Volume3D image(d, 0.3f);
  BinaryMask all(d);
  std::fill(all.bits.begin(), all.bits.end(), 1);

  const auto fg = evaluate(constant_logit(cfg, 10.0f), cfg, image, all);
  CHECK(fg.dice == 1.0f);
  REQUIRE(fg.hd95.has_value());
  CHECK(*fg.hd95 == 0.0f);

  const auto bg = evaluate(constant_logit(cfg, -10.0f), cfg, image, all);
  CHECK(bg.dice == 0.0f);
  CHECK(bg.hd95_failures == 1);
  CHECK_FALSE(bg.hd95.has_value());
  CHECK(bg.per_volume.at(0).failure.find("EmptyMask") != std::string::npos);
}

TEST_CASE("single-block volumes predict through one forward pass") {
  const auto cfg = tiny3d();
  Rng rng(53);
  auto p = init_params(cfg, rng);
  p.for_each([&](const std::string&, Tensor& t) {
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  });
  const auto vals = oracle::random_tensor<float>(rng, {2, 4, 4});
  const Volume3D image(cfg.block_dims(), vals.values());
  const auto pred = predict_volume(p, cfg, image);
  const auto logits = forward<float>(p, cfg, vals.data());
  REQUIRE(pred.dims() == cfg.block_dims());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    REQUIRE(pred.voxels()[i] == doctest::Approx(s).epsilon(1e-6));
  }
  // Overlapping stride still averages to the same values on a single tile grid.
  const Volume3D big({4, 4, 3}, 0.1f);
  const auto overlapped = predict_volume(p, cfg, big, Dims3{2, 2, 1});
  CHECK(overlapped.dims() == big.dims());
  for (float v : overlapped.voxels()) CHECK((v > 0.0f && v < 1.0f));
}
