#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "neurovit/ops.hpp"

using namespace neurovit;
using D = BasicTensor<double>;

namespace {

// L(y) = sum(r * y) for a fixed random r, so dL/dy = r.
double project(const D& y, const D& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

D with(const D& like, std::span<const double> values) {
  return D(like.shape(), std::vector<double>(values.begin(), values.end()));
}

void check_grad(const std::function<double(std::span<const double>)>& f, const D& at, const D& analytic) {
  const auto r = finite_difference_check<double>(f, at.data(), analytic.data());
  INFO("worst index " << r.worst_index << " analytic " << r.analytic_at_worst << " numeric " << r.numeric_at_worst);
  CHECK(r.max_rel_error < 1e-2);
}

}  // namespace

TEST_CASE("matmul equals the naive loop exactly") {
  Rng rng(1);
  const auto a = oracle::random_tensor<float>(rng, {4, 5});
  const auto b = oracle::random_tensor<float>(rng, {5, 3});
  CHECK(matmul(a, b) == oracle::matmul(a, b));

  Tensor eye({4, 4}, 0.0f);
  for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0f;
  CHECK(matmul(eye, a) == a);

  Tensor x({1, 1}, 3.0f), y({1, 1}, -2.5f);
  CHECK(matmul(x, y)[0] == -7.5f);

  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(9)), k = 1 + static_cast<int>(rng.below(40)),
              n = 1 + static_cast<int>(rng.below(9));
    const auto p = oracle::random_tensor<float>(rng, {m, k});
    const auto q = oracle::random_tensor<float>(rng, {k, n});
    REQUIRE(matmul(p, q) == oracle::matmul(p, q));
  }
  CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("transposed products agree with matmul") {
  Rng rng(2);
  const auto a = oracle::random_tensor<double>(rng, {3, 4});
  const auto b = oracle::random_tensor<double>(rng, {5, 4});
  const auto nt = matmul_nt(a, b);
  const auto tn = matmul_tn(b, oracle::random_tensor<double>(rng, {5, 2}));
  CHECK(nt.shape() == Shape{3, 5});
  CHECK(tn.shape() == Shape{4, 2});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a.at(i, k) * b.at(j, k);
      CHECK(nt.at(i, j) == doctest::Approx(s));
    }
}

TEST_CASE("matmul and linear gradients") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const auto a = oracle::random_tensor<double>(rng, {3, 4});
    const auto b = oracle::random_tensor<double>(rng, {4, 2});
    const auto bias = oracle::random_tensor<double>(rng, {2});
    const auto r = oracle::random_tensor<double>(rng, {3, 2});
    const auto g = matmul_backward(a, b, r);
    check_grad([&](std::span<const double> p) { return project(matmul(with(a, p), b), r); }, a, g.da);
    check_grad([&](std::span<const double> p) { return project(matmul(a, with(b, p)), r); }, b, g.db);
    const auto lg = linear_backward(a, b, r);
    check_grad([&](std::span<const double> p) { return project(linear(a, b, with(bias, p)), r); }, bias, lg.db);
    check_grad([&](std::span<const double> p) { return project(linear(with(a, p), b, bias), r); }, a, lg.dx);
  }
}

TEST_CASE("layer norm forward") {
  Tensor x({2, 4});
  x.values() = {3, 3, 3, 3, 1, 2, 3, 4};
  Tensor g({4}, 1.0f), b({4});
  b.values() = {0.1f, 0.2f, 0.3f, 0.4f};
  const auto y = layer_norm(x, g, b).y;
  for (int j = 0; j < 4; ++j) CHECK(y.at(0, j) == b[static_cast<std::size_t>(j)]);

  Rng rng(4);
  const auto big = oracle::random_tensor<float>(rng, {16, 32}, 10.0);
  const auto out = layer_norm(big, Tensor({32}, 1.0f), Tensor({32}, 0.0f)).y;
  for (int i = 0; i < 16; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 32; ++j) mean += out.at(i, j);
    mean /= 32;
    for (int j = 0; j < 32; ++j) var += (out.at(i, j) - mean) * (out.at(i, j) - mean);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var / 32 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("layer norm gradients") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const auto x = oracle::random_tensor<double>(rng, {3, 6});
    const auto g = oracle::random_tensor<double>(rng, {6});
    const auto b = oracle::random_tensor<double>(rng, {6});
    const auto r = oracle::random_tensor<double>(rng, {3, 6});
    const auto fw = layer_norm(x, g, b);
    const auto bw = layer_norm_backward(fw.cache, g, r);
    check_grad([&](std::span<const double> p) { return project(layer_norm(with(x, p), g, b).y, r); }, x, bw.dx);
    check_grad([&](std::span<const double> p) { return project(layer_norm(x, with(g, p), b).y, r); }, g, bw.dgamma);
    check_grad([&](std::span<const double> p) { return project(layer_norm(x, g, with(b, p)).y, r); }, b, bw.dbeta);
  }
}

TEST_CASE("gelu values and gradient") {
  CHECK(gelu_scalar(0.0f) == 0.0f);
  CHECK(std::abs(gelu_scalar(10.0f) - 10.0f) < 1e-3f);
  CHECK(gelu_scalar(1.0) == doctest::Approx(0.8411919906));
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const auto x = oracle::random_tensor<double>(rng, {4, 5}, 3.0);
    const auto r = oracle::random_tensor<double>(rng, {4, 5});
    check_grad([&](std::span<const double> p) { return project(gelu(with(x, p)), r); }, x, gelu_backward(x, r));
  }
}

TEST_CASE("softmax values and gradient") {
  const auto u = softmax_lastdim(Tensor({2, 4}, 0.3f));
  for (float v : u.values()) CHECK(v == doctest::Approx(0.25f));

  Tensor hot({1, 3});
  hot.values() = {1000.0f, 1001.0f, 1000.0f};
  const auto h = softmax_lastdim(hot);
  for (float v : h.values()) CHECK(std::isfinite(v));
  CHECK(h[1] > h[0]);
  CHECK(h[1] > h[2]);

  Rng rng(8);
  const auto x = oracle::random_tensor<float>(rng, {10, 7}, 20.0);
  const auto y = softmax_lastdim(x);
  for (int i = 0; i < 10; ++i) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += y.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng r2(seed);
    const auto xd = oracle::random_tensor<double>(r2, {3, 5}, 2.0);
    const auto r = oracle::random_tensor<double>(r2, {3, 5});
    check_grad([&](std::span<const double> p) { return project(softmax_lastdim(with(xd, p)), r); }, xd,
               softmax_backward(softmax_lastdim(xd), r));
  }
}

TEST_CASE("single-token attention reduces to the value path") {
  Rng rng(3);
  const int e = 4;
  const auto x = oracle::random_tensor<double>(rng, {1, e});
  const auto wqkv = oracle::random_tensor<double>(rng, {e, 3 * e});
  const auto bqkv = oracle::random_tensor<double>(rng, {3 * e});
  const auto wo = oracle::random_tensor<double>(rng, {e, e});
  const auto bo = oracle::random_tensor<double>(rng, {e});
  const auto y = multi_head_attention(x, AttentionWeights<double>{wqkv, bqkv, wo, bo}, 2).y;
  std::vector<double> v(e);
  for (int c = 0; c < e; ++c) {
    v[c] = bqkv[static_cast<std::size_t>(2 * e + c)];
    for (int k = 0; k < e; ++k) v[c] += x[static_cast<std::size_t>(k)] * wqkv.at(k, 2 * e + c);
  }
  for (int j = 0; j < e; ++j) {
    double want = bo[static_cast<std::size_t>(j)];
    for (int c = 0; c < e; ++c) want += v[c] * wo.at(c, j);
    CHECK(y[static_cast<std::size_t>(j)] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("attention is permutation equivariant") {
  Rng rng(5);
  const int n = 5, e = 8;
  const auto x = oracle::random_tensor<double>(rng, {n, e});
  const auto wqkv = oracle::random_tensor<double>(rng, {e, 3 * e});
  const auto bqkv = oracle::random_tensor<double>(rng, {3 * e});
  const auto wo = oracle::random_tensor<double>(rng, {e, e});
  const auto bo = oracle::random_tensor<double>(rng, {e});
  const AttentionWeights<double> w{wqkv, bqkv, wo, bo};
  const auto perm = rng.permutation(n);
  D xp({n, e});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < e; ++j) xp.at(i, j) = x.at(static_cast<int>(perm[i]), j);
  const auto y = multi_head_attention(x, w, 2).y;
  const auto yp = multi_head_attention(xp, w, 2).y;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < e; ++j) CHECK(yp.at(i, j) == doctest::Approx(y.at(static_cast<int>(perm[i]), j)).epsilon(1e-12));
  CHECK_THROWS_AS(multi_head_attention(x, w, 3), Error);
}

TEST_CASE("attention gradients on 3 tokens, e=8, h=2") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    const int n = 3, e = 8;
    const auto x = oracle::random_tensor<double>(rng, {n, e});
    const auto wqkv = oracle::random_tensor<double>(rng, {e, 3 * e});
    const auto bqkv = oracle::random_tensor<double>(rng, {3 * e});
    const auto wo = oracle::random_tensor<double>(rng, {e, e});
    const auto bo = oracle::random_tensor<double>(rng, {e});
    const auto r = oracle::random_tensor<double>(rng, {n, e});
    const AttentionWeights<double> w{wqkv, bqkv, wo, bo};
    const auto fw = multi_head_attention(x, w, 2);
    const auto g = multi_head_attention_backward(x, w, 2, fw.cache, r);
    auto run = [&](const D& xx, const D& a, const D& b, const D& c, const D& d) {
      return project(multi_head_attention(xx, AttentionWeights<double>{a, b, c, d}, 2).y, r);
    };
    check_grad([&](std::span<const double> p) { return run(with(x, p), wqkv, bqkv, wo, bo); }, x, g.dx);
    check_grad([&](std::span<const double> p) { return run(x, with(wqkv, p), bqkv, wo, bo); }, wqkv, g.dwqkv);
    check_grad([&](std::span<const double> p) { return run(x, wqkv, with(bqkv, p), wo, bo); }, bqkv, g.dbqkv);
    check_grad([&](std::span<const double> p) { return run(x, wqkv, bqkv, with(wo, p), bo); }, wo, g.dwo);
    check_grad([&](std::span<const double> p) { return run(x, wqkv, bqkv, wo, with(bo, p)); }, bo, g.dbo);
  }
}

TEST_CASE("adam with zero gradient leaves parameters alone") {
  std::vector<float> p{1.0f, -2.0f, 3.0f};
  const std::vector<float> g(3, 0.0f);
  AdamState s;
  adam_step(p, g, s, AdamOptions{});
  CHECK(p == std::vector<float>{1.0f, -2.0f, 3.0f});
  CHECK(s.t == 1);
}

TEST_CASE("adam matches a hand-rolled scalar trace") {
  AdamOptions opt;
  opt.lr = 0.01f;
  opt.weight_decay = 0.1f;
  std::vector<float> p{0.5f};
  AdamState s;
  double theta = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.3, -0.7, 0.2};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    adam_step(p, std::vector<float>{static_cast<float>(g)}, s, opt);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    theta -= 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * theta);
    CHECK(p[0] == doctest::Approx(theta).epsilon(1e-6));
  }
  // First step moves by ~lr against the gradient sign.
  std::vector<float> q{0.0f};
  AdamState s2;
  AdamOptions plain;
  plain.lr = 0.1f;
  adam_step(q, std::vector<float>{-4.0f}, s2, plain);
  CHECK(q[0] == doctest::Approx(0.1f).epsilon(1e-6));
}

TEST_CASE("finite difference checker examples") {
  const std::vector<double> x{1.0, 1.0, 1.0};
  auto quad = [](std::span<const double> p) {
    double s = 0.0;
    for (double v : p) s += v * v;
    return s;
  };
  auto r = finite_difference_check<double>(quad, x, std::vector<double>{2.0, 2.0, 2.0});
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.numeric_at_worst == doctest::Approx(2.0).epsilon(1e-6));

  auto lin = [](std::span<const double> p) { return 3.0 * p[0] - 2.0 * p[1] + 0.5 * p[2]; };
  r = finite_difference_check<double>(lin, x, std::vector<double>{3.0, -2.0, 0.5});
  CHECK(r.max_rel_error < 1e-9);

  r = finite_difference_check<double>(lin, x, std::vector<double>{3.0, 2.0, 0.5});
  CHECK(r.max_rel_error > 1.0);
  CHECK(r.worst_index == 1);
}
