#include <cmath>
#include <random>

#include "doctest.h"
#include "mef/adam.hpp"
#include "mef/checkpoint.hpp"
#include "mef/error.hpp"
#include "mef/ops.hpp"
#include "mef/params.hpp"
#include "mef/tape.hpp"
#include "oracles.hpp"

using namespace mef;

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
  std::mt19937_64 rng(1);
  const auto x = oracle::random_grid({1, 5, 7}, rng);
  const Grid k({1, 1, 1, 1}, 1.0);
  CHECK(ops::conv2d(x, k, 0) == x);
}

TEST_CASE("conv2d: 3x3 ones on 3x3 ones gives 9 centre, 4 corners") {
  const Grid x({1, 3, 3}, 1.0);
  const Grid k({1, 1, 3, 3}, 1.0);
  const auto y = ops::conv2d(x, k, 1);
  const auto ref = oracle::direct_conv2d(x, k, 1, 1);
  CHECK(y == ref);
  CHECK(y.at(0, 1, 1) == 9.0);
  CHECK(y.at(0, 0, 0) == 4.0);
  CHECK(y.at(0, 2, 2) == 4.0);
  CHECK(y.at(0, 0, 1) == 6.0);
}

TEST_CASE("conv2d matches the direct-loop oracle, stride 1 and 2") {
  std::mt19937_64 rng(2);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t k : {1u, 3u, 5u}) {
      const auto x = oracle::random_grid({3, 8, 6}, rng);
      const auto w = oracle::random_grid({4, 3, k, k}, rng);
      const auto y = ops::conv2d(x, w, (k - 1) / 2, stride);
      const auto ref = oracle::direct_conv2d(x, w, (k - 1) / 2, stride);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects even kernels, mismatched channels and wrong padding") {
  const Grid x({2, 4, 4});
  CHECK_THROWS_AS(ops::conv2d(x, Grid({1, 2, 2, 2}), 1), InvalidArgument);
  CHECK_THROWS_AS(ops::conv2d(x, Grid({1, 3, 3, 3}), 1), InvalidArgument);
  CHECK_THROWS_AS(ops::conv2d(x, Grid({1, 2, 3, 3}), 0), InvalidArgument);
  CHECK_THROWS_AS(ops::conv2d(Grid({2, 4}), Grid({1, 2, 3, 3}), 1), InvalidArgument);
}

TEST_CASE("conv2d adjointness: <conv(x,k), y> == <x, conv_input_grad(y,k)>") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t stride = trial % 2 + 1;
    const auto x = oracle::random_grid({2, 6, 6}, rng);
    const auto k = oracle::random_grid({3, 2, 3, 3}, rng);
    const auto y = oracle::random_grid(ops::conv2d(x, k, 1, stride).shape(), rng);
    const double lhs = oracle::dot(ops::conv2d(x, k, 1, stride), y);
    const double rhs = oracle::dot(x, ops::conv2d_input_grad(y, k, x.shape(), 1, stride));
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::abs(lhs));
  }
}

TEST_CASE("conv2d gradient matches finite differences on 1x5x5 input, 1x1x3x3 kernel") {
  std::mt19937_64 rng(4);
  const auto x = oracle::random_grid({1, 5, 5}, rng);
  const auto k = oracle::random_grid({1, 1, 3, 3}, rng);
  const auto r = oracle::check_gradients(
      [](Tape&, std::span<const Var> v) { return sum(conv2d(v[0], v[1], 1)); }, {x, k});
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("pool_avg2 examples and errors") {
  const Grid x({1, 2, 2}, {1, 3, 5, 7});
  CHECK(ops::pool_avg2(x) == Grid({1, 1, 1}, {4.0}));
  CHECK(ops::pool_avg2(Grid({2, 4, 6}, 3.5)) == Grid({2, 2, 3}, 3.5));
  CHECK_THROWS_AS(ops::pool_avg2(Grid({1, 3, 4})), InvalidArgument);
  CHECK_THROWS_AS(ops::pool_avg2(Grid({1, 4, 5})), InvalidArgument);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = oracle::random_grid({2, 8, 4}, rng, 0.0, 255.0);
    CHECK(ops::pool_avg2(ops::upsample(g, 2, ops::Upsample::nearest)) == g);
    CHECK(std::abs(ops::pool_avg2(g).mean() - g.mean()) <= 1e-12);
  }
}

TEST_CASE("upsample examples") {
  const Grid row({1, 1, 2}, {1, 2});
  CHECK(ops::upsample(row, 2, ops::Upsample::nearest) == Grid({1, 2, 4}, {1, 1, 2, 2, 1, 1, 2, 2}));
  std::mt19937_64 rng(6);
  const auto g = oracle::random_grid({2, 3, 5}, rng);
  CHECK(ops::upsample(g, 1, ops::Upsample::nearest) == g);
  CHECK(ops::upsample(g, 1, ops::Upsample::bilinear) == g);
  const auto c = ops::upsample(Grid({1, 4, 4}, 0.7), 4, ops::Upsample::bilinear);
  for (double v : c.vec()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS_AS(ops::upsample(g, 0, ops::Upsample::bilinear), InvalidArgument);
}

TEST_CASE("bilinear upsample follows the half-pixel convention") {
  // [0, 4] upsampled x2: samples at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
  const auto y = ops::upsample(Grid({1, 1, 2}, {0, 4}), 2, ops::Upsample::bilinear);
  CHECK(y.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(y.at(0, 0, 1) == doctest::Approx(1.0));
  CHECK(y.at(0, 0, 2) == doctest::Approx(3.0));
  CHECK(y.at(0, 0, 3) == doctest::Approx(4.0));
}

TEST_CASE("upsample_grad is the adjoint of upsample") {
  std::mt19937_64 rng(7);
  for (auto mode : {ops::Upsample::nearest, ops::Upsample::bilinear}) {
    for (std::size_t f : {2u, 3u, 4u}) {
      const auto x = oracle::random_grid({2, 3, 4}, rng);
      const auto y = oracle::random_grid({2, 3 * f, 4 * f}, rng);
      const double lhs = oracle::dot(ops::upsample(x, f, mode), y);
      const double rhs = oracle::dot(x, ops::upsample_grad(y, f, mode));
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
  }
}

TEST_CASE("elementwise examples") {
  CHECK(ops::sigmoid(0.0) == 0.5);
  CHECK(ops::tanh(Grid({1}, 0.0))[0] == 0.0);
  std::mt19937_64 rng(8);
  const auto a = oracle::random_grid({2, 3, 3}, rng);
  CHECK(ops::mul(a, Grid(a.shape())) == Grid(a.shape()));
  const Grid bias({2, 1, 1}, {1.0, -2.0});
  const auto b = ops::add(a, bias);
  CHECK(b.at(1, 2, 2) == doctest::Approx(a.at(1, 2, 2) - 2.0));
  CHECK_THROWS_AS(ops::add(a, Grid({2, 3, 2})), InvalidArgument);
  CHECK_THROWS_AS(ops::mul(a, Grid({3, 1, 1})), InvalidArgument);
  CHECK(ops::leaky_relu(Grid({2}, {-1.0, 2.0}), 0.2) == Grid({2}, {-0.2, 2.0}));
}

TEST_CASE("unary op gradients match finite differences away from the kink") {
  std::mt19937_64 rng(9);
  for (int seed = 0; seed < 20; ++seed) {
    const auto x = oracle::random_grid_away_from_zero({2, 3, 3}, rng);
    CHECK(oracle::check_gradients([](Tape&, std::span<const Var> v) { return sum(sigmoid(v[0])); }, {x})
              .max_rel_error <= 1e-4);
    CHECK(oracle::check_gradients([](Tape&, std::span<const Var> v) { return sum(tanh(v[0])); }, {x})
              .max_rel_error <= 1e-4);
    CHECK(oracle::check_gradients([](Tape&, std::span<const Var> v) { return sum(leaky_relu(v[0], 0.2)); }, {x})
              .max_rel_error <= 1e-4);
  }
}

TEST_CASE("backward: linear and quadratic functionals") {
  std::mt19937_64 rng(10);
  const auto p = oracle::random_grid({2, 4, 4}, rng);
  {
    Tape t;
    auto v = t.parameter(p);
    t.backward(sum(v));
    CHECK(t.grad(v) == Grid(p.shape(), 1.0));
  }
  {
    Tape t;
    auto v = t.parameter(p);
    t.backward(sum(v * v));
    const auto g = t.grad(v);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(g[i] == 2.0 * p[i]);
  }
}

TEST_CASE("backward: errors and unreachable values") {
  Tape t;
  auto a = t.parameter(Grid({1, 2, 2}, 1.0));
  auto unused = t.parameter(Grid({1, 2, 2}, 3.0));
  auto side = sigmoid(unused);
  CHECK_THROWS_AS(t.backward(a), InvalidArgument);
  auto loss = sum(a * a);
  t.backward(loss);
  CHECK(t.grad(unused) == Grid({1, 2, 2}));
  CHECK(t.grad(side) == Grid({1, 2, 2}));
  CHECK_THROWS_AS(t.backward(loss), std::logic_error);
}

TEST_CASE("backward: random two-layer conv+sigmoid network") {
  std::mt19937_64 rng(11);
  for (int seed = 0; seed < 5; ++seed) {
    std::vector<Grid> in{oracle::random_grid({2, 6, 6}, rng), oracle::random_grid({3, 2, 3, 3}, rng),
                         oracle::random_grid({3, 1, 1}, rng), oracle::random_grid({1, 3, 3, 3}, rng)};
    const auto r = oracle::check_gradients(
        [](Tape&, std::span<const Var> v) {
          auto h = sigmoid(conv2d(v[0], v[1], v[2], 1));
          return sum(sigmoid(conv2d(h, v[3], 1)));
        },
        in);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Grid p({3}, {1.0, -2.0, 0.5});
  const auto before = p;
  AdamState s;
  adam_step(p, Grid({3}), s, AdamConfig{});
  CHECK(p == before);
  CHECK(s.t == 1);
}

TEST_CASE("adam: hand-computed bias-corrected step") {
  Grid p({1}, 1.0);
  AdamState s;
  adam_step(p, Grid({1}, 0.5), s, AdamConfig{0.002, 0.5, 0.999, 1e-8});
  // m_hat = 0.5, v_hat = 0.25 -> update = 0.002 * 0.5 / (0.5 + 1e-8)
  CHECK(p[0] == doctest::Approx(1.0 - 0.002 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(0.998).epsilon(1e-8));
  CHECK(s.v[0] >= 0.0);
}

TEST_CASE("adam: identical pairs step identically; shape mismatch throws") {
  std::mt19937_64 rng(12);
  auto p1 = oracle::random_grid({4, 4}, rng);
  auto p2 = p1;
  const auto g = oracle::random_grid({4, 4}, rng);
  AdamState s1, s2;
  for (int i = 0; i < 5; ++i) {
    adam_step(p1, g, s1, {});
    adam_step(p2, g, s2, {});
  }
  CHECK(p1 == p2);
  CHECK_THROWS_AS(adam_step(p1, Grid({3}), s1, {}), InvalidArgument);
}

TEST_CASE("checkpoint roundtrip and corrupt inputs") {
  std::mt19937_64 rng(13);
  ParamSet ps;
  ps.add("l0.w_xi", oracle::random_grid({4, 1, 3, 3}, rng));
  ps.add("head.b", oracle::random_grid({1, 1, 1}, rng));
  ps.add("\xce\xbb", Grid({2}, {1e300, -0.0}));
  const auto bytes = checkpoint::encode(ps);
  CHECK(checkpoint::decode(bytes) == ps);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(checkpoint::decode(bad), FormatError);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(checkpoint::decode(cut), FormatError);
}

TEST_CASE("ops are deterministic") {
  std::mt19937_64 rng(14);
  const auto x = oracle::random_grid({3, 16, 16}, rng);
  const auto k = oracle::random_grid({5, 3, 3, 3}, rng);
  CHECK(ops::conv2d(x, k, 1) == ops::conv2d(x, k, 1));
  CHECK(ops::conv2d_kernel_grad(x, x, {3, 3, 3, 3}, 1) == ops::conv2d_kernel_grad(x, x, {3, 3, 3, 3}, 1));
}
