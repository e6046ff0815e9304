#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mef/error.hpp"
#include "mef/fusion.hpp"
#include "oracles.hpp"

using namespace mef;

namespace {

const double kLn2 = std::numbers::ln2;

// Straight-line binary cross-entropy of one probability.
double ref_bce(double p, double a) {
  p = std::min(std::max(p, 1e-7), 1.0 - 1e-7);
  return -(a * std::log(p) + (1.0 - a) * std::log(1.0 - p));
}

std::vector<FusionSample> toy_samples(std::size_t n, std::size_t size, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FusionSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    FusionSample s{oracle::random_grid({channels, size, size}, rng, 0.0, 1.0), {}, 1};
    s.y = slice_channels(s.x, 0, 1);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("bce, loss_d and loss_g hand values") {
  const double half = 0.5, one = 1.0;
  CHECK(std::abs(bce({&half, 1}, {&one, 1}) - kLn2) <= 1e-12);
  CHECK(std::abs(loss_d(0.5, 0.5) - 2.0 * kLn2) <= 1e-12);

  Grid y({1, 4, 4}, 0.5), y_hat({1, 4, 4}, 0.51);
  CHECK(std::abs(loss_g(0.5, y_hat, y, 1.0, 100.0) - 1.693147) <= 1e-6);
  CHECK(std::abs(loss_g(0.5, y, y, 3.0, 100.0) - 3.0 * kLn2) <= 1e-12);
  CHECK(std::abs(loss_g(0.9, y_hat, y, 0.0, 100.0) - 1.0) <= 1e-12);

  CHECK(bce(std::vector{1.0}, std::vector{1.0}) < 1e-6);
  CHECK(loss_d(1.0, 0.0) < 1e-6);
  CHECK_THROWS_AS(bce(std::vector{0.5, 0.5}, std::vector{1.0}), InvalidArgument);
}

TEST_CASE("losses match the straight-line reference on random inputs") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(5), a(5);
    double ref = 0.0;
    for (int j = 0; j < 5; ++j) {
      p[j] = unit(rng);
      a[j] = unit(rng) < 0.5 ? 0.0 : 1.0;
      ref += ref_bce(p[j], a[j]) / 5.0;
    }
    CHECK(std::abs(bce(p, a) - ref) <= 1e-12);

    // Label symmetry.
    std::vector<double> pq(5), aq(5);
    for (int j = 0; j < 5; ++j) {
      pq[j] = 1.0 - p[j];
      aq[j] = 1.0 - a[j];
    }
    CHECK(std::abs(bce(pq, aq) - bce(p, a)) <= 1e-9);

    const double r = unit(rng), f = unit(rng);
    CHECK(std::abs(loss_d(r, f) - (ref_bce(r, 1) + ref_bce(f, 0))) <= 1e-12);
    CHECK(std::abs(loss_d(1.0 - f, 1.0 - r) - loss_d(r, f)) <= 1e-9);

    const auto y = oracle::random_grid({1, 3, 3}, rng, 0.0, 1.0);
    const auto y_hat = oracle::random_grid({1, 3, 3}, rng, 0.0, 1.0);
    double l1 = 0.0;
    for (std::size_t k = 0; k < 9; ++k) l1 += std::abs(y[k] - y_hat[k]) / 9.0;
    CHECK(std::abs(loss_g(f, y_hat, y, 1.0, 100.0) - (ref_bce(f, 1) + 100.0 * l1)) <= 1e-12);
  }
}

TEST_CASE("generator and discriminator shapes and ranges") {
  std::mt19937_64 rng(2);
  const GeneratorConfig gc{4, 2, 4, 3};
  const auto g = init_generator(gc, 2);
  CHECK(generator_config(g) == gc);
  const auto x = oracle::random_grid({4, 16, 24}, rng, 0.0, 1.0);
  const Grid y_hat = generator_forward(x, g);
  CHECK(y_hat.shape() == Shape{1, 16, 24});
  CHECK(y_hat.min() > 0.0);
  CHECK(y_hat.max() < 1.0);
  CHECK(generator_forward(x, g) == y_hat);
  CHECK_THROWS_AS(generator_forward(Grid({4, 18, 16}), g), InvalidArgument);
  CHECK_THROWS_AS(generator_forward(Grid({3, 16, 16}), g), InvalidArgument);

  const DiscriminatorConfig dc{5, 3, 4, 3};
  const auto d = init_discriminator(dc, 3);
  CHECK(discriminator_config(d) == dc);
  const double real = discriminator_forward(x, oracle::random_grid({1, 16, 24}, rng, 0.0, 1.0), d);
  const double fake = discriminator_forward(x, y_hat, d);
  for (double p : {real, fake}) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  CHECK_THROWS_AS(discriminator_forward(x, Grid({1, 16, 16}), d), InvalidArgument);
  CHECK_THROWS_AS(discriminator_forward(x, Grid({2, 16, 24}), d), InvalidArgument);

  ParamSet broken = g;
  broken["g.up1.w"] = Grid({4, 4, 3, 3});
  CHECK_THROWS_AS(generator_config(broken), InvalidArgument);
}

TEST_CASE("generator gradients match finite differences") {
  const GeneratorConfig gc{4, 2, 4, 3};
  std::mt19937_64 rng(4);
  const ParamSet g = init_generator(gc, 4);
  std::vector<Grid> inputs;
  for (const auto& [n, v] : g) inputs.push_back(oracle::random_grid(v.shape(), rng, -0.5, 0.5));
  inputs.push_back(oracle::random_grid({4, 16, 16}, rng, 0.0, 1.0));
  const auto r = oracle::check_gradients(
      [&](Tape&, std::span<const Var> v) {
        const BoundParams bound(g, std::vector<Var>(v.begin(), v.end() - 1));
        return sum(generator_forward(v.back(), bound, gc));
      },
      inputs);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("discriminator gradients match finite differences") {
  const DiscriminatorConfig dc{3, 2, 4, 3};
  std::mt19937_64 rng(5);
  const ParamSet d = init_discriminator(dc, 5);
  std::vector<Grid> inputs;
  for (const auto& [n, v] : d) inputs.push_back(oracle::random_grid(v.shape(), rng, -0.5, 0.5));
  inputs.push_back(oracle::random_grid({2, 8, 8}, rng, 0.0, 1.0));
  inputs.push_back(oracle::random_grid({1, 8, 8}, rng, 0.0, 1.0));
  const auto r = oracle::check_gradients(
      [&](Tape&, std::span<const Var> v) {
        const BoundParams bound(d, std::vector<Var>(v.begin(), v.end() - 2));
        return bce(discriminator_forward(v[v.size() - 2], v.back(), bound, dc), 1.0);
      },
      inputs);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("train_gan: two D updates and one G update per round, frozen sides untouched") {
  const auto samples = toy_samples(5, 8, 2, 6);
  ParamSet g = init_generator({2, 1, 4, 3}, 6), d = init_discriminator({3, 2, 4, 3}, 7);
  GanHyper hyper;
  hyper.epochs = 2;
  std::vector<GanUpdate> updates;
  std::uint64_t g_sum = g.checksum(), d_sum = d.checksum();
  bool frozen_ok = true;
  GanObserver obs;
  obs.on_update = [&](GanUpdate u, const ParamSet& gp, const ParamSet& dp) {
    updates.push_back(u);
    if (u == GanUpdate::generator) {
      frozen_ok = frozen_ok && dp.checksum() == d_sum && gp.checksum() != g_sum;
    } else {
      frozen_ok = frozen_ok && gp.checksum() == g_sum && dp.checksum() != d_sum;
    }
    g_sum = gp.checksum();
    d_sum = dp.checksum();
  };
  const auto log = train_gan(g, d, samples, hyper, obs);
  REQUIRE(log.size() == 6);  // 2 epochs x ceil(5/2)
  REQUIRE(updates.size() == 18);
  for (std::size_t r = 0; r < 6; ++r) {
    CHECK(updates[3 * r] == GanUpdate::discriminator_real);
    CHECK(updates[3 * r + 1] == GanUpdate::discriminator_fake);
    CHECK(updates[3 * r + 2] == GanUpdate::generator);
  }
  CHECK(frozen_ok);
  CHECK(log.back().epoch == 2);
}

TEST_CASE("train_gan: determinism, crops and errors") {
  const auto samples = toy_samples(4, 16, 2, 8);
  const ParamSet g0 = init_generator({2, 1, 4, 3}, 8), d0 = init_discriminator({3, 2, 4, 3}, 9);
  GanHyper hyper;
  hyper.epochs = 1;
  hyper.crop = 8;
  ParamSet g1 = g0, d1 = d0, g2 = g0, d2 = d0;
  const auto a = train_gan(g1, d1, samples, hyper);
  const auto b = train_gan(g2, d2, samples, hyper);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].loss_d == b[i].loss_d);
    CHECK(a[i].loss_g == b[i].loss_g);
  }
  CHECK(g1 == g2);
  CHECK(d1 == d2);

  hyper.crop = 7;
  CHECK_THROWS_AS(train_gan(g1, d1, samples, hyper), InvalidArgument);
  hyper.crop = 0;
  hyper.lambda1 = hyper.lambda2 = 0.0;
  CHECK_THROWS_AS(train_gan(g1, d1, samples, hyper), InvalidArgument);
  hyper.lambda2 = 1.0;
  CHECK_THROWS_AS(train_gan(g1, d1, std::span<const FusionSample>{}, hyper), InvalidArgument);

  ParamSet bad = g0;
  bad["g.out.b"][0] = std::nan("");
  try {
    train_gan(bad, d1, samples, hyper);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("round 1") != std::string::npos);
  }
}

TEST_CASE("crop_sample cuts x and y together") {
  const auto s = toy_samples(1, 16, 3, 10)[0];
  const auto c = crop_sample(s, 8, 4, 6);
  CHECK(c.x.shape() == Shape{3, 8, 8});
  CHECK(c.x.at(2, 0, 0) == s.x.at(2, 4, 6));
  CHECK(c.y.at(0, 7, 7) == s.y.at(0, 11, 13));
  CHECK_THROWS_AS(crop_sample(s, 8, 9, 0), InvalidArgument);
}

TEST_CASE("build_fusion_dataset pairs leads with targets") {
  const PyramidSpec spec{16, 8, 2};
  std::vector<InputsTargets> windows;
  std::mt19937_64 rng(11);
  for (int w = 0; w < 3; ++w) {
    InputsTargets io;
    for (int t = 0; t < 6; ++t) io.inputs.push_back(oracle::random_grid({1, 16, 16}, rng, 0.0, 1.0));
    for (int t = 0; t < 2; ++t) io.targets.push_back(oracle::random_grid({1, 16, 16}, rng, 0.0, 1.0));
    windows.push_back(io);
  }
  const std::vector<ConvLstm> models{ConvLstm({1, {2}, 3}, 1), ConvLstm({1, {2}, 3}, 2)};
  const auto samples = build_fusion_dataset(windows, models, spec, FusionVariant::multiscale, true, 3);
  REQUIRE(samples.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(samples[i].lead == i % 2 + 1);
    CHECK(samples[i].y == windows[i / 2].targets[i % 2]);
    CHECK(samples[i].x.shape() == Shape{3, 16, 16});
  }
  CHECK_FALSE(slice_channels(samples[0].x, 2, 1) == slice_channels(samples[1].x, 2, 1));
  CHECK(build_fusion_dataset(windows, models, spec, FusionVariant::multiscale, false, 3)[0].x.channels() == 2);
  const auto single = build_fusion_dataset(windows, models, spec, FusionVariant::single_scale, true, 3);
  REQUIRE(single.size() == 6);
  CHECK(single[3].x.shape() == Shape{2, 16, 16});
  CHECK(slice_channels(single[3].x, 0, 1) == slice_channels(samples[3].x, 0, 1));
  CHECK_THROWS_AS(build_fusion_dataset(windows, std::span(models).first(1), spec, FusionVariant::multiscale, false, 3), ConfigError);
}

TEST_CASE("constant sequences with constant-perfect predictors give x == y") {
  // Zero weights everywhere except the head bias: every prediction is
  // sigmoid(b) regardless of input, which equals the constant c.
  const double c = 0.3;
  const PyramidSpec spec{16, 8, 2};
  std::vector<ConvLstm> models;
  for (int l = 0; l < 2; ++l) {
    ConvLstm m({1, {2}, 3}, 1);
    for (auto& [n, g] : m.params()) g.fill(0.0);
    m.params()["head.b"][0] = std::log(c / (1.0 - c));
    models.push_back(std::move(m));
  }
  const std::vector<InputsTargets> windows{
      {std::vector<Grid>(6, Grid({1, 16, 16}, c)), std::vector<Grid>(2, Grid({1, 16, 16}, c))}};
  for (const auto& s : build_fusion_dataset(windows, models, spec, FusionVariant::multiscale, false, 0)) {
    for (std::size_t ch = 0; ch < 2; ++ch) {
      const Grid channel = slice_channels(s.x, ch, 1);
      for (std::size_t i = 0; i < channel.size(); ++i) CHECK(std::abs(channel[i] - s.y[i]) <= 1e-12);
    }
  }
}

TEST_CASE("discriminator_accuracy is a fraction of 2N calls") {
  const auto samples = toy_samples(3, 8, 2, 12);
  const auto g = init_generator({2, 1, 4, 3}, 1);
  const auto d = init_discriminator({3, 2, 4, 3}, 2);
  const double acc = discriminator_accuracy(samples, g, d);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(std::abs(acc * 6.0 - std::round(acc * 6.0)) < 1e-12);
}
