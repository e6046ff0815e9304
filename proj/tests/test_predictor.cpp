#include <cmath>
#include <random>

#include "doctest.h"
#include "mef/checkpoint.hpp"
#include "mef/convlstm.hpp"
#include "mef/error.hpp"
#include "oracles.hpp"

using namespace mef;

namespace {

void randomize(ParamSet& params, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& [name, g] : params) g = oracle::random_grid(g.shape(), rng, lo, hi);
}

Grid pixel(const std::vector<double>& v) { return Grid({v.size(), 1, 1}, v); }

std::vector<Grid> constant_frames(std::size_t n, std::size_t size, double value) {
  return std::vector<Grid>(n, Grid({1, size, size}, value));
}

}  // namespace

TEST_CASE("cell_step: zero parameters give half-open gates and zero state") {
  ConvLstm model({1, {3}, 3}, 1);
  for (auto& [n, g] : model.params()) g.fill(0.0);
  std::mt19937_64 rng(2);
  CellState state{Grid({3, 5, 5}), Grid({3, 5, 5})};
  for (int t = 0; t < 4; ++t) {
    const auto [next, gates] = model.cell_step(oracle::random_grid({1, 5, 5}, rng), state, 0);
    CHECK(gates.i == Grid({3, 5, 5}, 0.5));
    CHECK(gates.f == Grid({3, 5, 5}, 0.5));
    CHECK(gates.o == Grid({3, 5, 5}, 0.5));
    CHECK(next.c == Grid({3, 5, 5}));
    CHECK(next.h == Grid({3, 5, 5}));
    state = next;
  }
}

TEST_CASE("1x1 kernels on one pixel match the vector peephole LSTM oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& hidden : {std::vector<std::size_t>{1}, std::vector<std::size_t>{3, 2}}) {
      ConvLstm model({1, hidden, 1}, seed);
      std::mt19937_64 rng(seed + 100);
      randomize(model.params(), rng);
      std::vector<oracle::ScalarLayer> ref;
      for (std::size_t l = 0; l < hidden.size(); ++l) ref.emplace_back(model.params(), l);

      std::vector<CellState> states;
      for (auto c : hidden) states.push_back({Grid({c, 1, 1}), Grid({c, 1, 1})});
      std::vector<Grid> frames;
      double worst = 0.0;
      for (int t = 0; t < 10; ++t) {
        frames.push_back(oracle::random_grid({1, 1, 1}, rng, 0.0, 1.0));
        std::vector<double> x{frames.back()[0]};
        Grid gx = frames.back();
        for (std::size_t l = 0; l < hidden.size(); ++l) {
          x = ref[l].step(x);
          states[l] = model.cell_step(gx, states[l], l).first;
          gx = states[l].h;
          for (std::size_t j = 0; j < hidden[l]; ++j) {
            worst = std::max(worst, std::abs(states[l].h[j] - ref[l].h[j]));
            worst = std::max(worst, std::abs(states[l].c[j] - ref[l].c[j]));
          }
        }
        // Head on the top hidden state after t+1 frames.
        double z = model.params()["head.b"][0];
        for (std::size_t j = 0; j < x.size(); ++j) z += model.params()["head.w"][j] * x[j];
        worst = std::max(worst, std::abs(model.forward_next(frames).item() - oracle::logistic(z)));
      }
      CHECK(worst <= 1e-12);
    }
  }
}

TEST_CASE("cell_step gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ConvLstm model({1, {4}, 3}, seed);
    std::mt19937_64 rng(seed + 7);
    randomize(model.params(), rng, -0.5, 0.5);
    std::vector<Grid> inputs;
    for (const auto& [n, g] : model.params()) inputs.push_back(g);
    inputs.push_back(oracle::random_grid({1, 6, 6}, rng));
    inputs.push_back(oracle::random_grid({4, 6, 6}, rng));
    inputs.push_back(oracle::random_grid({4, 6, 6}, rng));
    const ParamSet& params = model.params();
    const auto r = oracle::check_gradients(
        [&params](Tape&, std::span<const Var> v) {
          const std::size_t n = params.size();
          const BoundParams bound(params, std::vector<Var>(v.begin(), v.begin() + n));
          const CellVars prev{v[n + 1], v[n + 2]};
          return sum(cell_step(v[n], &prev, bound, 0, 3).state.h);
        },
        inputs);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gate and hidden ranges") {
  std::mt19937_64 rng(8);
  ConvLstm model({1, {4, 4}, 3}, 8);
  randomize(model.params(), rng, -3.0, 3.0);
  CellState state{Grid({4, 8, 8}), Grid({4, 8, 8})};
  for (int t = 0; t < 6; ++t) {
    const auto [next, gates] = model.cell_step(oracle::random_grid({1, 8, 8}, rng, 0.0, 1.0), state, 0);
    for (const Grid* g : {&gates.i, &gates.f, &gates.o}) {
      CHECK(g->min() > 0.0);
      CHECK(g->max() < 1.0);
    }
    CHECK(next.h.min() > -1.0);
    CHECK(next.h.max() < 1.0);
    state = next;
  }
}

TEST_CASE("memory decays with zero input and a closed input gate") {
  std::mt19937_64 rng(9);
  ConvLstm model({1, {4}, 3}, 9);
  randomize(model.params(), rng);
  auto& b = model.params()["l0.b"];
  for (std::size_t j = 0; j < 4; ++j) b[j] = -40.0;  // b_i
  CellState state{oracle::random_grid({4, 6, 6}, rng), oracle::random_grid({4, 6, 6}, rng, -2.0, 2.0)};
  for (int t = 0; t < 8; ++t) {
    const auto next = model.cell_step(Grid({1, 6, 6}), state, 0).first;
    for (std::size_t k = 0; k < next.c.size(); ++k) CHECK(std::abs(next.c[k]) <= std::abs(state.c[k]));
    state = next;
  }
}

TEST_CASE("forward_next: shape, range, determinism, errors") {
  std::mt19937_64 rng(10);
  ConvLstm model({1, {4, 4}, 3}, 10);
  std::vector<Grid> frames;
  for (int t = 0; t < 6; ++t) frames.push_back(oracle::random_grid({1, 7, 5}, rng, 0.0, 1.0));
  const Grid out = model.forward_next(frames);
  CHECK(out.shape() == Shape{1, 7, 5});
  CHECK(out.min() > 0.0);
  CHECK(out.max() < 1.0);
  CHECK(model.forward_next(frames) == out);
  CHECK_THROWS_AS(model.forward_next(std::vector<Grid>{}), InvalidArgument);
  frames[2] = Grid({1, 7, 6});
  CHECK_THROWS_AS(model.forward_next(frames), InvalidArgument);
}

TEST_CASE("rollout2 equals two chained forward_next calls") {
  std::mt19937_64 rng(11);
  ConvLstm model({1, {4, 3}, 3}, 11);
  randomize(model.params(), rng, -0.5, 0.5);
  std::vector<Grid> frames;
  for (int t = 0; t < 6; ++t) frames.push_back(oracle::random_grid({1, 6, 6}, rng, 0.0, 1.0));
  const auto [a, b] = model.rollout2(frames);
  const Grid first = model.forward_next(frames);
  std::vector<Grid> shifted(frames.begin() + 1, frames.end());
  shifted.push_back(first);
  CHECK(a == first);
  CHECK(b == model.forward_next(shifted));
  CHECK(b.min() > 0.0);
  CHECK(b.max() < 1.0);

  // Tape rollout agrees with the Grid-level one.
  Tape tape;
  const BoundParams bound(tape, model.params(), false);
  std::vector<Var> vars;
  for (const auto& f : frames) vars.push_back(tape.constant(f));
  const auto [ta, tb] = rollout2(vars, bound, model.config());
  CHECK(ta.value() == a);
  CHECK(tb.value() == b);
}

TEST_CASE("architecture is recovered from a checkpoint") {
  ConvLstm model({1, {5, 3}, 5}, 12);
  const ConvLstm loaded(checkpoint::decode(checkpoint::encode(model.params())));
  CHECK(loaded.config() == model.config());
  const auto frames = constant_frames(6, 6, 0.4);
  CHECK(loaded.forward_next(frames) == model.forward_next(frames));

  ParamSet broken = model.params();
  broken["l1.w_co"] = Grid({2, 1, 1});
  CHECK_THROWS_AS(ConvLstm{broken}, InvalidArgument);
  CHECK_THROWS_AS(ConvLstm{ParamSet{}}, InvalidArgument);
  CHECK_THROWS_AS(ConvLstm({1, {}, 3}, 1), InvalidArgument);
  CHECK_THROWS_AS(ConvLstm({1, {4}, 2}, 1), InvalidArgument);
}

TEST_CASE("train_predictor: empty set, determinism, NaN diagnostics") {
  ConvLstm model({1, {3}, 3}, 13);
  PredictorTrainConfig cfg;
  cfg.epochs = 2;
  CHECK_THROWS_AS(train_predictor(model, std::span<const InputsTargets>{}, cfg), InvalidArgument);

  std::mt19937_64 rng(13);
  std::vector<InputsTargets> samples;
  for (int s = 0; s < 6; ++s) {
    InputsTargets io;
    for (int t = 0; t < 6; ++t) io.inputs.push_back(oracle::random_grid({1, 6, 6}, rng, 0.0, 1.0));
    for (int t = 0; t < 2; ++t) io.targets.push_back(oracle::random_grid({1, 6, 6}, rng, 0.0, 1.0));
    samples.push_back(io);
  }
  ConvLstm a = model, b = model;
  const auto log_a = train_predictor(a, samples, cfg);
  const auto log_b = train_predictor(b, samples, cfg);
  REQUIRE(log_a.size() == 4);  // 2 epochs x ceil(6/4)
  CHECK(log_a.back().epoch == 2);
  CHECK(log_a.back().step == 4);
  for (std::size_t i = 0; i < log_a.size(); ++i) CHECK(log_a[i].loss == log_b[i].loss);
  CHECK(a.params() == b.params());
  CHECK_FALSE(a.params() == model.params());

  cfg.max_steps = 3;
  ConvLstm c = model;
  CHECK(train_predictor(c, samples, cfg).size() == 3);

  ConvLstm d = model;
  d.params()["head.b"][0] = std::nan("");
  try {
    train_predictor(d, samples, cfg);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("constant-frame windows train to the constant") {
  std::vector<InputsTargets> samples;
  for (int s = 0; s < 4; ++s) samples.push_back({constant_frames(6, 6, 0.7), constant_frames(2, 6, 0.7)});
  ConvLstm model({1, {4}, 3}, 14);
  PredictorTrainConfig cfg;
  cfg.epochs = 300;
  cfg.adam.lr = 0.01;
  const auto log = train_predictor(model, samples, cfg);
  CHECK(log.back().loss < 1e-5);
  const auto [a, b] = model.rollout2(samples[0].inputs);
  CHECK(std::abs(a.mean() - 0.7) < 0.005);
  CHECK(std::abs(b.mean() - 0.7) < 0.005);
}

TEST_CASE("make_samples normalizes windows") {
  std::vector<Grid> frames;
  for (int t = 0; t < 8; ++t) frames.emplace_back(Shape{1, 2, 2}, 25.5 * t);
  const std::vector<FrameSequence> windows{FrameSequence(frames, 0)};
  const auto samples = make_samples(windows);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].inputs[2][0] == doctest::Approx(0.2));
  CHECK(samples[0].targets[1][0] == doctest::Approx(0.7));

  const std::vector<LossRecord> log{{1, 1, 2.0}, {1, 2, 4.0}, {2, 3, 1.0}};
  CHECK(epoch_means(log) == std::vector<double>{3.0, 1.0});
}
