#include "mef/convlstm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mef/error.hpp"

namespace mef {

namespace {

std::string key(std::size_t layer, const char* name) { return "l" + std::to_string(layer) + "." + name; }

// Gate block g (0=i, 1=f, 2=c, 3=o) of a stacked [4C,H,W] pre-activation.
Var gate(Var stacked, std::size_t g, std::size_t hidden) { return slice_channels(stacked, g * hidden, hidden); }

void require_frames(std::span<const Var> inputs, const ConvLstmConfig& config, const char* who) {
  if (inputs.empty()) throw InvalidArgument(std::string(who) + ": need at least one input frame");
  const Shape& first = inputs[0].shape();
  if (first.size() != 3 || first[0] != config.input_channels) {
    throw InvalidArgument(std::string(who) + ": input frames must be [" + std::to_string(config.input_channels) +
                          ",H,W], got " + shape_string(first));
  }
  for (const auto& v : inputs) {
    if (v.shape() != first) {
      throw InvalidArgument(std::string(who) + ": frame shapes differ, " + shape_string(v.shape()) + " vs " +
                            shape_string(first));
    }
  }
}

}  // namespace

void ConvLstmConfig::validate() const {
  if (input_channels == 0) throw InvalidArgument("convlstm: input_channels must be >= 1");
  if (hidden.empty()) throw InvalidArgument("convlstm: need at least one layer");
  for (auto c : hidden) {
    if (c == 0) throw InvalidArgument("convlstm: hidden channels must be >= 1");
  }
  if (kernel == 0 || kernel % 2 == 0) throw InvalidArgument("convlstm: kernel size must be odd");
}

CellStepVars cell_step(Var x, const CellVars* prev, const BoundParams& params, std::size_t layer,
                       std::size_t kernel) {
  const Var w_x = params[key(layer, "w_x")];
  const Var w_h = params[key(layer, "w_h")];
  const std::size_t hidden = w_h.shape()[1];
  const std::size_t pad = (kernel - 1) / 2;
  if (x.shape().size() != 3 || x.shape()[0] != w_x.shape()[1]) {
    throw InvalidArgument("cell_step: layer " + std::to_string(layer) + " expects " +
                          std::to_string(w_x.shape()[1]) + " input channels, got " + shape_string(x.shape()));
  }
  const Shape state_shape{hidden, x.shape()[1], x.shape()[2]};
  if (prev && (prev->h.shape() != state_shape || prev->c.shape() != state_shape)) {
    throw InvalidArgument("cell_step: state must be " + shape_string(state_shape) + ", got H " +
                          shape_string(prev->h.shape()) + " C " + shape_string(prev->c.shape()));
  }

  // W_x*X + W_h*H + b for all four gates at once. With a zero prior state the
  // W_h*H and peephole terms vanish and are skipped.
  Var pre = conv2d(x, w_x, params[key(layer, "b")], pad);
  if (prev) pre = pre + conv2d(prev->h, w_h, pad);

  Var i_pre = gate(pre, 0, hidden);
  Var f_pre = gate(pre, 1, hidden);
  if (prev) {
    i_pre = i_pre + prev->c * params[key(layer, "w_ci")];
    f_pre = f_pre + prev->c * params[key(layer, "w_cf")];
  }
  const Var i = sigmoid(i_pre);
  const Var f = sigmoid(f_pre);
  const Var candidate = tanh(gate(pre, 2, hidden));
  const Var c = prev ? f * prev->c + i * candidate : i * candidate;
  const Var o = sigmoid(gate(pre, 3, hidden) + c * params[key(layer, "w_co")]);
  const Var h = o * tanh(c);
  return {{h, c}, i, f, o};
}

Var forward_next(std::span<const Var> inputs, const BoundParams& params, const ConvLstmConfig& config) {
  require_frames(inputs, config, "forward_next");
  const std::size_t layers = config.hidden.size();
  std::vector<CellVars> states;
  states.reserve(layers);
  for (const auto& frame : inputs) {
    Var x = frame;
    for (std::size_t l = 0; l < layers; ++l) {
      const CellVars* prev = l < states.size() ? &states[l] : nullptr;
      const CellVars next = cell_step(x, prev, params, l, config.kernel).state;
      if (prev) {
        states[l] = next;
      } else {
        states.push_back(next);
      }
      x = next.h;
    }
  }
  return sigmoid(conv2d(states.back().h, params["head.w"], params["head.b"], 0));
}

std::pair<Var, Var> rollout2(std::span<const Var> inputs, const BoundParams& params, const ConvLstmConfig& config) {
  const Var first = forward_next(inputs, params, config);
  std::vector<Var> shifted(inputs.begin() + 1, inputs.end());
  shifted.push_back(first);
  return {first, forward_next(shifted, params, config)};
}

ConvLstm::ConvLstm(ConvLstmConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t k = config_.kernel;
  std::size_t in = config_.input_channels;
  for (std::size_t l = 0; l < config_.hidden.size(); ++l) {
    const std::size_t c = config_.hidden[l];
    params_.add(key(l, "w_x"), glorot_kernel({4 * c, in, k, k}, rng));
    params_.add(key(l, "w_h"), glorot_kernel({4 * c, c, k, k}, rng));
    Grid b({4 * c, 1, 1});
    for (std::size_t j = c; j < 2 * c; ++j) b[j] = 1.0;
    params_.add(key(l, "b"), std::move(b));
    params_.add(key(l, "w_ci"), Grid({c, 1, 1}));
    params_.add(key(l, "w_cf"), Grid({c, 1, 1}));
    params_.add(key(l, "w_co"), Grid({c, 1, 1}));
    in = c;
  }
  params_.add("head.w", glorot_kernel({1, in, 1, 1}, rng));
  params_.add("head.b", Grid({1, 1, 1}));
}

ConvLstm::ConvLstm(ParamSet params) : params_(std::move(params)) {
  if (!params_.contains("l0.w_x")) throw InvalidArgument("convlstm: checkpoint has no layer 0 ('l0.w_x')");
  const Shape& first = params_["l0.w_x"].shape();
  if (first.size() != 4) throw InvalidArgument("convlstm: l0.w_x must be rank 4, got " + shape_string(first));
  config_.input_channels = first[1];
  config_.kernel = first[2];
  config_.hidden.clear();
  std::size_t in = config_.input_channels;
  for (std::size_t l = 0; params_.contains(key(l, "w_x")); ++l) {
    const Shape& wh = params_[key(l, "w_h")].shape();
    if (wh.size() != 4 || wh[0] != 4 * wh[1]) {
      throw InvalidArgument("convlstm: " + key(l, "w_h") + " must be [4C,C,k,k], got " + shape_string(wh));
    }
    const std::size_t c = wh[1], k = config_.kernel;
    const std::pair<std::string, Shape> expected[] = {
        {key(l, "w_x"), {4 * c, in, k, k}}, {key(l, "w_h"), {4 * c, c, k, k}}, {key(l, "b"), {4 * c, 1, 1}},
        {key(l, "w_ci"), {c, 1, 1}},        {key(l, "w_cf"), {c, 1, 1}},       {key(l, "w_co"), {c, 1, 1}}};
    for (const auto& [name, shape] : expected) {
      if (params_[name].shape() != shape) {
        throw InvalidArgument("convlstm: " + name + " must be " + shape_string(shape) + ", got " +
                              shape_string(params_[name].shape()));
      }
    }
    config_.hidden.push_back(c);
    in = c;
  }
  if (params_["head.w"].shape() != Shape{1, in, 1, 1} || params_["head.b"].shape() != Shape{1, 1, 1}) {
    throw InvalidArgument("convlstm: output head must map " + std::to_string(in) + " channels to 1");
  }
  if (params_.size() != 6 * config_.hidden.size() + 2) {
    throw InvalidArgument("convlstm: unexpected extra parameters in checkpoint");
  }
  config_.validate();
}

std::pair<CellState, GateActivations> ConvLstm::cell_step(const Grid& x, const CellState& prev,
                                                          std::size_t layer) const {
  if (layer >= config_.hidden.size()) throw InvalidArgument("cell_step: no layer " + std::to_string(layer));
  Tape tape;
  const BoundParams bound(tape, params_, false);
  const CellVars state{tape.constant(prev.h), tape.constant(prev.c)};
  const auto out = mef::cell_step(tape.constant(x), &state, bound, layer, config_.kernel);
  return {{out.state.h.value(), out.state.c.value()}, {out.i.value(), out.f.value(), out.o.value()}};
}

Grid ConvLstm::forward_next(std::span<const Grid> inputs) const {
  Tape tape;
  const BoundParams bound(tape, params_, false);
  std::vector<Var> vars;
  for (const auto& g : inputs) vars.push_back(tape.constant(g));
  return mef::forward_next(vars, bound, config_).value();
}

std::pair<Grid, Grid> ConvLstm::rollout2(std::span<const Grid> inputs) const {
  const Grid first = forward_next(inputs);
  std::vector<Grid> shifted(inputs.begin() + (inputs.empty() ? 0 : 1), inputs.end());
  shifted.push_back(first);
  return {first, forward_next(shifted)};
}

double predictor_loss(const ConvLstm& model, const InputsTargets& sample, ParamSet* grads) {
  if (sample.targets.size() != 2) {
    throw InvalidArgument("predictor_loss: need 2 targets, got " + std::to_string(sample.targets.size()));
  }
  Tape tape;
  const BoundParams bound(tape, model.params(), grads != nullptr);
  std::vector<Var> inputs;
  for (const auto& g : sample.inputs) inputs.push_back(tape.constant(g));
  const auto [v7, v8] = mef::rollout2(inputs, bound, model.config());
  const Var loss = mse(v7, tape.constant(sample.targets[0])) + mse(v8, tape.constant(sample.targets[1]));
  const double value = loss.value().item();
  if (grads && std::isfinite(value)) {
    tape.backward(loss);
    *grads = bound.gradients();
  }
  return value;
}

std::vector<LossRecord> train_predictor(ConvLstm& model, std::span<const InputsTargets> samples,
                                        const PredictorTrainConfig& config,
                                        const std::function<void(const LossRecord&)>& on_step) {
  if (samples.empty()) throw InvalidArgument("train_predictor: empty training set");
  if (config.batch == 0) throw InvalidArgument("train_predictor: batch must be >= 1");
  std::mt19937_64 rng(config.seed);
  Adam adam(config.adam);
  std::vector<std::size_t> order(samples.size());
  std::vector<LossRecord> log;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      if (config.max_steps && step >= config.max_steps) return log;
      const std::size_t end = std::min(order.size(), start + config.batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      ParamSet total = model.params().zeros_like();
      double loss = 0.0;
      for (std::size_t j = start; j < end; ++j) {
        ParamSet grads;
        const double l = predictor_loss(model, samples[order[j]], &grads);
        if (!std::isfinite(l)) {
          throw NumericalError("train_predictor: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                               std::to_string(step + 1) + " (sample " + std::to_string(order[j]) + ")");
        }
        loss += l * inv;
        total.add_scaled(grads, inv);
      }
      adam.step(model.params(), total);
      ++step;
      log.push_back({epoch, step, loss});
      if (on_step) on_step(log.back());
    }
  }
  return log;
}

std::vector<InputsTargets> make_samples(std::span<const FrameSequence> windows, const WindowSpec& spec) {
  std::vector<InputsTargets> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    auto io = split_io(w, spec);
    out.push_back({to_unit(io.inputs), to_unit(io.targets)});
  }
  return out;
}

std::vector<double> epoch_means(std::span<const LossRecord> log) {
  std::vector<double> sums, counts;
  for (const auto& r : log) {
    if (r.epoch > sums.size()) {
      sums.resize(r.epoch, 0.0);
      counts.resize(r.epoch, 0.0);
    }
    sums[r.epoch - 1] += r.loss;
    counts[r.epoch - 1] += 1.0;
  }
  for (std::size_t e = 0; e < sums.size(); ++e) sums[e] = counts[e] > 0 ? sums[e] / counts[e] : 0.0;
  return sums;
}

}  // namespace mef
