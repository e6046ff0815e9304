#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mef/adam.hpp"
#include "mef/dataset.hpp"
#include "mef/grid.hpp"
#include "mef/params.hpp"
#include "mef/tape.hpp"

namespace mef {

// Parameter layout of layer n (prefix "l<n>."), C = hidden channels:
//   w_x   [4C, C_in, k, k]  input kernels W_xi, W_xf, W_xc, W_xo stacked in that order
//   w_h   [4C, C,    k, k]  state kernels W_hi, W_hf, W_hc, W_ho
//   b     [4C, 1, 1]        b_i, b_f, b_c, b_o
//   w_ci, w_cf, w_co [C, 1, 1]  peephole weights
// Output head: "head.w" [1, C_top, 1, 1], "head.b" [1, 1, 1].
struct ConvLstmConfig {
  std::size_t input_channels = 1;
  std::vector<std::size_t> hidden{8, 8};
  std::size_t kernel = 3;

  void validate() const;
  friend bool operator==(const ConvLstmConfig&, const ConvLstmConfig&) = default;
};

struct CellState {
  Grid h;
  Grid c;
};

// Debug view of one step's gates.
struct GateActivations {
  Grid i;
  Grid f;
  Grid o;
};

struct CellVars {
  Var h;
  Var c;
};

struct CellStepVars {
  CellVars state;
  Var i, f, o;
};

// One peephole ConvLSTM step of layer `layer` on a tape. A null `prev` is the
// zero initial state.
CellStepVars cell_step(Var x, const CellVars* prev, const BoundParams& params, std::size_t layer,
                       std::size_t kernel);

// Next-frame prediction from a frame sequence ([C_in,H,W] each, values in
// [0,1]) starting from zero states.
Var forward_next(std::span<const Var> inputs, const BoundParams& params, const ConvLstmConfig& config);

// Autoregressive two-step rollout: the second call drops the oldest input and
// appends the first prediction.
std::pair<Var, Var> rollout2(std::span<const Var> inputs, const BoundParams& params, const ConvLstmConfig& config);

/// Stacked ConvLSTM with a 1x1 conv + sigmoid output head.
class ConvLstm {
 public:
  // Glorot kernels, zero peepholes and biases except forget bias +1.
  ConvLstm(ConvLstmConfig config, std::uint64_t seed);
  // Architecture recovered from parameter shapes.
  explicit ConvLstm(ParamSet params);

  const ConvLstmConfig& config() const noexcept { return config_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }

  std::pair<CellState, GateActivations> cell_step(const Grid& x, const CellState& prev, std::size_t layer) const;
  Grid forward_next(std::span<const Grid> inputs) const;
  std::pair<Grid, Grid> rollout2(std::span<const Grid> inputs) const;

 private:
  ConvLstmConfig config_;
  ParamSet params_;
};

struct PredictorTrainConfig {
  std::size_t batch = 4;
  std::size_t epochs = 150;
  std::size_t max_steps = 0;  // 0 = no limit
  std::uint64_t seed = 1;
  AdamConfig adam;
};

struct LossRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based optimizer step
  double loss = 0.0;
};

// Samples hold 6 inputs and 2 targets in [0,1]. The loss of one sample is
// mse(v7) + mse(v8) with v8 predicted from the rollout; a step averages it
// over the batch. `on_step`, when set, sees every record as it is produced.
std::vector<LossRecord> train_predictor(ConvLstm& model, std::span<const InputsTargets> samples,
                                        const PredictorTrainConfig& config,
                                        const std::function<void(const LossRecord&)>& on_step = {});

// Per-sample loss and gradient (exposed for tests).
double predictor_loss(const ConvLstm& model, const InputsTargets& sample, ParamSet* grads = nullptr);

// Length-8 windows in [0,255] -> unit-range samples.
std::vector<InputsTargets> make_samples(std::span<const FrameSequence> windows, const WindowSpec& spec = {});

// Mean loss per epoch.
std::vector<double> epoch_means(std::span<const LossRecord> log);

}  // namespace mef
