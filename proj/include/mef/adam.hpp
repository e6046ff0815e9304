#pragma once

#include <cstdint>
#include <vector>

#include "mef/grid.hpp"
#include "mef/params.hpp"

namespace mef {

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Grid m;
  Grid v;
  std::int64_t t = 0;
};

// Bias-corrected Adam update of one parameter. Moments are created on the
// first call.
void adam_step(Grid& param, const Grid& grad, AdamState& state, const AdamConfig& config);

/// Adam over a whole ParamSet, one state per entry.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParamSet& params, const ParamSet& grads);
  std::int64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::vector<AdamState> states_;
  std::int64_t steps_ = 0;
};

}  // namespace mef
