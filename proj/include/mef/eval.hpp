#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mef/convlstm.hpp"
#include "mef/dataset.hpp"
#include "mef/fusion.hpp"
#include "mef/grid.hpp"
#include "mef/pyramid.hpp"

namespace mef {

struct MetricsConfig {
  double max_i = kMaxGray;
  std::size_t window = 11;
  double sigma = 1.5;

  double c1() const { return (0.01 * max_i) * (0.01 * max_i); }
  double c2() const { return (0.03 * max_i) * (0.03 * max_i); }
  void validate() const;
};

struct PixelMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double psnr = 0.0;  // +inf when rmse == 0
};

PixelMetrics pixel_metrics(const Grid& reference, const Grid& estimate, const MetricsConfig& config = {});
double psnr_from_rmse(double rmse, double max_i = kMaxGray);

// Gaussian-windowed SSIM averaged over every full window position; images
// smaller than the window use global statistics.
double ssim(const Grid& x, const Grid& y, const MetricsConfig& config = {});

// Forecasts take the 6 observed frames in [0,255] and return +1 h, +2 h.
using Forecast = std::pair<Grid, Grid>;
using Forecaster = std::function<Forecast(std::span<const Grid>)>;

Forecast persistence_forecast(std::span<const Grid> inputs);

struct FlowConfig {
  std::size_t block = 8;
  std::size_t radius = 4;
  std::size_t levels = 3;
};

// Dense [2,H,W] displacement (dx, dy) with next(p) ~ prev(p - d(p)), from
// coarse-to-fine block matching.
Grid estimate_flow(const Grid& prev, const Grid& next, const FlowConfig& config = {});
// out(p) = frame(p - d(p)), bilinear, coordinates clamped to the border.
Grid advect(const Grid& frame, const Grid& flow);
// Flow between the last two inputs, applied once for +1 h and twice for +2 h.
Forecast optical_flow_forecast(std::span<const Grid> inputs, const FlowConfig& config = {});

// Tiled full-resolution predictor: one shared model or one per tile position.
Forecaster predictor_forecaster(std::vector<ConvLstm> models, PyramidSpec spec);
// `models` are the per-level predictors (level 0 first).
Forecaster fusion_forecaster(std::vector<ConvLstm> models, ParamSet generator, PyramidSpec spec,
                             FusionVariant variant, bool noise, std::uint64_t seed);

struct MetricsRow {
  std::string method;
  std::size_t lead = 1;
  double mae = 0.0;
  double rmse = 0.0;
  double mse = 0.0;  // mean per-window MSE; not part of the CSV report
  double psnr = 0.0;
  double ssim = 0.0;
  std::size_t windows = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  const MetricsRow& find(const std::string& method, std::size_t lead) const;
};

struct NamedForecaster {
  std::string name;
  Forecaster forecast;
};

// Windows are length-8 sequences in [0,255]; metrics are averaged per window.
MetricsReport evaluate_all(std::span<const FrameSequence> windows, std::span<const NamedForecaster> methods,
                           const MetricsConfig& config = {});

// method,lead_hours,MAE,RMSE,PSNR_dB,SSIM,n_windows
std::string report_csv(const MetricsReport& report);

// Grayscale panel: top row the 6 inputs, then one row per truth/method with
// lead 1 and lead 2 side by side, 2 px gaps.
Grid render_panel(std::span<const Grid> inputs, const Forecast& truth, std::span<const Forecast> predictions);

}  // namespace mef
