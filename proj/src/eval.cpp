#include "mef/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "mef/error.hpp"
#include "mef/ops.hpp"

namespace mef {

void MetricsConfig::validate() const {
  if (!(max_i > 0)) throw InvalidArgument("metrics: MAX_I must be positive");
  if (window == 0 || window % 2 == 0) throw InvalidArgument("metrics: SSIM window must be odd");
  if (!(sigma > 0)) throw InvalidArgument("metrics: SSIM sigma must be positive");
}

double psnr_from_rmse(double rmse, double max_i) {
  if (rmse == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(max_i / rmse);
}

PixelMetrics pixel_metrics(const Grid& reference, const Grid& estimate, const MetricsConfig& config) {
  config.validate();
  require_same_shape(reference, estimate, "pixel_metrics");
  if (reference.size() == 0) throw InvalidArgument("pixel_metrics: empty images");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = reference[i] - estimate[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const double n = static_cast<double>(reference.size());
  PixelMetrics m;
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.psnr = psnr_from_rmse(m.rmse, config.max_i);
  return m;
}

namespace {

struct Moments {
  double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
};

double ssim_from(const Moments& m, double c1, double c2) {
  const double vx = m.xx - m.mx * m.mx;
  const double vy = m.yy - m.my * m.my;
  const double cov = m.xy - m.mx * m.my;
  return ((2.0 * (m.mx * m.my) + c1) * (2.0 * cov + c2)) / ((m.mx * m.mx + m.my * m.my + c1) * (vx + vy + c2));
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size * size);
  const double centre = static_cast<double>(size - 1) / 2.0;
  double total = 0.0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - centre, dx = static_cast<double>(x) - centre;
      total += w[y * size + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  for (auto& v : w) v /= total;
  return w;
}

}  // namespace

double ssim(const Grid& x, const Grid& y, const MetricsConfig& config) {
  config.validate();
  require_same_shape(x, y, "ssim");
  require_rank(x, 3, "ssim");
  const std::size_t c = x.channels(), h = x.height(), w = x.width();
  const double c1 = config.c1(), c2 = config.c2();
  const std::size_t k = config.window;
  double total = 0.0;
  std::size_t count = 0;

  if (h < k || w < k) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      Moments m;
      const double inv = 1.0 / static_cast<double>(h * w);
      for (std::size_t i = 0; i < h * w; ++i) {
        const double a = x[ch * h * w + i], b = y[ch * h * w + i];
        m.mx += a * inv;
        m.my += b * inv;
        m.xx += a * a * inv;
        m.yy += b * b * inv;
        m.xy += (a * b) * inv;
      }
      total += ssim_from(m, c1, c2);
      ++count;
    }
    return total / static_cast<double>(count);
  }

  const auto win = gaussian_window(k, config.sigma);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy + k <= h; ++oy)
      for (std::size_t ox = 0; ox + k <= w; ++ox) {
        Moments m;
        for (std::size_t wy = 0; wy < k; ++wy) {
          const double* rx = x.row(ch, oy + wy) + ox;
          const double* ry = y.row(ch, oy + wy) + ox;
          const double* rw = win.data() + wy * k;
          for (std::size_t wx = 0; wx < k; ++wx) {
            const double a = rx[wx], b = ry[wx], g = rw[wx];
            m.mx += g * a;
            m.my += g * b;
            m.xx += g * a * a;
            m.yy += g * b * b;
            m.xy += g * (a * b);
          }
        }
        total += ssim_from(m, c1, c2);
        ++count;
      }
  return total / static_cast<double>(count);
}

Forecast persistence_forecast(std::span<const Grid> inputs) {
  if (inputs.empty()) throw InvalidArgument("persistence_forecast: no input frames");
  return {inputs.back(), inputs.back()};
}

namespace {

double sample_clamped(const Grid& g, std::size_t c, double y, double x) {
  const double ymax = static_cast<double>(g.height() - 1), xmax = static_cast<double>(g.width() - 1);
  y = std::clamp(y, 0.0, ymax);
  x = std::clamp(x, 0.0, xmax);
  const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, g.height() - 1), x1 = std::min(x0 + 1, g.width() - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * g.at(c, y0, x0) + fx * g.at(c, y0, x1)) +
         fy * ((1 - fx) * g.at(c, y1, x0) + fx * g.at(c, y1, x1));
}

double pixel_clamped(const Grid& g, long y, long x) {
  y = std::clamp(y, 0L, static_cast<long>(g.height()) - 1);
  x = std::clamp(x, 0L, static_cast<long>(g.width()) - 1);
  return g.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
}

// Bilinear interpolation of per-block vectors anchored at block centres.
Grid densify(const std::vector<std::array<long, 2>>& vectors, std::size_t rows, std::size_t cols, std::size_t block,
             std::size_t h, std::size_t w) {
  Grid coarse({2, rows, cols});
  for (std::size_t b = 0; b < vectors.size(); ++b) {
    coarse[b] = static_cast<double>(vectors[b][0]);
    coarse[rows * cols + b] = static_cast<double>(vectors[b][1]);
  }
  Grid dense({2, h, w});
  const double f = static_cast<double>(block);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        dense.at(c, y, x) = sample_clamped(coarse, c, (static_cast<double>(y) + 0.5) / f - 0.5,
                                           (static_cast<double>(x) + 0.5) / f - 0.5);
      }
  return dense;
}

Grid match_level(const Grid& prev, const Grid& next, const Grid& prior, const FlowConfig& cfg) {
  const std::size_t h = prev.height(), w = prev.width(), b = cfg.block;
  const std::size_t rows = (h + b - 1) / b, cols = (w + b - 1) / b;
  const long r = static_cast<long>(cfg.radius);
  std::vector<std::array<long, 2>> vectors(rows * cols);
  for (std::size_t by = 0; by < rows; ++by)
    for (std::size_t bx = 0; bx < cols; ++bx) {
      const std::size_t y0 = by * b, x0 = bx * b;
      const std::size_t y1 = std::min(h, y0 + b), x1 = std::min(w, x0 + b);
      const std::size_t cy = (y0 + y1 - 1) / 2, cx = (x0 + x1 - 1) / 2;
      const long px = std::lround(prior.at(0, cy, cx)), py = std::lround(prior.at(1, cy, cx));
      double best = std::numeric_limits<double>::infinity();
      long best_norm = 0;
      std::array<long, 2> best_d{px, py};
      for (long dy = py - r; dy <= py + r; ++dy)
        for (long dx = px - r; dx <= px + r; ++dx) {
          double sad = 0.0;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) {
              sad += std::abs(next.at(0, y, x) -
                              pixel_clamped(prev, static_cast<long>(y) - dy, static_cast<long>(x) - dx));
            }
          const long norm = dx * dx + dy * dy;
          if (sad < best || (sad == best && norm < best_norm)) {
            best = sad;
            best_norm = norm;
            best_d = {dx, dy};
          }
        }
      vectors[by * cols + bx] = best_d;
    }
  return densify(vectors, rows, cols, b, h, w);
}

}  // namespace

Grid estimate_flow(const Grid& prev, const Grid& next, const FlowConfig& cfg) {
  require_same_shape(prev, next, "estimate_flow");
  require_rank(prev, 3, "estimate_flow");
  if (prev.channels() != 1) throw InvalidArgument("estimate_flow: expected single-channel frames");
  if (cfg.block == 0 || cfg.levels == 0) throw InvalidArgument("estimate_flow: block and levels must be >= 1");
  if (prev.height() < cfg.block || prev.width() < cfg.block) {
    throw InvalidArgument("estimate_flow: frame " + std::to_string(prev.height()) + "x" +
                          std::to_string(prev.width()) + " is smaller than one " + std::to_string(cfg.block) +
                          "-pixel block");
  }
  std::vector<Grid> a{prev}, b{next};
  while (a.size() < cfg.levels) {
    const Grid& top = a.back();
    if (top.height() % 2 || top.width() % 2 || top.height() / 2 < cfg.block || top.width() / 2 < cfg.block) break;
    a.push_back(ops::pool_avg2(top));
    b.push_back(ops::pool_avg2(b.back()));
  }
  Grid flow({2, a.back().height(), a.back().width()});
  for (std::size_t l = a.size(); l-- > 0;) {
    if (l + 1 < a.size()) {
      flow = ops::upsample(flow, 2, ops::Upsample::bilinear);
      for (auto& v : flow.vec()) v *= 2.0;
    }
    flow = match_level(a[l], b[l], flow, cfg);
  }
  return flow;
}

Grid advect(const Grid& frame, const Grid& flow) {
  require_rank(frame, 3, "advect");
  if (flow.shape() != Shape{2, frame.height(), frame.width()}) {
    throw InvalidArgument("advect: flow " + shape_string(flow.shape()) + " does not match frame " +
                          shape_string(frame.shape()));
  }
  Grid out(frame.shape());
  for (std::size_t c = 0; c < frame.channels(); ++c)
    for (std::size_t y = 0; y < frame.height(); ++y)
      for (std::size_t x = 0; x < frame.width(); ++x) {
        out.at(c, y, x) = sample_clamped(frame, c, static_cast<double>(y) - flow.at(1, y, x),
                                         static_cast<double>(x) - flow.at(0, y, x));
      }
  return out;
}

Forecast optical_flow_forecast(std::span<const Grid> inputs, const FlowConfig& config) {
  if (inputs.size() < 2) throw InvalidArgument("optical_flow_forecast: need at least 2 input frames");
  const Grid flow = estimate_flow(inputs[inputs.size() - 2], inputs.back(), config);
  Grid first = advect(inputs.back(), flow);
  Grid second = advect(first, flow);
  return {std::move(first), std::move(second)};
}

Forecaster predictor_forecaster(std::vector<ConvLstm> models, PyramidSpec spec) {
  if (models.empty()) throw ConfigError("predictor: missing level-0 checkpoint");
  return [models = std::move(models), spec](std::span<const Grid> inputs) {
    const auto [p1, p2] = predict_level(to_unit(std::vector<Grid>(inputs.begin(), inputs.end())),
                                        models, spec, 0);
    return Forecast{from_unit(p1), from_unit(p2)};
  };
}

Forecaster fusion_forecaster(std::vector<ConvLstm> models, ParamSet generator, PyramidSpec spec,
                             FusionVariant variant, bool noise, std::uint64_t seed) {
  const std::size_t channels = generator_config(generator).in_channels;
  const std::size_t expected = (variant == FusionVariant::multiscale ? spec.levels : 1) + (noise ? 1 : 0);
  if (channels != expected) {
    throw ConfigError("fusion: generator takes " + std::to_string(channels) + " channels, conditioning has " +
                      std::to_string(expected));
  }
  return [models = std::move(models), generator = std::move(generator), spec, variant, noise,
          seed](std::span<const Grid> inputs) {
    const auto x = fusion_conditioning(to_unit(std::vector<Grid>(inputs.begin(), inputs.end())), models, spec,
                                       variant, noise, seed);
    return Forecast{from_unit(generator_forward(x[0], generator)), from_unit(generator_forward(x[1], generator))};
  };
}

const MetricsRow& MetricsReport::find(const std::string& method, std::size_t lead) const {
  for (const auto& r : rows) {
    if (r.method == method && r.lead == lead) return r;
  }
  throw InvalidArgument("report: no row for " + method + " at lead " + std::to_string(lead));
}

MetricsReport evaluate_all(std::span<const FrameSequence> windows, std::span<const NamedForecaster> methods,
                           const MetricsConfig& config) {
  config.validate();
  if (windows.empty()) throw InvalidArgument("evaluate_all: no test windows");
  const WindowSpec spec;
  MetricsReport report;
  for (const auto& m : methods) {
    for (std::size_t lead = 1; lead <= 2; ++lead) report.rows.push_back({m.name, lead, 0, 0, 0, 0, 0, windows.size()});
  }
  const double inv = 1.0 / static_cast<double>(windows.size());
  for (const auto& w : windows) {
    const auto io = split_io(w, spec);
    for (std::size_t k = 0; k < methods.size(); ++k) {
      const Forecast f = methods[k].forecast(io.inputs);
      const Grid* predicted[] = {&f.first, &f.second};
      for (std::size_t lead = 0; lead < 2; ++lead) {
        const auto pm = pixel_metrics(io.targets[lead], *predicted[lead], config);
        auto& row = report.rows[2 * k + lead];
        row.mae += pm.mae * inv;
        row.rmse += pm.rmse * inv;
        row.mse += pm.rmse * pm.rmse * inv;
        row.psnr += pm.psnr * inv;
        row.ssim += ssim(io.targets[lead], *predicted[lead], config) * inv;
      }
    }
  }
  return report;
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "method,lead_hours,MAE,RMSE,PSNR_dB,SSIM,n_windows\n";
  char line[256];
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%s,%zu,%.6f,%.6f,%.6f,%.6f,%zu\n", r.method.c_str(), r.lead, r.mae, r.rmse,
                  r.psnr, r.ssim, r.windows);
    out << line;
  }
  return out.str();
}

Grid render_panel(std::span<const Grid> inputs, const Forecast& truth, std::span<const Forecast> predictions) {
  if (inputs.empty()) throw InvalidArgument("render_panel: no input frames");
  const std::size_t h = inputs[0].height(), w = inputs[0].width(), gap = 2;
  const std::size_t cols = std::max<std::size_t>(inputs.size(), 2);
  const std::size_t rows = 2 + predictions.size();
  Grid panel({1, rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap}, kMaxGray);
  auto place = [&](const Grid& g, std::size_t row, std::size_t col) {
    require_same_shape(g, inputs[0], "render_panel");
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(g.row(0, y), w, panel.row(0, row * (h + gap) + y) + col * (w + gap));
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) place(inputs[i], 0, i);
  place(truth.first, 1, 0);
  place(truth.second, 1, 1);
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    place(predictions[p].first, 2 + p, 0);
    place(predictions[p].second, 2 + p, 1);
  }
  return panel;
}

}  // namespace mef
