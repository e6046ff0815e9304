#include "mef/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mef/error.hpp"

namespace mef {

namespace {

constexpr double kLeak = 0.2;

std::string name(const char* prefix, std::size_t index, const char* suffix) {
  return std::string(prefix) + std::to_string(index) + suffix;
}

void add_conv(ParamSet& p, const std::string& stem, std::size_t out, std::size_t in, std::size_t k,
              std::mt19937_64& rng) {
  p.add(stem + ".w", glorot_kernel({out, in, k, k}, rng));
  p.add(stem + ".b", Grid({out, 1, 1}));
}

std::size_t count_levels(const ParamSet& p, const char* prefix, std::size_t first) {
  std::size_t n = 0;
  while (p.contains(name(prefix, first + n, ".w"))) ++n;
  return n;
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

template <typename Fn>
double batch_update(ParamSet& params, Adam& adam, std::span<const FusionSample> batch, Fn per_sample) {
  ParamSet total = params.zeros_like();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& s : batch) {
    Tape tape;
    const BoundParams bound(tape, params, true);
    const Var l = per_sample(tape, bound, s);
    loss += l.value().item() * inv;
    if (!std::isfinite(loss)) return loss;
    tape.backward(l);
    total.add_scaled(bound.gradients(), inv);
  }
  adam.step(params, total);
  return loss;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (in_channels == 0 || base == 0) throw InvalidArgument("generator: channel counts must be >= 1");
  if (depth == 0 || depth > 8) throw InvalidArgument("generator: depth must be in [1,8]");
  if (kernel == 0 || kernel % 2 == 0) throw InvalidArgument("generator: kernel size must be odd");
}

void DiscriminatorConfig::validate() const {
  if (in_channels < 2 || base == 0) throw InvalidArgument("discriminator: needs x and y channels");
  if (depth == 0 || depth > 8) throw InvalidArgument("discriminator: depth must be in [1,8]");
  if (kernel == 0 || kernel % 2 == 0) throw InvalidArgument("discriminator: kernel size must be odd");
}

ParamSet init_generator(const GeneratorConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  ParamSet p;
  add_conv(p, "g.enc0", c.base, c.in_channels, c.kernel, rng);
  for (std::size_t d = 1; d <= c.depth; ++d) {
    add_conv(p, name("g.down", d, ""), c.base << d, c.base << (d - 1), c.kernel, rng);
  }
  for (std::size_t d = c.depth; d >= 1; --d) {
    add_conv(p, name("g.up", d, ""), c.base << (d - 1), (c.base << d) + (c.base << (d - 1)), c.kernel, rng);
  }
  add_conv(p, "g.out", 1, c.base, 1, rng);
  return p;
}

ParamSet init_discriminator(const DiscriminatorConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(seed);
  ParamSet p;
  std::size_t in = c.in_channels;
  for (std::size_t d = 0; d < c.depth; ++d) {
    add_conv(p, name("d.conv", d, ""), c.base << d, in, c.kernel, rng);
    in = c.base << d;
  }
  add_conv(p, "d.fc", 1, in, 1, rng);
  return p;
}

GeneratorConfig generator_config(const ParamSet& p) {
  if (!p.contains("g.enc0.w")) throw InvalidArgument("generator: parameters lack 'g.enc0.w'");
  const Shape& stem = p["g.enc0.w"].shape();
  GeneratorConfig c{stem[1], count_levels(p, "g.down", 1), stem[0], stem[2]};
  c.validate();
  const ParamSet expected = init_generator(c, 0);
  if (expected.size() != p.size()) throw InvalidArgument("generator: unexpected parameter count");
  for (const auto& [n, g] : expected) {
    if (!p.contains(n) || p[n].shape() != g.shape()) {
      throw InvalidArgument("generator: parameter '" + n + "' missing or not " + shape_string(g.shape()));
    }
  }
  return c;
}

DiscriminatorConfig discriminator_config(const ParamSet& p) {
  if (!p.contains("d.conv0.w")) throw InvalidArgument("discriminator: parameters lack 'd.conv0.w'");
  const Shape& first = p["d.conv0.w"].shape();
  DiscriminatorConfig c{first[1], count_levels(p, "d.conv", 0), first[0], first[2]};
  c.validate();
  const ParamSet expected = init_discriminator(c, 0);
  if (expected.size() != p.size()) throw InvalidArgument("discriminator: unexpected parameter count");
  for (const auto& [n, g] : expected) {
    if (!p.contains(n) || p[n].shape() != g.shape()) {
      throw InvalidArgument("discriminator: parameter '" + n + "' missing or not " + shape_string(g.shape()));
    }
  }
  return c;
}

Var generator_forward(Var x, const BoundParams& p, const GeneratorConfig& c) {
  const Shape& s = x.shape();
  const std::size_t align = std::size_t{1} << c.depth;
  if (s.size() != 3 || s[0] != c.in_channels || s[1] % align != 0 || s[2] % align != 0) {
    throw InvalidArgument("generator_forward: input must be [" + std::to_string(c.in_channels) +
                          ",H,W] with H, W divisible by " + std::to_string(align) + ", got " + shape_string(s));
  }
  const std::size_t pad = (c.kernel - 1) / 2;
  std::vector<Var> enc{leaky_relu(conv2d(x, p["g.enc0.w"], p["g.enc0.b"], pad), kLeak)};
  for (std::size_t d = 1; d <= c.depth; ++d) {
    enc.push_back(leaky_relu(conv2d(enc.back(), p[name("g.down", d, ".w")], p[name("g.down", d, ".b")], pad, 2),
                             kLeak));
  }
  Var u = enc.back();
  for (std::size_t d = c.depth; d >= 1; --d) {
    const Var parts[] = {upsample(u, 2, ops::Upsample::nearest), enc[d - 1]};
    u = relu(conv2d(concat_channels(parts), p[name("g.up", d, ".w")], p[name("g.up", d, ".b")], pad));
  }
  return sigmoid(conv2d(u, p["g.out.w"], p["g.out.b"], 0));
}

Grid generator_forward(const Grid& x, const ParamSet& params) {
  Tape tape;
  const BoundParams bound(tape, params, false);
  return generator_forward(tape.constant(x), bound, generator_config(params)).value();
}

Var discriminator_forward(Var x, Var y, const BoundParams& p, const DiscriminatorConfig& c) {
  const Shape& sx = x.shape();
  const Shape& sy = y.shape();
  if (sx.size() != 3 || sy.size() != 3 || sy[0] != 1 || sx[1] != sy[1] || sx[2] != sy[2] ||
      sx[0] + 1 != c.in_channels) {
    throw InvalidArgument("discriminator_forward: x " + shape_string(sx) + " and y " + shape_string(sy) +
                          " do not fit a " + std::to_string(c.in_channels) + "-channel discriminator");
  }
  const std::size_t pad = (c.kernel - 1) / 2;
  const Var parts[] = {x, y};
  Var h = concat_channels(parts);
  for (std::size_t d = 0; d < c.depth; ++d) {
    h = leaky_relu(conv2d(h, p[name("d.conv", d, ".w")], p[name("d.conv", d, ".b")], pad, 2), kLeak);
  }
  return sigmoid(conv2d(global_avg_pool(h), p["d.fc.w"], p["d.fc.b"], 0));
}

double discriminator_forward(const Grid& x, const Grid& y, const ParamSet& params) {
  Tape tape;
  const BoundParams bound(tape, params, false);
  return discriminator_forward(tape.constant(x), tape.constant(y), bound, discriminator_config(params))
      .value()
      .item();
}

double bce(std::span<const double> probabilities, std::span<const double> labels) {
  if (probabilities.size() != labels.size() || probabilities.empty()) {
    throw InvalidArgument("bce: " + std::to_string(probabilities.size()) + " probabilities vs " +
                          std::to_string(labels.size()) + " labels");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = clamp_prob(probabilities[i]), a = labels[i];
    acc += a * std::log(p) + (1.0 - a) * std::log(1.0 - p);
  }
  return -acc / static_cast<double>(labels.size());
}

double loss_d(double d_real, double d_fake) {
  const double one = 1.0, zero = 0.0;
  return bce({&d_real, 1}, {&one, 1}) + bce({&d_fake, 1}, {&zero, 1});
}

double loss_g(double d_fake, const Grid& y_hat, const Grid& y, double lambda1, double lambda2) {
  require_same_shape(y_hat, y, "loss_g");
  double l1 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) l1 += std::abs(y[i] - y_hat[i]);
  const double one = 1.0;
  return lambda1 * bce({&d_fake, 1}, {&one, 1}) + lambda2 * l1 / static_cast<double>(y.size());
}

void GanHyper::validate() const {
  if (!(lambda1 >= 0 && lambda2 >= 0) || (lambda1 == 0 && lambda2 == 0)) {
    throw InvalidArgument("gan: lambda1 and lambda2 must be >= 0 and not both 0");
  }
  if (batch == 0) throw InvalidArgument("gan: batch must be >= 1");
}

FusionSample crop_sample(const FusionSample& s, std::size_t size, std::size_t top, std::size_t left) {
  if (top + size > s.y.height() || left + size > s.y.width()) {
    throw InvalidArgument("crop_sample: crop exceeds the " + std::to_string(s.y.height()) + "x" +
                          std::to_string(s.y.width()) + " frame");
  }
  auto cut = [&](const Grid& g) {
    Grid out({g.channels(), size, size});
    for (std::size_t c = 0; c < g.channels(); ++c)
      for (std::size_t y = 0; y < size; ++y) std::copy_n(g.row(c, top + y) + left, size, out.row(c, y));
    return out;
  };
  return {cut(s.x), cut(s.y), s.lead};
}

std::vector<GanRecord> train_gan(ParamSet& generator, ParamSet& discriminator, std::span<const FusionSample> samples,
                                 const GanHyper& hyper, const GanObserver& observer) {
  hyper.validate();
  if (samples.empty()) throw InvalidArgument("train_gan: empty sample list");
  const GeneratorConfig gc = generator_config(generator);
  const DiscriminatorConfig dc = discriminator_config(discriminator);
  const std::size_t side = samples[0].y.height();
  if (hyper.crop && (hyper.crop > side || hyper.crop % (std::size_t{1} << gc.depth) != 0)) {
    throw InvalidArgument("train_gan: crop " + std::to_string(hyper.crop) + " must fit the frame and the U-Net depth");
  }

  std::mt19937_64 rng(hyper.seed);
  Adam adam_g(hyper.adam), adam_d(hyper.adam);
  std::vector<std::size_t> order(samples.size());
  std::vector<GanRecord> log;
  std::size_t round = 0;
  auto notify = [&](GanUpdate u) {
    if (observer.on_update) observer.on_update(u, generator, discriminator);
  };

  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      if (hyper.max_rounds && round >= hyper.max_rounds) return log;
      ++round;
      std::vector<FusionSample> batch;
      for (std::size_t j = start; j < std::min(order.size(), start + hyper.batch); ++j) {
        const FusionSample& s = samples[order[j]];
        if (hyper.crop) {
          std::uniform_int_distribution<std::size_t> top(0, s.y.height() - hyper.crop);
          std::uniform_int_distribution<std::size_t> left(0, s.y.width() - hyper.crop);
          const std::size_t t = top(rng), l = left(rng);
          batch.push_back(crop_sample(s, hyper.crop, t, l));
        } else {
          batch.push_back(s);
        }
      }

      GanRecord rec{round, epoch, 0.0, 0.0, 0.0};
      rec.loss_d = batch_update(discriminator, adam_d, batch, [&](Tape& t, const BoundParams& d, const FusionSample& s) {
        return bce(discriminator_forward(t.constant(s.x), t.constant(s.y), d, dc), 1.0);
      });
      notify(GanUpdate::discriminator_real);

      std::vector<Grid> fakes;
      for (const auto& s : batch) fakes.push_back(generator_forward(s.x, generator));
      std::size_t k = 0;
      rec.loss_d += batch_update(discriminator, adam_d, batch, [&](Tape& t, const BoundParams& d, const FusionSample& s) {
        return bce(discriminator_forward(t.constant(s.x), t.constant(fakes[k++]), d, dc), 0.0);
      });
      notify(GanUpdate::discriminator_fake);

      const double inv = 1.0 / static_cast<double>(batch.size());
      rec.loss_g = batch_update(generator, adam_g, batch, [&](Tape& t, const BoundParams& g, const FusionSample& s) {
        const Var x = t.constant(s.x);
        const Var y_hat = generator_forward(x, g, gc);
        const Var l1 = mean_abs(y_hat, t.constant(s.y));
        rec.mean_l1 += l1.value().item() * inv;
        Var loss = scale(l1, hyper.lambda2);
        if (hyper.lambda1 > 0) {
          const BoundParams d(t, discriminator, false);
          loss = loss + scale(bce(discriminator_forward(x, y_hat, d, dc), 1.0), hyper.lambda1);
        }
        return loss;
      });
      notify(GanUpdate::generator);

      if (!std::isfinite(rec.loss_d) || !std::isfinite(rec.loss_g)) {
        throw NumericalError("train_gan: non-finite loss in round " + std::to_string(round) + " (L_D " +
                             std::to_string(rec.loss_d) + ", L_G " + std::to_string(rec.loss_g) + ")");
      }
      log.push_back(rec);
      if (observer.on_round) observer.on_round(rec);
    }
  }
  return log;
}

double discriminator_accuracy(std::span<const FusionSample> samples, const ParamSet& generator,
                              const ParamSet& discriminator) {
  if (samples.empty()) throw InvalidArgument("discriminator_accuracy: no samples");
  std::size_t correct = 0;
  for (const auto& s : samples) {
    if (discriminator_forward(s.x, s.y, discriminator) > 0.5) ++correct;
    if (discriminator_forward(s.x, generator_forward(s.x, generator), discriminator) < 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(2 * samples.size());
}

std::array<Grid, 2> fusion_conditioning(std::span<const Grid> inputs, std::span<const ConvLstm> models,
                                        const PyramidSpec& spec, FusionVariant variant, bool noise,
                                        std::uint64_t seed) {
  PyramidPrediction pred;
  if (variant == FusionVariant::multiscale) {
    pred = predict_multiscale(inputs, models, spec);
  } else {
    if (models.empty()) throw ConfigError("fusion_conditioning: single-scale variant needs a level-0 checkpoint");
    auto [p1, p2] = predict_level(inputs, models.first(1), spec, 0);
    pred = PyramidPrediction{spec, {std::vector<Grid>{std::move(p1)}, std::vector<Grid>{std::move(p2)}}};
  }
  const std::uint64_t base = seed * 0x9E3779B97F4A7C15ULL;
  return {fusion_input(pred, 1, noise, base + 1), fusion_input(pred, 2, noise, base + 2)};
}

std::vector<FusionSample> build_fusion_dataset(std::span<const InputsTargets> windows, std::span<const ConvLstm> models,
                                               const PyramidSpec& spec, FusionVariant variant, bool noise,
                                               std::uint64_t seed) {
  std::vector<FusionSample> out;
  out.reserve(2 * windows.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (windows[w].targets.size() != 2) throw InvalidArgument("build_fusion_dataset: windows need 2 targets");
    auto x = fusion_conditioning(windows[w].inputs, models, spec, variant, noise, seed + w);
    for (std::size_t lead = 1; lead <= 2; ++lead) {
      out.push_back({std::move(x[lead - 1]), windows[w].targets[lead - 1], lead});
    }
  }
  return out;
}

}  // namespace mef
