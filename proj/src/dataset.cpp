#include "mef/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "mef/error.hpp"

namespace mef {

FrameSequence::FrameSequence(std::vector<Grid> frames, std::int64_t start_hour, std::int64_t cadence)
    : frames_(std::move(frames)), cadence_(cadence) {
  hours_.reserve(frames_.size());
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    hours_.push_back(start_hour + static_cast<std::int64_t>(i) * cadence);
  }
  validate();
}

FrameSequence::FrameSequence(std::vector<Grid> frames, std::vector<std::int64_t> hours, std::int64_t cadence)
    : frames_(std::move(frames)), hours_(std::move(hours)), cadence_(cadence) {
  validate();
}

void FrameSequence::validate() const {
  if (cadence_ <= 0) throw InvalidArgument("frame sequence: cadence must be positive");
  if (hours_.size() != frames_.size()) throw InvalidArgument("frame sequence: one hour stamp per frame required");
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    const auto& f = frames_[i];
    if (f.rank() != 3 || f.channels() != 1) {
      throw InvalidArgument("frame sequence: frame " + std::to_string(i) + " must be [1,H,W], got " +
                            shape_string(f.shape()));
    }
    if (f.shape() != frames_[0].shape()) {
      throw InvalidArgument("frame sequence: frame " + std::to_string(i) + " shape " + shape_string(f.shape()) +
                            " differs from " + shape_string(frames_[0].shape()));
    }
    for (double v : f.vec()) {
      if (!(v >= 0.0 && v <= kMaxGray)) {
        throw InvalidArgument("frame sequence: frame " + std::to_string(i) + " has value " + std::to_string(v) +
                              " outside [0,255]");
      }
    }
    if (i > 0 && hours_[i] <= hours_[i - 1]) {
      throw InvalidArgument("frame sequence: hour stamps must strictly increase");
    }
  }
}

bool FrameSequence::contiguous() const {
  for (std::size_t i = 1; i < hours_.size(); ++i) {
    if (hours_[i] - hours_[i - 1] != cadence_) return false;
  }
  return true;
}

FrameSequence FrameSequence::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw InvalidArgument("frame sequence: slice out of range");
  const auto b = static_cast<std::ptrdiff_t>(begin);
  const auto e = static_cast<std::ptrdiff_t>(begin + count);
  return FrameSequence(std::vector<Grid>(frames_.begin() + b, frames_.begin() + e),
                       std::vector<std::int64_t>(hours_.begin() + b, hours_.begin() + e), cadence_);
}

void WindowSpec::validate() const {
  if (step == 0) throw InvalidArgument("window spec: step must be >= 1");
  if (input_len == 0 || target_len == 0) throw InvalidArgument("window spec: input and target lengths must be >= 1");
  if (input_len + target_len != length) {
    throw InvalidArgument("window spec: input_len + target_len (" + std::to_string(input_len + target_len) +
                          ") must equal length (" + std::to_string(length) + ")");
  }
}

std::size_t window_count(std::size_t n, std::size_t length, std::size_t step) {
  if (step == 0 || length == 0) throw InvalidArgument("window_count: length and step must be >= 1");
  return n < length ? 0 : (n - length) / step + 1;
}

std::vector<FrameSequence> window_train(const FrameSequence& seq, const WindowSpec& spec) {
  spec.validate();
  std::vector<FrameSequence> out;
  const std::size_t count = window_count(seq.size(), spec.length, spec.step);
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) out.push_back(seq.slice(w * spec.step, spec.length));
  return out;
}

std::vector<FrameSequence> window_test(const FrameSequence& seq, std::size_t length) {
  if (length == 0) throw InvalidArgument("window_test: length must be >= 1");
  std::vector<FrameSequence> out;
  std::size_t run_start = 0;
  for (std::size_t i = 1; i <= seq.size(); ++i) {
    const bool run_ends = i == seq.size() || seq.hours()[i] - seq.hours()[i - 1] != seq.cadence();
    if (!run_ends) continue;
    for (std::size_t b = run_start; b + length <= i; b += length) out.push_back(seq.slice(b, length));
    run_start = i;
  }
  return out;
}

InputsTargets split_io(const FrameSequence& window, const WindowSpec& spec) {
  spec.validate();
  if (window.size() != spec.length) {
    throw InvalidArgument("split_io: window has " + std::to_string(window.size()) + " frames, expected " +
                          std::to_string(spec.length));
  }
  const auto& f = window.frames();
  const auto mid = f.begin() + static_cast<std::ptrdiff_t>(spec.input_len);
  return {std::vector<Grid>(f.begin(), mid), std::vector<Grid>(mid, f.end())};
}

Grid to_unit(const Grid& frame) {
  Grid out(frame.shape());
  for (std::size_t i = 0; i < frame.size(); ++i) out[i] = frame[i] / kMaxGray;
  return out;
}

Grid from_unit(const Grid& frame) {
  Grid out(frame.shape());
  for (std::size_t i = 0; i < frame.size(); ++i) out[i] = frame[i] * kMaxGray;
  return out;
}

std::vector<Grid> to_unit(const std::vector<Grid>& frames) {
  std::vector<Grid> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(to_unit(f));
  return out;
}

void SyntheticConfig::validate() const {
  if (size == 0) throw InvalidArgument("synthetic: size must be positive");
  if (size < 32) throw InvalidArgument("synthetic: size must be >= 32, got " + std::to_string(size));
  if (frames == 0) throw InvalidArgument("synthetic: frame count must be positive");
  if (blob_count == 0 && blobs.empty()) throw InvalidArgument("synthetic: need at least one blob");
  for (double v : {amplitude_min, amplitude_max, radius_min, radius_max, speed_max, growth_max, advection, drift_x,
                   drift_y, background, noise}) {
    if (!std::isfinite(v)) throw InvalidArgument("synthetic: all rates must be finite");
  }
  if (amplitude_min < 0 || amplitude_max < amplitude_min) throw InvalidArgument("synthetic: bad amplitude range");
  if (radius_min <= 0 || radius_max < radius_min) throw InvalidArgument("synthetic: bad radius range");
  if (speed_max < 0 || growth_max < 0 || noise < 0) throw InvalidArgument("synthetic: negative rate");
}

std::pair<double, double> advection_velocity(const SyntheticConfig& c, double x, double y) {
  // Stream function A*L/(2pi) * sin(kx + p1) * sin(ky + p2), one wavelength
  // across the domain; divergence-free cells of half the domain size.
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double k = two_pi / static_cast<double>(c.size);
  std::mt19937_64 phase_rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> phase(0.0, two_pi);
  const double p1 = phase(phase_rng), p2 = phase(phase_rng);
  const double u = c.advection * std::sin(k * x + p1) * std::cos(k * y + p2);
  const double v = -c.advection * std::cos(k * x + p1) * std::sin(k * y + p2);
  return {u + c.drift_x, v + c.drift_y};
}

namespace {

Blob random_blob(const SyntheticConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = static_cast<double>(c.size);
  Blob b;
  b.x = unit(rng) * s;
  b.y = unit(rng) * s;
  b.amplitude = c.amplitude_min + unit(rng) * (c.amplitude_max - c.amplitude_min);
  b.radius = c.radius_min * std::pow(c.radius_max / c.radius_min, unit(rng));
  const double speed = unit(rng) * c.speed_max;
  const double dir = unit(rng) * 2.0 * std::numbers::pi;
  b.vx = speed * std::cos(dir);
  b.vy = speed * std::sin(dir);
  b.growth = (2.0 * unit(rng) - 1.0) * c.growth_max;
  return b;
}

void render(const std::vector<Blob>& blobs, const SyntheticConfig& c, std::mt19937_64& noise_rng, Grid& frame) {
  const auto n = static_cast<long>(c.size);
  frame.fill(c.background);
  for (const auto& b : blobs) {
    const double reach = 4.0 * b.radius;
    const long x0 = std::max(0L, static_cast<long>(std::floor(b.x - reach)));
    const long x1 = std::min(n - 1, static_cast<long>(std::ceil(b.x + reach)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(b.y - reach)));
    const long y1 = std::min(n - 1, static_cast<long>(std::ceil(b.y + reach)));
    const double inv = 1.0 / (2.0 * b.radius * b.radius);
    for (long y = y0; y <= y1; ++y) {
      for (long x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - b.x, dy = static_cast<double>(y) - b.y;
        frame.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) +=
            b.amplitude * std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : frame.vec()) {
    if (c.noise > 0) v += c.noise * noise(noise_rng);
    v = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, kMaxGray)));
  }
}

}  // namespace

FrameSequence gen_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::seed_seq seq{config.seed, std::uint64_t{0x5eed}};
  std::mt19937_64 blob_rng(seq);
  std::mt19937_64 noise_rng(config.seed * 0x2545F4914F6CDD1DULL + 1);

  std::vector<Blob> blobs = config.blobs;
  if (blobs.empty()) {
    for (std::size_t i = 0; i < config.blob_count; ++i) blobs.push_back(random_blob(config, blob_rng));
  }
  const double s = static_cast<double>(config.size);
  std::vector<Grid> frames;
  frames.reserve(config.frames);
  for (std::size_t t = 0; t < config.frames; ++t) {
    Grid frame({1, config.size, config.size});
    render(blobs, config, noise_rng, frame);
    frames.push_back(std::move(frame));
    for (auto& b : blobs) {
      const auto [u, v] = advection_velocity(config, b.x, b.y);
      b.x += b.vx + u;
      b.y += b.vy + v;
      b.amplitude = std::min(kMaxGray, b.amplitude * std::exp(b.growth));
      const double margin = 3.0 * b.radius;
      const bool gone = b.x < -margin || b.y < -margin || b.x > s + margin || b.y > s + margin;
      const bool faded = b.amplitude < 0.1 * std::max(config.amplitude_min, 1.0);
      if (gone || faded) b = random_blob(config, blob_rng);
    }
  }
  return FrameSequence(std::move(frames), config.start_hour);
}

}  // namespace mef
