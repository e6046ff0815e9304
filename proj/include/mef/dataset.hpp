#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "mef/grid.hpp"

namespace mef {

inline constexpr double kMaxGray = 255.0;

/// Ordered single-channel frames ([1,H,W], values in [0,255]) with hour
/// stamps. Stamps strictly increase; a sequence whose stamps all differ by
/// the cadence is contiguous.
class FrameSequence {
 public:
  FrameSequence() = default;
  // Contiguous sequence starting at `start_hour`.
  FrameSequence(std::vector<Grid> frames, std::int64_t start_hour, std::int64_t cadence = 1);
  // Archive that may contain gaps.
  FrameSequence(std::vector<Grid> frames, std::vector<std::int64_t> hours, std::int64_t cadence = 1);

  const std::vector<Grid>& frames() const noexcept { return frames_; }
  const Grid& operator[](std::size_t i) const { return frames_.at(i); }
  const std::vector<std::int64_t>& hours() const noexcept { return hours_; }
  std::size_t size() const noexcept { return frames_.size(); }
  bool empty() const noexcept { return frames_.empty(); }
  std::int64_t start_hour() const { return hours_.empty() ? 0 : hours_.front(); }
  std::int64_t cadence() const noexcept { return cadence_; }
  std::size_t height() const { return frames_.at(0).height(); }
  std::size_t width() const { return frames_.at(0).width(); }

  bool contiguous() const;
  FrameSequence slice(std::size_t begin, std::size_t count) const;

  friend bool operator==(const FrameSequence&, const FrameSequence&) = default;

 private:
  void validate() const;

  std::vector<Grid> frames_;
  std::vector<std::int64_t> hours_;
  std::int64_t cadence_ = 1;
};

struct WindowSpec {
  std::size_t length = 8;
  std::size_t step = 1;
  std::size_t input_len = 6;
  std::size_t target_len = 2;

  void validate() const;
};

// floor((n - length) / step) + 1 for n >= length, else 0.
std::size_t window_count(std::size_t n, std::size_t length, std::size_t step);

// Overlapping training windows; empty when the sequence is shorter than one.
std::vector<FrameSequence> window_train(const FrameSequence& seq, const WindowSpec& spec);

// Disjoint consecutive windows inside each contiguous run of hour stamps.
// Partial tails and windows that would span a gap are dropped.
std::vector<FrameSequence> window_test(const FrameSequence& seq, std::size_t length);

struct InputsTargets {
  std::vector<Grid> inputs;
  std::vector<Grid> targets;
};

InputsTargets split_io(const FrameSequence& window, const WindowSpec& spec);

// [0,255] <-> [0,1].
Grid to_unit(const Grid& frame);
Grid from_unit(const Grid& frame);
std::vector<Grid> to_unit(const std::vector<Grid>& frames);

/// One Gaussian cloud element; positions in pixels, rates per hour.
struct Blob {
  double x = 0, y = 0;
  double amplitude = 100;
  double radius = 4;  // Gaussian sigma
  double vx = 0, vy = 0;
  double growth = 0;  // log-amplitude change per hour
};

struct SyntheticConfig {
  std::size_t size = 64;
  std::size_t frames = 16;
  std::int64_t start_hour = 0;
  std::size_t blob_count = 12;
  double amplitude_min = 60;
  double amplitude_max = 180;
  double radius_min = 2;
  double radius_max = 12;
  double speed_max = 1.5;  // per-blob speed, px/h
  double growth_max = 0.08;
  double advection = 1.5;  // peak speed of the large-scale field, px/h
  double drift_x = 0;
  double drift_y = 0;
  double background = 20;
  double noise = 1.0;
  std::uint64_t seed = 1;
  // When non-empty, these blobs replace the random initial population.
  std::vector<Blob> blobs;

  void validate() const;
};

// Gaussian blobs carried by a smooth stationary velocity field plus their own
// motion, with exponential growth/decay, additive noise and clipping to
// [0,255]. Blobs that leave the domain or fade out are replaced. Values are
// rounded to float precision so FSEQ storage is lossless.
FrameSequence gen_synthetic(const SyntheticConfig& config);

// Velocity of the large-scale field at (x, y), px/h.
std::pair<double, double> advection_velocity(const SyntheticConfig& config, double x, double y);

// FSEQ: "FSEQ" | version u16 | frames u32 | height u32 | width u32 |
// start hour i64 | f32 values, row-major, frame-major (little-endian).
namespace fseq {
inline constexpr std::uint16_t kVersion = 1;
std::vector<char> encode(const FrameSequence& seq);
FrameSequence decode(const std::vector<char>& bytes);
}  // namespace fseq

void write_fseq(const FrameSequence& seq, const std::filesystem::path& path);
FrameSequence read_fseq(const std::filesystem::path& path);

// 8-bit grayscale PNG of a [1,H,W] (or [H,W]) grid: round(clamp(v, 0, 255)).
void write_png(const Grid& image, const std::filesystem::path& path);

}  // namespace mef
