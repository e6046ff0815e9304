#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mef/convlstm.hpp"
#include "mef/dataset.hpp"
#include "mef/grid.hpp"

namespace mef {

/// Level l (0 = full size) has side base_size / 2^l; the coarsest level
/// (levels - 1) has side `tile`.
struct PyramidSpec {
  std::size_t base_size = 256;
  std::size_t tile = 64;
  std::size_t levels = 3;

  void validate() const;
  std::size_t level_size(std::size_t level) const;
  std::size_t tiles_per_side(std::size_t level) const { return level_size(level) / tile; }
  std::size_t tile_count(std::size_t level) const { return tiles_per_side(level) * tiles_per_side(level); }

  // Levels implied by S / 2^(L-1) = T.
  static PyramidSpec from_sizes(std::size_t base_size, std::size_t tile);
};

struct TileLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t tile = 0;

  std::size_t count() const noexcept { return rows * cols; }
  // Row-major: block b sits at (b / cols, b % cols).
  std::pair<std::size_t, std::size_t> position(std::size_t block) const { return {block / cols, block % cols}; }
};

// Level 0 is the frame itself, each further level one more 2x2 average pool.
std::vector<Grid> build_pyramid(const Grid& frame, const PyramidSpec& spec);

std::pair<TileLayout, std::vector<Grid>> split_blocks(const Grid& frame, std::size_t tile);
Grid stitch_blocks(const TileLayout& layout, std::span<const Grid> blocks);

/// Per lead time (index 0 = +1 h, 1 = +2 h), one frame per level in (0,1).
/// May hold only the first few (finest) levels of the spec.
struct PyramidPrediction {
  PyramidSpec spec;
  std::array<std::vector<Grid>, 2> leads;

  const Grid& at(std::size_t lead, std::size_t level) const { return leads.at(lead - 1).at(level); }
};

// Rollout of one level: pool the unit-range inputs to the level, predict every
// tile position and stitch. `models` holds one shared model or one per tile
// position (row-major).
std::pair<Grid, Grid> predict_level(std::span<const Grid> inputs, std::span<const ConvLstm> models,
                                    const PyramidSpec& spec, std::size_t level);

// `models[l]` serves level l with a shared model.
PyramidPrediction predict_multiscale(std::span<const Grid> inputs, std::span<const ConvLstm> models,
                                     const PyramidSpec& spec);

// [L(+1), S, S]: each predicted level bilinearly upsampled to full size, fine
// to coarse, then an optional unit-Gaussian noise channel drawn from `seed`.
Grid fusion_input(const PyramidPrediction& prediction, std::size_t lead, bool noise, std::uint64_t seed);

// Training samples for one level: every window is pooled to the level and
// each tile position becomes a sample. With `position` set, only that tile.
std::vector<InputsTargets> level_samples(std::span<const InputsTargets> windows, const PyramidSpec& spec,
                                         std::size_t level, std::optional<std::size_t> position = {});

// Largest and mean absolute intensity step across the internal tile seams.
struct SeamJump {
  double max = 0.0;
  double mean = 0.0;
};
SeamJump seam_jump(const Grid& image, std::size_t tile);

}  // namespace mef
