#include "mef/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "mef/error.hpp"
#include "mef/ops.hpp"

namespace mef {

void PyramidSpec::validate() const {
  if (tile == 0 || levels == 0) throw InvalidArgument("pyramid: tile and levels must be >= 1");
  if (levels > 16 || base_size != tile << (levels - 1)) {
    throw InvalidArgument("pyramid: base size " + std::to_string(base_size) + " must equal tile " +
                          std::to_string(tile) + " * 2^(levels-1) with levels = " + std::to_string(levels));
  }
}

std::size_t PyramidSpec::level_size(std::size_t level) const {
  if (level >= levels) throw InvalidArgument("pyramid: no level " + std::to_string(level));
  return base_size >> level;
}

PyramidSpec PyramidSpec::from_sizes(std::size_t base_size, std::size_t tile) {
  if (tile == 0 || base_size < tile || base_size % tile != 0) {
    throw InvalidArgument("pyramid: base size " + std::to_string(base_size) + " is not a multiple of tile " +
                          std::to_string(tile));
  }
  std::size_t levels = 1;
  while ((tile << (levels - 1)) < base_size) ++levels;
  PyramidSpec spec{base_size, tile, levels};
  spec.validate();
  return spec;
}

std::vector<Grid> build_pyramid(const Grid& frame, const PyramidSpec& spec) {
  spec.validate();
  require_rank(frame, 3, "build_pyramid");
  if (frame.height() != spec.base_size || frame.width() != spec.base_size) {
    throw InvalidArgument("build_pyramid: frame is " + std::to_string(frame.height()) + "x" +
                          std::to_string(frame.width()) + ", spec base size is " + std::to_string(spec.base_size));
  }
  std::vector<Grid> levels{frame};
  for (std::size_t l = 1; l < spec.levels; ++l) levels.push_back(ops::pool_avg2(levels.back()));
  return levels;
}

std::pair<TileLayout, std::vector<Grid>> split_blocks(const Grid& frame, std::size_t tile) {
  require_rank(frame, 3, "split_blocks");
  const std::size_t c = frame.channels(), h = frame.height(), w = frame.width();
  if (tile == 0 || h % tile != 0 || w % tile != 0) {
    throw InvalidArgument("split_blocks: frame " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by tile " + std::to_string(tile));
  }
  const TileLayout layout{h / tile, w / tile, tile};
  std::vector<Grid> blocks;
  blocks.reserve(layout.count());
  for (std::size_t b = 0; b < layout.count(); ++b) {
    const auto [r, col] = layout.position(b);
    Grid block({c, tile, tile});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < tile; ++y) {
        const double* src = frame.row(ch, r * tile + y) + col * tile;
        std::copy(src, src + tile, block.row(ch, y));
      }
    blocks.push_back(std::move(block));
  }
  return {layout, std::move(blocks)};
}

Grid stitch_blocks(const TileLayout& layout, std::span<const Grid> blocks) {
  if (blocks.size() != layout.count() || blocks.empty()) {
    throw InvalidArgument("stitch_blocks: layout " + std::to_string(layout.rows) + "x" +
                          std::to_string(layout.cols) + " needs " + std::to_string(layout.count()) +
                          " blocks, got " + std::to_string(blocks.size()));
  }
  const std::size_t t = layout.tile;
  const std::size_t c = blocks[0].rank() == 3 ? blocks[0].channels() : 0;
  const Shape expected{c, t, t};
  Grid out({c, layout.rows * t, layout.cols * t});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].shape() != expected) {
      throw InvalidArgument("stitch_blocks: block " + std::to_string(b) + " is " + shape_string(blocks[b].shape()) +
                            ", expected " + shape_string(expected));
    }
    const auto [r, col] = layout.position(b);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < t; ++y) {
        const double* src = blocks[b].row(ch, y);
        std::copy(src, src + t, out.row(ch, r * t + y) + col * t);
      }
  }
  return out;
}

std::pair<Grid, Grid> predict_level(std::span<const Grid> inputs, std::span<const ConvLstm> models,
                                    const PyramidSpec& spec, std::size_t level) {
  spec.validate();
  const std::size_t tiles = spec.tile_count(level);
  if (models.size() != 1 && models.size() != tiles) {
    throw ConfigError("predict_level: level " + std::to_string(level) + " needs 1 shared or " +
                      std::to_string(tiles) + " per-position models, got " + std::to_string(models.size()));
  }
  if (inputs.empty()) throw InvalidArgument("predict_level: no input frames");

  std::vector<Grid> pooled;
  for (const auto& f : inputs) pooled.push_back(build_pyramid(f, spec)[level]);
  if (tiles == 1) return models[0].rollout2(pooled);

  // blocks[t][b]: frame t, block b
  std::vector<std::vector<Grid>> blocks;
  TileLayout layout;
  for (const auto& f : pooled) {
    auto [l, b] = split_blocks(f, spec.tile);
    layout = l;
    blocks.push_back(std::move(b));
  }
  std::vector<Grid> first(tiles), second(tiles);
  for (std::size_t b = 0; b < tiles; ++b) {
    std::vector<Grid> seq;
    for (const auto& frame_blocks : blocks) seq.push_back(frame_blocks[b]);
    auto [p1, p2] = models[models.size() == 1 ? 0 : b].rollout2(seq);
    first[b] = std::move(p1);
    second[b] = std::move(p2);
  }
  return {stitch_blocks(layout, first), stitch_blocks(layout, second)};
}

PyramidPrediction predict_multiscale(std::span<const Grid> inputs, std::span<const ConvLstm> models,
                                     const PyramidSpec& spec) {
  spec.validate();
  if (models.size() != spec.levels) {
    throw ConfigError("predict_multiscale: " + std::to_string(spec.levels) + " levels need one checkpoint each, got " +
                      std::to_string(models.size()));
  }
  PyramidPrediction out{spec, {}};
  for (std::size_t l = 0; l < spec.levels; ++l) {
    auto [p1, p2] = predict_level(inputs, models.subspan(l, 1), spec, l);
    out.leads[0].push_back(std::move(p1));
    out.leads[1].push_back(std::move(p2));
  }
  return out;
}

Grid fusion_input(const PyramidPrediction& prediction, std::size_t lead, bool noise, std::uint64_t seed) {
  if (lead != 1 && lead != 2) throw InvalidArgument("fusion_input: lead must be 1 or 2");
  const auto& spec = prediction.spec;
  const std::size_t levels = prediction.leads[lead - 1].size();
  if (levels == 0 || levels > spec.levels) {
    throw InvalidArgument("fusion_input: prediction holds " + std::to_string(levels) + " levels");
  }
  std::vector<Grid> channels;
  for (std::size_t l = 0; l < levels; ++l) {
    const Grid& level = prediction.at(lead, l);
    if (level.shape() != Shape{1, spec.level_size(l), spec.level_size(l)}) {
      throw InvalidArgument("fusion_input: level " + std::to_string(l) + " is " + shape_string(level.shape()));
    }
    channels.push_back(ops::upsample(level, std::size_t{1} << l, ops::Upsample::bilinear));
  }
  if (noise) {
    Grid z({1, spec.base_size, spec.base_size});
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& v : z.vec()) v = unit(rng);
    channels.push_back(std::move(z));
  }
  return concat_channels(channels);
}

std::vector<InputsTargets> level_samples(std::span<const InputsTargets> windows, const PyramidSpec& spec,
                                         std::size_t level, std::optional<std::size_t> position) {
  spec.validate();
  const std::size_t tiles = spec.tile_count(level);
  if (position && *position >= tiles) {
    throw InvalidArgument("level_samples: position " + std::to_string(*position) + " outside " +
                          std::to_string(tiles) + " tiles");
  }
  auto tiles_of = [&](const Grid& frame) { return split_blocks(build_pyramid(frame, spec)[level], spec.tile).second; };
  std::vector<InputsTargets> out;
  for (const auto& w : windows) {
    std::vector<std::vector<Grid>> in, tg;
    for (const auto& f : w.inputs) in.push_back(tiles_of(f));
    for (const auto& f : w.targets) tg.push_back(tiles_of(f));
    for (std::size_t b = 0; b < tiles; ++b) {
      if (position && b != *position) continue;
      InputsTargets s;
      for (auto& f : in) s.inputs.push_back(std::move(f[b]));
      for (auto& f : tg) s.targets.push_back(std::move(f[b]));
      out.push_back(std::move(s));
    }
  }
  return out;
}

SeamJump seam_jump(const Grid& image, std::size_t tile) {
  require_rank(image, 3, "seam_jump");
  const std::size_t h = image.height(), w = image.width();
  if (tile == 0 || h % tile != 0 || w % tile != 0) {
    throw InvalidArgument("seam_jump: image " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by tile " + std::to_string(tile));
  }
  SeamJump out;
  std::size_t n = 0;
  auto visit = [&](double a, double b) {
    const double d = std::abs(a - b);
    out.max = std::max(out.max, d);
    out.mean += d;
    ++n;
  };
  for (std::size_t c = 0; c < image.channels(); ++c) {
    for (std::size_t x = tile; x < w; x += tile)
      for (std::size_t y = 0; y < h; ++y) visit(image.at(c, y, x), image.at(c, y, x - 1));
    for (std::size_t y = tile; y < h; y += tile)
      for (std::size_t x = 0; x < w; ++x) visit(image.at(c, y, x), image.at(c, y - 1, x));
  }
  if (n) out.mean /= static_cast<double>(n);
  return out;
}

}  // namespace mef
