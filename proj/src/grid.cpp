#include "mef/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mef/error.hpp"

namespace mef {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Grid::Grid(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Grid::Grid(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw InvalidArgument("grid: shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
  }
}

Grid Grid::reshaped(Shape shape) const { return Grid(std::move(shape), data_); }

double Grid::item() const {
  if (data_.size() != 1) throw InvalidArgument("grid: item() on " + shape_string(shape_));
  return data_[0];
}

double Grid::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Grid::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

double Grid::min() const { return *std::min_element(data_.begin(), data_.end()); }

double Grid::max() const { return *std::max_element(data_.begin(), data_.end()); }

bool Grid::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Grid::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                          " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Grid& g, std::size_t rank, const char* what) {
  if (g.rank() != rank) {
    throw InvalidArgument(std::string(what) + ": expected rank " + std::to_string(rank) +
                          ", got " + shape_string(g.shape()));
  }
}

Grid concat_channels(std::span<const Grid> parts) {
  if (parts.empty()) throw InvalidArgument("concat_channels: no inputs");
  const auto& first = parts.front();
  require_rank(first, 3, "concat_channels");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.height() != first.height() || p.width() != first.width()) {
      throw InvalidArgument("concat_channels: spatial mismatch " + shape_string(p.shape()) +
                            " vs " + shape_string(first.shape()));
    }
    channels += p.channels();
  }
  std::vector<double> data;
  data.reserve(channels * first.height() * first.width());
  for (const auto& p : parts) data.insert(data.end(), p.vec().begin(), p.vec().end());
  return Grid({channels, first.height(), first.width()}, std::move(data));
}

Grid slice_channels(const Grid& g, std::size_t begin, std::size_t count) {
  require_rank(g, 3, "slice_channels");
  if (begin + count > g.channels() || count == 0) {
    throw InvalidArgument("slice_channels: range [" + std::to_string(begin) + "," +
                          std::to_string(begin + count) + ") outside " + shape_string(g.shape()));
  }
  const std::size_t plane = g.height() * g.width();
  auto first = g.vec().begin() + static_cast<std::ptrdiff_t>(begin * plane);
  return Grid({count, g.height(), g.width()},
              std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * plane)));
}

}  // namespace mef
